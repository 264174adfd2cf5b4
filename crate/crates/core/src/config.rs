//! Bundled solver configuration.

use crate::ogden::{CouplingParams, OgdenParams};
use crate::potts::AdmmSchedule;

/// Everything the alternating scheme needs: stored-energy weights,
/// couplings/box bounds/iteration plumbing, the Potts splitting schedule,
/// and a couple of optional knobs.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub ogden: OgdenParams,
    pub coupling: CouplingParams,
    pub admm: AdmmSchedule,
    /// Inner gradient-flow steps per outer iteration.
    pub flow_steps: usize,
    /// Optional early exit on relative energy stagnation.
    pub energy_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            ogden: OgdenParams::default(),
            coupling: CouplingParams::default(),
            admm: AdmmSchedule::default(),
            flow_steps: 1,
            energy_tol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let c = &self.coupling;
        let checks = [
            (self.ogden.a1 > 0.0, "a1 must be > 0"),
            (self.ogden.a2 > 0.0, "a2 must be > 0"),
            (self.ogden.a3 > 0.0, "a3 must be > 0"),
            (c.alpha >= 1.0, "alpha must be >= 1"),
            (c.beta >= 1.0, "beta must be >= 1"),
            (c.step_c > 0.0, "step_c must be > 0"),
            (c.dt > 0.0, "dt must be > 0"),
            (c.gamma_t >= 0.0, "gammaT must be >= 0"),
            (c.gamma_r >= 0.0, "gammaR must be >= 0"),
            (c.gamma_t_tilde >= 0.0, "gammaTtilde must be >= 0"),
            (c.seg_cadence >= 1, "seg_cadence must be >= 1"),
            (self.admm.growth > 1.0, "admm growth must be > 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(crate::CoreError::Config(msg.into()));
            }
        }
        Ok(())
    }
}
