//! Flat `key = value` run configuration.
//!
//! Keys are the romanized parameter symbols (`a1`, `gammaT`, `lambdaR`,
//! ...) so published parameter rows paste directly. Unset keys keep their
//! defaults; unknown keys are an error.

use crate::error::{CliError, Result};
use atlasforge_core::dmspline::SplineConfig;
use atlasforge_core::SolverConfig;
use std::fmt;
use std::path::Path;

/// Everything a run needs: the solver parameters, the spline stage, and
/// the PCA/visualization knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub spline: SplineConfig,
    pub num_modes: usize,
    pub mode_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverConfig::default(),
            spline: SplineConfig::default(),
            num_modes: 4,
            mode_scale: 50.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|m| {
                CliError::Config(format!("{}:{}: {m}", path.display(), lineno + 1))
            })?;
        }
        cfg.solver
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let f = || -> std::result::Result<f64, String> {
            value
                .parse::<f64>()
                .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
        };
        let u = || -> std::result::Result<usize, String> {
            value
                .parse::<usize>()
                .map_err(|_| format!("`{key}` expects a nonnegative integer, got `{value}`"))
        };
        let c = &mut self.solver.coupling;
        match key {
            "a1" => self.solver.ogden.a1 = f()?,
            "a2" => self.solver.ogden.a2 = f()?,
            "a3" => self.solver.ogden.a3 = f()?,
            "gamma1" => c.gamma1 = f()?,
            "gamma2" => c.gamma2 = f()?,
            "gamma3" => c.gamma3 = f()?,
            "alpha" => c.alpha = f()?,
            "beta" => c.beta = f()?,
            "gammaR" => c.gamma_r = f()?,
            "gammaT" => c.gamma_t = f()?,
            "gammaTtilde" => c.gamma_t_tilde = f()?,
            "lambdaT" => c.lambda_t = f()?,
            "lambdaR" => c.lambda_r = f()?,
            "dt" => c.dt = f()?,
            "nbIter" => c.nb_iter = u()?,
            "step_c" => c.step_c = f()?,
            "seg_cadence" => c.seg_cadence = u()?,
            "flow_steps" => self.solver.flow_steps = u()?.max(1),
            "energy_tol" => self.solver.energy_tol = Some(f()?),
            "epsilon" => self.spline.epsilon = f()?,
            "gamma_fit" => self.spline.gamma_fit = f()?,
            "cells_x" => self.spline.cells_x = u()?,
            "cells_y" => self.spline.cells_y = u()?,
            "num_modes" => self.num_modes = u()?,
            "mode_scale" => self.mode_scale = f()?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

/// Snapshot in the same `key = value` shape, for the manifest.
impl fmt::Display for RunConfig {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.solver.ogden;
        let c = &self.solver.coupling;
        writeln!(out, "config.a1 = {}", o.a1)?;
        writeln!(out, "config.a2 = {}", o.a2)?;
        writeln!(out, "config.a3 = {}", o.a3)?;
        writeln!(out, "config.gamma1 = {}", c.gamma1)?;
        writeln!(out, "config.gamma2 = {}", c.gamma2)?;
        writeln!(out, "config.gamma3 = {}", c.gamma3)?;
        writeln!(out, "config.alpha = {}", c.alpha)?;
        writeln!(out, "config.beta = {}", c.beta)?;
        writeln!(out, "config.gammaR = {}", c.gamma_r)?;
        writeln!(out, "config.gammaT = {}", c.gamma_t)?;
        writeln!(out, "config.gammaTtilde = {}", c.gamma_t_tilde)?;
        writeln!(out, "config.lambdaT = {}", c.lambda_t)?;
        writeln!(out, "config.lambdaR = {}", c.lambda_r)?;
        writeln!(out, "config.dt = {}", c.dt)?;
        writeln!(out, "config.nbIter = {}", c.nb_iter)?;
        writeln!(out, "config.step_c = {}", c.step_c)?;
        writeln!(out, "config.seg_cadence = {}", c.seg_cadence)?;
        writeln!(out, "config.flow_steps = {}", self.solver.flow_steps)?;
        writeln!(out, "config.epsilon = {}", self.spline.epsilon)?;
        writeln!(out, "config.gamma_fit = {}", self.spline.gamma_fit)?;
        writeln!(out, "config.cells_x = {}", self.spline.cells_x)?;
        writeln!(out, "config.cells_y = {}", self.spline.cells_y)?;
        writeln!(out, "config.num_modes = {}", self.num_modes)?;
        writeln!(out, "config.mode_scale = {}", self.mode_scale)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_paper_style_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# T-shape row").unwrap();
        writeln!(f, "a1 = 1").unwrap();
        writeln!(f, "a2 = 5e3").unwrap();
        writeln!(f, "gammaR = 3").unwrap();
        writeln!(f, "nbIter = 100  # outer iterations").unwrap();
        let cfg = RunConfig::load(f.path()).unwrap();
        assert_eq!(cfg.solver.ogden.a2, 5e3);
        assert_eq!(cfg.solver.coupling.gamma_r, 3.0);
        assert_eq!(cfg.solver.coupling.nb_iter, 100);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bogus = 7").unwrap();
        assert!(matches!(RunConfig::load(f.path()), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_range_is_config_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "alpha = 0.5").unwrap();
        assert!(matches!(RunConfig::load(f.path()), Err(CliError::Config(_))));
    }
}
