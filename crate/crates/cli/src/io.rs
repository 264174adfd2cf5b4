//! Dataset ingestion and artifact serialization.
//!
//! Images come in as PGM (P2/P5) or 8/16-bit grayscale PNG and are
//! normalized to [0, 1] by their bit depth (a PGM maxval of m maps m to
//! 1.0, so 255 in an 8-bit file is exactly 1.0). Raster artifacts go out as
//! min-max-rescaled 8-bit PNGs; exact values travel in raw little-endian
//! f32 sidecars with a one-line text header.

use crate::error::{CliError, Result};
use atlasforge_core::{ScalarGrid, VectorGrid};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Load all PGM/PNG images from a directory in lexicographic order,
/// normalized to [0, 1].
pub fn ingest(dir: &Path) -> Result<(Vec<ScalarGrid>, Vec<PathBuf>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read input directory {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref ext) if ext == "pgm" || ext == "png"
            )
        })
        .collect();
    paths.sort();

    if paths.len() < 2 {
        return Err(CliError::Data(format!(
            "need at least 2 grayscale images in {}, found {}",
            dir.display(),
            paths.len()
        )));
    }

    let mut grids = Vec::with_capacity(paths.len());
    let mut first: Option<(usize, usize, PathBuf)> = None;
    for p in &paths {
        let g = load_image(p)?;
        if let Some((w, h, ref witness)) = first {
            if g.width() != w || g.height() != h {
                return Err(CliError::Data(format!(
                    "size mismatch: {} is {}x{} but {} is {}x{}",
                    witness.display(),
                    w,
                    h,
                    p.display(),
                    g.width(),
                    g.height()
                )));
            }
        } else {
            first = Some((g.width(), g.height(), p.clone()));
        }
        grids.push(g);
    }
    Ok((grids, paths))
}

fn load_image(path: &Path) -> Result<ScalarGrid> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => load_pgm(path),
        "png" => load_png(path),
        _ => Err(CliError::Data(format!("unsupported format: {}", path.display()))),
    }
}

/// P2/P5 PGM reader; values divide by the declared maxval.
fn load_pgm(path: &Path) -> Result<ScalarGrid> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: &str| CliError::Data(format!("{}: {msg}", path.display()));

    // Header tokens: magic, width, height, maxval; comments start with '#'.
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos > start {
            tokens.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| bad("invalid header"))?
                    .to_string(),
            );
        }
    }
    if tokens.len() < 4 {
        return Err(bad("truncated header"));
    }
    let magic = tokens[0].as_str();
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if width < 2 || height < 2 {
        return Err(bad("image must be at least 2x2"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    let scale = 1.0 / maxval as f64;
    let n = width * height;

    let data: Vec<f64> = match magic {
        "P5" => {
            pos += 1; // single whitespace after maxval
            if maxval < 256 {
                if bytes.len() < pos + n {
                    return Err(bad("truncated pixel data"));
                }
                bytes[pos..pos + n].iter().map(|&b| b as f64 * scale).collect()
            } else {
                if bytes.len() < pos + 2 * n {
                    return Err(bad("truncated pixel data"));
                }
                (0..n)
                    .map(|i| {
                        u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as f64
                            * scale
                    })
                    .collect()
            }
        }
        "P2" => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("invalid ascii data"))?;
            let vals: Vec<f64> = text
                .split_whitespace()
                .take(n)
                .map(|t| t.parse::<f64>().map(|v| v * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad ascii pixel"))?;
            if vals.len() < n {
                return Err(bad("truncated pixel data"));
            }
            vals
        }
        _ => return Err(bad("not a P2/P5 PGM")),
    };
    Ok(ScalarGrid::from_vec(width, height, data))
}

fn load_png(path: &Path) -> Result<ScalarGrid> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("cannot decode {}: {e}", path.display())))?;
    let gray = img.to_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w < 2 || h < 2 {
        return Err(CliError::Data(format!(
            "{}: image must be at least 2x2",
            path.display()
        )));
    }
    // 8-bit samples are widened by *257, so 255 maps to exactly 1.0.
    let data: Vec<f64> = gray.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    Ok(ScalarGrid::from_vec(w, h, data))
}

/// Min-max rescale to 8 bits and write a grayscale PNG.
pub fn write_png(path: &Path, grid: &ScalarGrid) -> Result<()> {
    let (lo, hi) = grid.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::GrayImage::new(grid.width() as u32, grid.height() as u32);
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            let v = ((grid.get(x, y) - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_raw(path: &Path, width: usize, height: usize, components: usize, planes: &[&[f64]]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * width * height * components);
    for plane in planes {
        for &v in *plane {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, &buf)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let hdr = path.with_extension("hdr");
    let mut f = fs::File::create(&hdr)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", hdr.display())))?;
    writeln!(f, "{width} {height} components={components}")
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", hdr.display())))?;
    Ok(())
}

/// Raw little-endian f32 scalar raster with text sidecar header.
pub fn write_scalar_raw(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write_raw(path, grid.width(), grid.height(), 1, &[grid.data()])
}

/// Raw little-endian f32 vector field: first component plane, then second.
pub fn write_field_raw(path: &Path, field: &VectorGrid) -> Result<()> {
    write_raw(path, field.width(), field.height(), 2, &[&field.u1, &field.u2])
}

fn read_raw(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let hdr_path = path.with_extension("hdr");
    let hdr = fs::read_to_string(&hdr_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", hdr_path.display())))?;
    let tokens: Vec<&str> = hdr.split_whitespace().collect();
    let bad = || CliError::Data(format!("{}: malformed header", hdr_path.display()));
    if tokens.len() != 3 {
        return Err(bad());
    }
    let width: usize = tokens[0].parse().map_err(|_| bad())?;
    let height: usize = tokens[1].parse().map_err(|_| bad())?;
    let components: usize = tokens[2]
        .strip_prefix("components=")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;

    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let expect = 4 * width * height * components;
    if bytes.len() != expect {
        return Err(CliError::Data(format!(
            "{}: expected {expect} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((width, height, components, vals))
}

pub fn read_scalar_raw(path: &Path) -> Result<ScalarGrid> {
    let (w, h, comps, vals) = read_raw(path)?;
    if comps != 1 {
        return Err(CliError::Data(format!(
            "{}: expected 1 component, found {comps}",
            path.display()
        )));
    }
    Ok(ScalarGrid::from_vec(w, h, vals.into_iter().map(|v| v as f64).collect()))
}

pub fn read_field_raw(path: &Path) -> Result<VectorGrid> {
    let (w, h, comps, vals) = read_raw(path)?;
    if comps != 2 {
        return Err(CliError::Data(format!(
            "{}: expected 2 components, found {comps}",
            path.display()
        )));
    }
    let n = w * h;
    let mut field = VectorGrid::zeros(w, h);
    for i in 0..n {
        field.u1[i] = vals[i] as f64;
        field.u2[i] = vals[n + i] as f64;
    }
    Ok(field)
}
