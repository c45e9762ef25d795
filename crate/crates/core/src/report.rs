//! Report rendering: grayscale rasters of value-function slices with a
//! zero-level contour, and top-down trajectory overlays. Images are binary
//! PGM (P5), which any image viewer opens and tests can parse in a few
//! lines.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::levelset::GridValue;
use crate::plant::Trajectory;

/// Write a binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

/// Parse a binary PGM produced by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| crate::error::Error::Format {
            path: path.to_path_buf(),
            detail: "missing PGM header".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| {
        crate::error::Error::Format { path: path.to_path_buf(), detail: "bad header".into() }
    })?;
    let mut parts = header.split_ascii_whitespace();
    let magic = parts.next();
    if magic != Some("P5") {
        return Err(crate::error::Error::Format {
            path: path.to_path_buf(),
            detail: "not a P5 PGM".into(),
        });
    }
    let width: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let height: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok((width, height, bytes[header_end + 1..].to_vec()))
}

/// Extract the (px, theta) slice of a value table at the py node closest to
/// `py`. Returns (px_count, theta_count, row-major values with theta rows).
pub fn value_slice(gv: &GridValue, py: f64) -> (usize, usize, Vec<f64>) {
    let spec = &gv.spec;
    let j = (((py - spec.py.min) / spec.py.step()).round() as usize).min(spec.py.count - 1);
    let (w, h) = (spec.px.count, spec.theta.count);
    let mut out = Vec::with_capacity(w * h);
    for k in 0..h {
        for i in 0..w {
            out.push(gv.values[spec.index(i, j, k)] as f64);
        }
    }
    (w, h, out)
}

/// Rasterize a slice: values mapped to gray [16, 239], sub-zero pixels on
/// the zero-level boundary painted white (255).
pub fn slice_raster(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-12);
    let mut pixels: Vec<u8> =
        values.iter().map(|&v| (16.0 + 223.0 * (v - lo) / span).round() as u8).collect();
    for row in 0..height {
        for col in 0..width {
            let idx = row * width + col;
            if values[idx] > 0.0 {
                continue;
            }
            let mut boundary = false;
            if col > 0 && values[idx - 1] > 0.0 {
                boundary = true;
            }
            if col + 1 < width && values[idx + 1] > 0.0 {
                boundary = true;
            }
            if row > 0 && values[idx - width] > 0.0 {
                boundary = true;
            }
            if row + 1 < height && values[idx + width] > 0.0 {
                boundary = true;
            }
            if boundary {
                pixels[idx] = 255;
            }
        }
    }
    pixels
}

/// Columns containing zero-contour pixels of a rasterized slice.
pub fn contour_columns(width: usize, height: usize, pixels: &[u8]) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..width)
        .filter(|&c| (0..height).any(|r| pixels[r * width + c] == 255))
        .collect();
    cols.dedup();
    cols
}

/// Mean absolute difference between two equally-shaped slices.
pub fn slice_mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Top-down runway map with trajectories overlaid (white). The raster spans
/// px in [-px_max, px_max] horizontally and py in [py_min, py_max]
/// vertically; runway surface, off-runway terrain, and the centerline are
/// shaded for orientation.
pub fn trajectory_overlay(
    px_max: f64,
    py_min: f64,
    py_max: f64,
    half_width: f64,
    width: usize,
    height: usize,
    trajectories: &[&Trajectory],
) -> Vec<u8> {
    let mut pixels = vec![0u8; width * height];
    for row in 0..height {
        for col in 0..width {
            let px = -px_max + 2.0 * px_max * col as f64 / (width - 1) as f64;
            pixels[row * width + col] = if px.abs() > half_width {
                40
            } else if px.abs() < 0.02 * px_max {
                200
            } else {
                100
            };
        }
    }
    for traj in trajectories {
        for s in &traj.samples {
            let col = ((s.state.px + px_max) / (2.0 * px_max) * (width - 1) as f64).round();
            let row = ((s.state.py - py_min) / (py_max - py_min) * (height - 1) as f64).round();
            if col >= 0.0 && row >= 0.0 && (col as usize) < width && (row as usize) < height {
                // Image rows grow downward; flip so py grows upward.
                let r = height - 1 - row as usize;
                pixels[r * width + col as usize] = 255;
            }
        }
    }
    pixels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{solve_hjbvi, zero_policy, GridSpec};
    use crate::plant::PlantConfig;
    use crate::sensor::{Cloud, EnvParams, TimeOfDay};
    use tempfile::tempdir;

    #[test]
    fn pgm_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let pixels: Vec<u8> = (0..12 * 7).map(|i| (i % 251) as u8).collect();
        write_pgm(&path, 12, 7, &pixels).unwrap();
        let (w, h, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (12, 7));
        assert_eq!(back, pixels);
    }

    #[test]
    fn signed_distance_slice_contour_is_two_vertical_lines() {
        let spec = GridSpec::default();
        let cfg = PlantConfig::default();
        let env = EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 0);
        let gv = solve_hjbvi(&spec, &zero_policy(&spec, &env), &cfg, 0.0).unwrap();
        let (w, h, values) = value_slice(&gv, 110.0);
        assert_eq!((w, h), (spec.px.count, spec.theta.count));
        let raster = slice_raster(w, h, &values);
        let cols = contour_columns(w, h, &raster);
        // l(x) = 10 - |px| on px in [-15, 15] x 101: the innermost sub-zero
        // columns sit at px = -10.2 and +10.2.
        assert_eq!(cols, vec![16, 84]);
        for &c in &cols {
            assert!((0..h).all(|r| raster[r * w + c] == 255), "contour column {c} not full height");
        }
    }

    #[test]
    fn overlay_paints_trajectory_points() {
        use crate::plant::{rollout, Command, ControlInput, State};
        let cfg = PlantConfig::default();
        let mut law = |_x: &State, _t: f64| Ok(Command { u: ControlInput(0.0), v: 5.0 });
        let traj = rollout(&State::new(3.0, 100.0, 0.0), &mut law, 5.0, &cfg).unwrap();
        let img = trajectory_overlay(15.0, 100.0, 250.0, 10.0, 64, 64, &[&traj]);
        assert!(img.iter().any(|&p| p == 255));
    }
}
