//! Rainbow rendering of scalar fields as plain (P3) portable pixmaps.
//!
//! Values are normalized per image to `[0, 1]` and the hue is quantized to 256 levels
//! over `[0, 1]` with saturation and value fixed at 1. A constant field renders at hue 0.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use darcy_smc::Error;

pub const HUE_LEVELS: usize = 256;

/// Quantized hue level of every value.
pub fn hue_levels(values: &[f64]) -> Result<Vec<u8>, Error> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "cannot render non-finite field values".into(),
        ));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(values
        .iter()
        .map(|v| {
            if span > 0.0 {
                let t = (v - lo) / span;
                (t * (HUE_LEVELS - 1) as f64).round() as u8
            } else {
                0
            }
        })
        .collect())
}

/// HSV with `s = v = 1`; `h ∈ [0, 1]` wraps at 1.
pub fn hue_to_rgb(h: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u8 % 6;
    let f = h6 - h6.floor();
    let up = (255.0 * f).round() as u8;
    let down = 255 - up;
    match sector {
        0 => [255, up, 0],
        1 => [down, 255, 0],
        2 => [0, 255, up],
        3 => [0, down, 255],
        4 => [up, 0, 255],
        _ => [255, 0, down],
    }
}

pub fn level_to_rgb(level: u8) -> [u8; 3] {
    hue_to_rgb(f64::from(level) / (HUE_LEVELS - 1) as f64)
}

/// Writes a `p × p` field given row-major with axis 0 (x₁) slowest. Image columns follow
/// x₁ left to right and rows follow x₂ from top (largest) to bottom.
pub fn write_ppm(path: &Path, p: usize, values: &[f64]) -> Result<(), Error> {
    if values.len() != p * p || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values cannot fill a {p} x {p} image",
            values.len()
        )));
    }
    let levels = hue_levels(values)?;
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    write!(out, "P3\n{p} {p}\n255\n").map_err(io)?;
    for row in 0..p {
        let j = p - 1 - row;
        for i in 0..p {
            let [r, g, b] = level_to_rgb(levels[i * p + j]);
            writeln!(out, "{r} {g} {b}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}
