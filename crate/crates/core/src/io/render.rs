//! PNG renderings. Presentation only: nothing here feeds back into arrays.
//!
//! Magnitudes map linearly to gray between the field's minimum and
//! maximum. Phases use a cyclic HSV hue wheel over `(-pi, pi]`, red at 0.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::Result;
use crate::field::{ComplexField, RealField};
use crate::metrics::demean_phase;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn gray_image(f: &RealField) -> GrayImage {
    let lo = f.min();
    let hi = f.max();
    let span = hi - lo;
    GrayImage::from_fn(f.cols() as u32, f.rows() as u32, |x, y| {
        let v = f[(y as usize, x as usize)];
        Luma([if span > 0.0 { to_u8((v - lo) / span) } else { 0 }])
    })
}

/// HSV with full saturation and value; `hue` in turns.
fn hue_rgb(hue: f64) -> [u8; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [to_u8(r), to_u8(g), to_u8(b)]
}

pub fn phase_image(phase: &RealField) -> RgbImage {
    RgbImage::from_fn(phase.cols() as u32, phase.rows() as u32, |x, y| {
        Rgb(hue_rgb(phase[(y as usize, x as usize)] / (2.0 * PI)))
    })
}

pub fn save_gray(path: &Path, f: &RealField) -> Result<()> {
    gray_image(f).save(path)?;
    Ok(())
}

pub fn save_phase(path: &Path, phase: &RealField) -> Result<()> {
    phase_image(phase).save(path)?;
    Ok(())
}

/// Writes `{prefix}_mag.png` and `{prefix}_phase.png` (demeaned phase).
pub fn save_complex(dir: &Path, prefix: &str, f: &ComplexField) -> Result<()> {
    save_gray(&dir.join(format!("{prefix}_mag.png")), &f.abs())?;
    save_phase(&dir.join(format!("{prefix}_phase.png")), &demean_phase(f))
}

/// Error maps against the truth: `| |z| - |z*| |` in gray and the wrapped
/// difference of demeaned phases on the cyclic map.
pub fn save_error_maps(dir: &Path, prefix: &str, z: &ComplexField, truth: &ComplexField) -> Result<()> {
    let mag = z.abs().zip_map(&truth.abs(), |a, b| (a - b).abs())?;
    save_gray(&dir.join(format!("{prefix}_mag_error.png")), &mag)?;
    let dp = demean_phase(z).zip_map(&demean_phase(truth), |a, b| crate::field::wrap_angle(a - b))?;
    save_phase(&dir.join(format!("{prefix}_phase_error.png")), &dp)
}
