//! Reconstruction quality metrics and phase post-processing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{ensure_same_shape, principal_arg, wrap_angle, ComplexField, Grid, RealField};

/// One logged point of a reconstruction run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub iter: usize,
    /// Full exit-wave misfit after the sweep.
    pub residual: f64,
    /// `|| |z| - |z*| ||_2`, when the truth is known.
    pub mag_error: Option<f64>,
    pub elapsed_s: f64,
}

/// `|| |z| - |z*| ||_2`. Blind to any phase, global or local.
pub fn magnitude_error(z: &ComplexField, z_truth: &ComplexField) -> Result<f64> {
    ensure_same_shape(z, z_truth)?;
    Ok(z.iter()
        .zip(z_truth.iter())
        .map(|(a, b)| {
            let d = a.norm() - b.norm();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Wrapped phase minus its circular mean, re-wrapped to `(-pi, pi]`.
///
/// The mean is the argument of the average unit phasor over nonzero
/// pixels. A field with no nonzero pixel, or whose phasors cancel, is
/// returned with its raw phases (all zeros for a zero field).
pub fn demean_phase(z: &ComplexField) -> RealField {
    let mut acc = Complex64::new(0.0, 0.0);
    for v in z.iter() {
        let r = v.norm();
        if r > 0.0 {
            acc += v / r;
        }
    }
    let mean = if acc.norm() > 0.0 { principal_arg(acc) } else { 0.0 };
    z.map(|v| wrap_angle(principal_arg(v) - mean))
}

/// Least-squares plane fit `a x + b y + c` of the wrapped phase, with `x`
/// the column index and `y` the row index; returns `(a, b, c)`.
///
/// Coordinates are centered, which makes the three basis functions
/// orthogonal on a full grid and the fit closed-form.
pub fn fit_phase_plane(z: &ComplexField) -> (f64, f64, f64) {
    let (rows, cols) = z.shape();
    let xc = (cols as f64 - 1.0) / 2.0;
    let yc = (rows as f64 - 1.0) / 2.0;
    let (mut sxx, mut syy, mut sx, mut sy, mut s) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            let x = c as f64 - xc;
            let y = r as f64 - yc;
            let t = principal_arg(z[(r, c)]);
            sxx += x * x;
            syy += y * y;
            sx += t * x;
            sy += t * y;
            s += t;
        }
    }
    let a = if sxx > 0.0 { sx / sxx } else { 0.0 };
    let b = if syy > 0.0 { sy / syy } else { 0.0 };
    let n = (rows * cols) as f64;
    let c = if n > 0.0 { s / n - a * xc - b * yc } else { 0.0 };
    (a, b, c)
}

/// Removes the fitted linear phase ramp `a x + b y`, keeping the offset.
///
/// Returns `(|z|, phase)` with the magnitude copied bit for bit. The fit
/// uses the wrapped phase directly, so wraps inside the crop bias it. A
/// single pixel keeps its phase.
pub fn remove_phase_ramp_polar(z_crop: &ComplexField) -> (RealField, RealField) {
    let (a, b, _) = fit_phase_plane(z_crop);
    let (rows, cols) = z_crop.shape();
    let xc = (cols as f64 - 1.0) / 2.0;
    let yc = (rows as f64 - 1.0) / 2.0;
    let phase =
        Grid::from_fn(rows, cols, |r, c| principal_arg(z_crop[(r, c)]) - a * (c as f64 - xc) - b * (r as f64 - yc));
    (z_crop.abs(), phase)
}

/// [`remove_phase_ramp_polar`] reassembled as `|z| exp(i (theta - a x - b y))`.
///
/// Magnitudes agree with the input to a few ulps; use the polar form when
/// they must be bit-identical.
pub fn remove_phase_ramp(z_crop: &ComplexField) -> ComplexField {
    let (mag, phase) = remove_phase_ramp_polar(z_crop);
    ComplexField::from_polar(&mag, &phase).expect("same shape")
}

/// Square crop `[r0, r0 + side) x [c0, c0 + side)`.
pub fn crop(z: &ComplexField, r0: usize, c0: usize, side: usize) -> Result<ComplexField> {
    if r0 + side > z.rows() || c0 + side > z.cols() {
        return Err(crate::Error::shape(format!("crop {side} at ({r0}, {c0}) exceeds {}x{}", z.rows(), z.cols())));
    }
    Ok(Grid::from_fn(side, side, |r, c| z[(r0 + r, c0 + c)]))
}
