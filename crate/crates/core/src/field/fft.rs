//! Unitary 2-D DFT on square grids.
//!
//! Both directions scale by `1/m`, so `fft2` preserves the l2 norm and
//! `ifft2(fft2(x)) == x` up to round-off. Intensities stored in datasets
//! follow this convention.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::ComplexField;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if forward {
            p.plan_fft_forward(len)
        } else {
            p.plan_fft_inverse(len)
        }
    })
}

fn transpose_square(data: &mut [Complex64], m: usize) {
    for r in 0..m {
        for c in r + 1..m {
            data.swap(r * m + c, c * m + r);
        }
    }
}

fn transform(x: &ComplexField, forward: bool) -> Result<ComplexField> {
    if !x.is_square() {
        return Err(Error::shape(format!("fft2 needs a square grid, got {}x{}", x.rows(), x.cols())));
    }
    let m = x.rows();
    let fft = plan(m, forward);
    let mut out = x.clone();
    let data = out.as_mut_slice();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    // rows, then columns via transpose
    fft.process_with_scratch(data, &mut scratch);
    transpose_square(data, m);
    fft.process_with_scratch(data, &mut scratch);
    transpose_square(data, m);

    let scale = 1.0 / m as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

/// Forward unitary 2-D DFT.
pub fn fft2(x: &ComplexField) -> Result<ComplexField> {
    transform(x, true)
}

/// Inverse unitary 2-D DFT.
pub fn ifft2(y: &ComplexField) -> Result<ComplexField> {
    transform(y, false)
}
