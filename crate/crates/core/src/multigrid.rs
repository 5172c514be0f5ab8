//! Two-grid (and recursive multigrid) object step for the region surrogate.
//!
//! Restriction is the 2x2 block average and prolongation is piecewise
//! constant replication, so `restrict(prolong(x)) == x` and
//! `prolong == 4 restrict^T`. The coarse problem is built from weighted
//! restrictions of the fine terms:
//!
//! ```text
//! W_z  = |Q|^2 / P R |Q|^2
//! W_R  = (P Q_H) . W_z / Q
//! W_u  = |Q_H|^2 / R |Q|^2
//!
//! Q_H = R Q,  z_H = R (W_z . z),  R_H = R (W_R . R_k),  u_H = W_u . R u
//! ```
//!
//! A coarse proximal step produces a correction that is prolonged onto the
//! fine patch, followed by the ordinary fine proximal step.

use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, ComplexField, Grid, RealField};
use crate::pie::{joint_combine, proximal_step, update_parts, Combined, RegionUpdate, Regularization};

/// 2x2 block average. Needs an even number of rows and columns.
pub fn restrict<T>(x: &Grid<T>) -> Result<Grid<T>>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    let (rows, cols) = x.shape();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::contract(format!("restriction needs even sides, got {rows}x{cols}")));
    }
    Ok(Grid::from_fn(rows / 2, cols / 2, |r, c| {
        let (r2, c2) = (2 * r, 2 * c);
        // pairwise, so four equal values average back to themselves exactly
        ((x[(r2, c2)] + x[(r2, c2 + 1)]) + (x[(r2 + 1, c2)] + x[(r2 + 1, c2 + 1)])) * 0.25
    }))
}

/// Piecewise-constant replication onto a grid of twice the side.
pub fn prolong<T: Copy>(x: &Grid<T>) -> Grid<T> {
    Grid::from_fn(2 * x.rows(), 2 * x.cols(), |r, c| x[(r / 2, c / 2)])
}

/// Interlevel weights built from the current probe.
#[derive(Debug, Clone)]
pub struct Weights {
    /// Fine grid.
    pub w_z: RealField,
    /// Fine grid.
    pub w_r: ComplexField,
    /// Coarse grid.
    pub w_u: RealField,
}

const BOUND_SLACK: f64 = 1e-12;

/// Builds `W_z`, `W_R`, `W_u^H` from the probe.
///
/// Blocks with zero illumination give `W_z = W_R = 0` and `W_u = 1`.
/// `W_R` is evaluated as `P(Q_H) . conj(Q) / P R |Q|^2`, which equals the
/// defining ratio wherever `Q != 0` and has limit 0 where `Q = 0`.
pub fn build_weights(q: &ComplexField) -> Result<Weights> {
    if q.max_abs2() == 0.0 {
        return Err(Error::contract("probe is identically zero"));
    }
    let q_abs2 = q.abs2();
    let block = restrict(&q_abs2)?;
    let q_h = restrict(q)?;
    let block_fine = prolong(&block);
    let q_h_fine = prolong(&q_h);

    let w_z = q_abs2.zip_map(&block_fine, |a, b| if b > 0.0 { a / b } else { 0.0 })?;
    let w_r = Grid::from_fn(q.rows(), q.cols(), |r, c| {
        let b = block_fine[(r, c)];
        if b > 0.0 {
            q_h_fine[(r, c)] * q[(r, c)].conj() / b
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let w_u = q_h.zip_map(&block, |qh, b| if b > 0.0 { qh.norm_sqr() / b } else { 1.0 })?;

    let wz_max = w_z.max();
    let wr_max = w_r.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let wu_max = w_u.max();
    if wz_max > 4.0 * (1.0 + BOUND_SLACK) || wr_max > 4.0 * (1.0 + BOUND_SLACK) || wu_max > 1.0 + BOUND_SLACK {
        return Err(Error::Internal(format!(
            "interlevel weight bounds violated: |W_z|={wz_max}, |W_R|={wr_max}, |W_u|={wu_max}"
        )));
    }
    Ok(Weights { w_z, w_r, w_u })
}

/// Restricted probe, patch, anchor and regularizer for one coarse level.
#[derive(Debug, Clone)]
pub struct CoarseTerms {
    pub q_h: ComplexField,
    pub z_h: ComplexField,
    pub r_h: ComplexField,
    pub u_h: RealField,
    pub weights: Weights,
}

pub fn build_coarse_terms(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u: &RealField,
) -> Result<CoarseTerms> {
    ensure_same_shape(q, z_k)?;
    ensure_same_shape(q, r_k)?;
    ensure_same_shape(q, u)?;
    let weights = build_weights(q)?;
    let q_h = restrict(q)?;
    let z_h = restrict(&weights.w_z.zip_map(z_k, |w, z| z * w)?)?;
    let r_h = restrict(&weights.w_r.zip_map(r_k, |w, r| w * r)?)?;
    let u_h = weights.w_u.zip_map(&restrict(u)?, |w, v| w * v)?;
    Ok(CoarseTerms { q_h, z_h, r_h, u_h, weights })
}

/// Errors unless `side` is divisible by `2^levels`.
pub fn check_levels(side: usize, levels: usize) -> Result<()> {
    let factor = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if factor == 0 || side % factor != 0 {
        return Err(Error::contract(format!("probe side {side} is not divisible by 2^{levels}")));
    }
    Ok(())
}

fn solve_level(
    q: &ComplexField,
    z: &ComplexField,
    r: &ComplexField,
    u: &RealField,
    levels: usize,
    eps: f64,
) -> Result<ComplexField> {
    if levels == 0 {
        return proximal_step(q, z, r, u, eps);
    }
    let correction = correction_level(q, z, r, u, levels, eps)?;
    let z_prime = z.zip_map(&correction, |a, b| a + b)?;
    proximal_step(q, &z_prime, r, u, eps)
}

fn correction_level(
    q: &ComplexField,
    z: &ComplexField,
    r: &ComplexField,
    u: &RealField,
    levels: usize,
    eps: f64,
) -> Result<ComplexField> {
    let t = build_coarse_terms(q, z, r, u)?;
    let z_hat = solve_level(&t.q_h, &t.z_h, &t.r_h, &t.u_h, levels - 1, eps)?;
    Ok(prolong(&z_hat.zip_map(&t.z_h, |a, b| a - b)?))
}

/// Prolonged coarse correction `P(z^_H - z_H)` for the fine patch.
///
/// With `levels > 1` the coarse proximal problem is itself solved by the
/// same two-grid construction, using `Q_H` as its probe.
pub fn coarse_correction(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u: &RealField,
    levels: usize,
) -> Result<ComplexField> {
    if levels == 0 {
        return Err(Error::contract("coarse correction needs at least one coarse level"));
    }
    check_levels(q.rows(), levels)?;
    correction_level(q, z_k, r_k, u, levels, crate::pie::EPSILON_FLOOR)
}

/// MAGPIE object step: coarse proximal step, prolonged correction, fine proximal step.
///
/// `levels = 0` is exactly the plain proximal (rPIE) object step.
pub fn magpie_object_step(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u: &RealField,
    levels: usize,
) -> Result<ComplexField> {
    magpie_object_step_eps(q, z_k, r_k, u, levels, crate::pie::EPSILON_FLOOR)
}

pub(crate) fn magpie_object_step_eps(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u: &RealField,
    levels: usize,
    eps: f64,
) -> Result<ComplexField> {
    check_levels(q.rows(), levels)?;
    solve_level(q, z_k, r_k, u, levels, eps)
}

/// eMAGPIE joint step from an anchor exit wave and explicit regularizer fields.
pub fn emagpie_step(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u_obj: &RealField,
    u_probe: &RealField,
    levels: usize,
) -> Result<Combined> {
    let zplus = magpie_object_step(q, z_k, r_k, u_obj, levels)?;
    let qplus = proximal_step(z_k, q, r_k, u_probe, crate::pie::EPSILON_FLOOR)?;
    joint_combine(z_k, &zplus, q, &qplus)
}

/// One eMAGPIE region update: MAGPIE object step, regularized probe step,
/// phase-aligned geometric-mean combination.
pub fn emagpie_update_region(
    q: &ComplexField,
    z_k: &ComplexField,
    d_k: &RealField,
    reg: &Regularization,
    phase_cache: Option<&RealField>,
    levels: usize,
) -> Result<RegionUpdate> {
    let p = update_parts(q, z_k, d_k, reg, phase_cache, levels)?;
    let c = joint_combine(z_k, &p.zplus, q, &p.qplus)?;
    Ok(RegionUpdate { q: c.q, z_k: c.z_k, phase: p.anchor.phase })
}
