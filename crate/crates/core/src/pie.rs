//! Regularized one-variable minimizers of the region surrogate and the
//! geometric-mean, phase-aligned joint combination.
//!
//! For a region with anchor exit wave `R`, the object step minimizes
//! `1/2 ||Q z - R||^2 + 1/2 <u, |z - z_j|^2>` over `z` with `Q` fixed, and
//! the probe step does the same over `Q` with `z` fixed. Both have
//! closed forms that are exactly the rPIE update. The joint update takes
//! entrywise square roots of `z_j z+` and `Q_j Q+`, choosing the root
//! within a quarter turn of the current iterate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, ComplexField, RealField};
use crate::forward::{revised_exit_wave, RevisedWave};

/// Default guard added to a proximal denominator that is exactly zero.
pub const EPSILON_FLOOR: f64 = 1e-30;

/// Probe-step regularizer family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum ProbeRule {
    /// `u_z = ||z||_inf^2 - |z|^2`.
    Epie,
    /// `u_z = alpha_z (||z||_inf^2 - |z|^2)`.
    Rpie { alpha_z: f64 },
}

impl ProbeRule {
    fn alpha(self) -> f64 {
        match self {
            ProbeRule::Epie => 1.0,
            ProbeRule::Rpie { alpha_z } => alpha_z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    /// Object-step constant (rPIE alpha).
    pub alpha_q: f64,
    pub probe_rule: ProbeRule,
    pub epsilon_floor: f64,
}

impl Regularization {
    pub fn new(alpha_q: f64) -> Result<Self> {
        let reg = Self { alpha_q, probe_rule: ProbeRule::Epie, epsilon_floor: EPSILON_FLOOR };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_q > 0.0) || !self.alpha_q.is_finite() {
            return Err(Error::Config(format!("alpha_Q must be positive, got {}", self.alpha_q)));
        }
        if let ProbeRule::Rpie { alpha_z } = self.probe_rule {
            if !(alpha_z > 0.0) || !alpha_z.is_finite() {
                return Err(Error::Config(format!("alpha_z must be positive, got {alpha_z}")));
            }
        }
        if !(self.epsilon_floor > 0.0) || self.epsilon_floor > 1e-12 {
            return Err(Error::Config(format!("epsilon floor must be in (0, 1e-12], got {}", self.epsilon_floor)));
        }
        Ok(())
    }
}

fn sup_deficit(x: &ComplexField, alpha: f64, what: &str) -> Result<RealField> {
    let peak = x.max_abs2();
    if peak == 0.0 {
        return Err(Error::contract(format!("{what} is identically zero; regularizer is degenerate")));
    }
    Ok(x.map(|v| alpha * (peak - v.norm_sqr())))
}

/// `u_Q = alpha_Q (||Q||_inf^2 - |Q|^2)`.
pub fn u_q(q: &ComplexField, alpha_q: f64) -> Result<RealField> {
    sup_deficit(q, alpha_q, "probe")
}

/// ePIE probe regularizer `u_z = ||z_k||_inf^2 - |z_k|^2`.
pub fn u_z(z_k: &ComplexField) -> Result<RealField> {
    sup_deficit(z_k, 1.0, "object patch")
}

/// Probe regularizer for an arbitrary rule.
pub fn u_z_rule(z_k: &ComplexField, rule: ProbeRule) -> Result<RealField> {
    sup_deficit(z_k, rule.alpha(), "object patch")
}

/// `var + conj(fixed) / (u + |fixed|^2) . (r - fixed . var)`, the closed-form
/// minimizer shared by the object and probe steps.
pub(crate) fn proximal_step(
    fixed: &ComplexField,
    var: &ComplexField,
    r_k: &ComplexField,
    u: &RealField,
    eps: f64,
) -> Result<ComplexField> {
    ensure_same_shape(fixed, var)?;
    ensure_same_shape(fixed, r_k)?;
    ensure_same_shape(fixed, u)?;
    let out = fixed
        .iter()
        .zip(var.iter())
        .zip(r_k.iter())
        .zip(u.iter())
        .map(|(((&f, &v), &r), &w)| {
            let mut den = w + f.norm_sqr();
            if den == 0.0 {
                den = eps;
            }
            v + f.conj() / den * (r - f * v)
        })
        .collect();
    ComplexField::from_vec(fixed.rows(), fixed.cols(), out)
}

/// `z+ = z_k + conj(Q) / (u + |Q|^2) . (R_k - Q . z_k)`.
pub fn object_step(q: &ComplexField, z_k: &ComplexField, r_k: &ComplexField, u: &RealField) -> Result<ComplexField> {
    proximal_step(q, z_k, r_k, u, EPSILON_FLOOR)
}

/// `Q+ = Q + conj(z_k) / (u + |z_k|^2) . (R_k - Q . z_k)`.
pub fn probe_step(q: &ComplexField, z_k: &ComplexField, r_k: &ComplexField, u: &RealField) -> Result<ComplexField> {
    proximal_step(z_k, q, r_k, u, EPSILON_FLOOR)
}

/// Square root of `current * plus` on the branch within pi/2 of `current`.
///
/// Ties (exactly pi/2) keep the principal root; a zero product gives 0.
#[inline]
pub fn aligned_sqrt(current: Complex64, plus: Complex64) -> Complex64 {
    let prod = current * plus;
    if prod.re == 0.0 && prod.im == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let root = prod.sqrt();
    if (root * current.conj()).re < 0.0 {
        -root
    } else {
        root
    }
}

fn geometric_mean(current: &ComplexField, plus: &ComplexField) -> Result<(ComplexField, usize)> {
    let mut collapsed = 0;
    let out = current.zip_map(plus, |a, b| {
        let zero_a = a.re == 0.0 && a.im == 0.0;
        let zero_b = b.re == 0.0 && b.im == 0.0;
        if zero_a != zero_b {
            collapsed += 1;
        }
        aligned_sqrt(a, b)
    })?;
    Ok((out, collapsed))
}

/// Output of [`joint_combine`].
#[derive(Debug, Clone)]
pub struct Combined {
    pub z_k: ComplexField,
    pub q: ComplexField,
    /// Pixels where exactly one of the two factors was zero, which forces a zero output.
    pub collapsed: usize,
}

/// Phase-aligned geometric means `z~^2 = z_j z+`, `Q~^2 = Q_j Q+`.
pub fn joint_combine(
    zj: &ComplexField,
    zplus: &ComplexField,
    qj: &ComplexField,
    qplus: &ComplexField,
) -> Result<Combined> {
    let (z_k, cz) = geometric_mean(zj, zplus)?;
    let (q, cq) = geometric_mean(qj, qplus)?;
    let collapsed = cz + cq;
    if collapsed > 0 {
        log::debug!("geometric mean collapsed {collapsed} pixels with a single zero factor");
    }
    Ok(Combined { z_k, q, collapsed })
}

/// Joint proximal update of one region from an anchor exit wave and explicit regularizer fields.
pub fn joint_step(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u_obj: &RealField,
    u_probe: &RealField,
) -> Result<Combined> {
    let zplus = object_step(q, z_k, r_k, u_obj)?;
    let qplus = probe_step(q, z_k, r_k, u_probe)?;
    joint_combine(z_k, &zplus, q, &qplus)
}

/// New probe, new object patch and the Fourier phase used for the anchor.
#[derive(Debug, Clone)]
pub struct RegionUpdate {
    pub q: ComplexField,
    pub z_k: ComplexField,
    pub phase: RealField,
}

/// Anchor, regularizers and both one-variable minimizers of a region visit.
#[derive(Debug, Clone)]
pub struct UpdateParts {
    pub anchor: RevisedWave,
    pub u_obj: RealField,
    pub u_probe: RealField,
    pub zplus: ComplexField,
    pub qplus: ComplexField,
}

/// Builds [`UpdateParts`]; the object minimizer uses `levels` coarse levels
/// (0 for the plain proximal step).
pub fn update_parts(
    q: &ComplexField,
    z_k: &ComplexField,
    d_k: &RealField,
    reg: &Regularization,
    phase_cache: Option<&RealField>,
    levels: usize,
) -> Result<UpdateParts> {
    let anchor = revised_exit_wave(q, z_k, d_k, phase_cache)?;
    let u_obj = u_q(q, reg.alpha_q)?;
    let u_probe = u_z_rule(z_k, reg.probe_rule)?;
    let zplus = crate::multigrid::magpie_object_step_eps(q, z_k, &anchor.wave, &u_obj, levels, reg.epsilon_floor)?;
    let qplus = proximal_step(z_k, q, &anchor.wave, &u_probe, reg.epsilon_floor)?;
    Ok(UpdateParts { anchor, u_obj, u_probe, zplus, qplus })
}

/// One joint (geometric-mean) update of region `k`.
pub fn joint_update_region(
    q: &ComplexField,
    z_k: &ComplexField,
    d_k: &RealField,
    reg: &Regularization,
    phase_cache: Option<&RealField>,
) -> Result<RegionUpdate> {
    let p = update_parts(q, z_k, d_k, reg, phase_cache, 0)?;
    let c = joint_combine(z_k, &p.zplus, q, &p.qplus)?;
    Ok(RegionUpdate { q: c.q, z_k: c.z_k, phase: p.anchor.phase })
}

/// Classic rPIE region update: both one-variable minimizers evaluated at the
/// current iterate and assigned directly.
pub fn rpie_update_region(
    q: &ComplexField,
    z_k: &ComplexField,
    d_k: &RealField,
    reg: &Regularization,
    phase_cache: Option<&RealField>,
) -> Result<RegionUpdate> {
    let p = update_parts(q, z_k, d_k, reg, phase_cache, 0)?;
    Ok(RegionUpdate { q: p.qplus, z_k: p.zplus, phase: p.anchor.phase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use std::f64::consts::FRAC_PI_4;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one(v: Complex64) -> ComplexField {
        Grid::from_vec(1, 1, vec![v]).unwrap()
    }

    fn real1(v: f64) -> RealField {
        Grid::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn regularizer_values() {
        let q = Grid::from_fn(2, 2, |_, _| Complex64::from_polar(1.7, 0.3));
        assert!(u_q(&q, 0.05).unwrap().iter().all(|v| *v == 0.0));
        let q = Grid::from_vec(1, 2, vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let u = u_q(&q, 0.05).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 0.05]);
        assert!(u_q(&ComplexField::zeros(2, 2), 0.1).is_err());
        assert!(u_z(&ComplexField::zeros(2, 2)).is_err());
    }

    #[test]
    fn regularization_validation() {
        assert!(Regularization::new(0.0).is_err());
        assert!(Regularization::new(0.01).is_ok());
        let mut r = Regularization::new(0.01).unwrap();
        r.epsilon_floor = 1e-3;
        assert!(r.validate().is_err());
    }

    #[test]
    fn object_step_cases() {
        let u0 = real1(0.0);
        let z = object_step(&one(c(1.0, 0.0)), &one(c(0.0, 0.0)), &one(c(1.0, 0.0)), &real1(1.0)).unwrap();
        assert_eq!(z[(0, 0)], c(0.5, 0.0));
        // u = 0 solves Q z+ = R exactly
        let q = one(c(0.6, -0.8));
        let r = one(c(-1.5, 2.0));
        let z = object_step(&q, &one(c(3.0, 1.0)), &r, &u0).unwrap();
        assert!((q[(0, 0)] * z[(0, 0)] - r[(0, 0)]).norm() < 1e-14);
        // zero residual keeps the iterate
        let zk = one(c(0.2, 0.9));
        let r = one(q[(0, 0)] * zk[(0, 0)]);
        assert_eq!(object_step(&q, &zk, &r, &real1(0.3)).unwrap(), zk);
    }

    #[test]
    fn probe_step_cases() {
        let q = probe_step(&one(c(0.0, 0.0)), &one(c(2.0, 0.0)), &one(c(2.0, 0.0)), &real1(0.0)).unwrap();
        assert_eq!(q[(0, 0)], c(1.0, 0.0));
        let z = one(c(-0.3, 0.4));
        let r = one(c(1.0, 1.0));
        let qp = probe_step(&one(c(2.0, 0.0)), &z, &r, &real1(0.0)).unwrap();
        assert!((qp[(0, 0)] * z[(0, 0)] - r[(0, 0)]).norm() < 1e-14);
    }

    #[test]
    fn zero_denominator_is_guarded() {
        let z = object_step(&one(c(0.0, 0.0)), &one(c(1.0, 0.0)), &one(c(5.0, 0.0)), &real1(0.0)).unwrap();
        assert_eq!(z[(0, 0)], c(1.0, 0.0));
    }

    #[test]
    fn branch_rule() {
        let zj = c(0.7, -0.4);
        assert_eq!(aligned_sqrt(zj, zj), zj);
        let r = aligned_sqrt(c(1.0, 0.0), c(0.0, 1.0));
        assert!((r - Complex64::from_polar(1.0, FRAC_PI_4)).norm() < 1e-15);
        // tie: both roots at exactly pi/2, principal kept
        assert_eq!(aligned_sqrt(c(1.0, 0.0), c(-1.0, 0.0)), c(0.0, 1.0));
        // principal root would be misaligned here
        let cur = c(-1.0, 0.1);
        let r = aligned_sqrt(cur, cur * c(0.9, 0.2));
        assert!((r * cur.conj()).re >= 0.0);
        assert_eq!(aligned_sqrt(c(0.0, 0.0), c(3.0, 1.0)), c(0.0, 0.0));
    }

    #[test]
    fn combine_counts_collapsed_pixels() {
        let zj = Grid::from_vec(1, 2, vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let zp = Grid::from_vec(1, 2, vec![c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let out = joint_combine(&zj, &zp, &zj, &zj).unwrap();
        assert_eq!(out.collapsed, 1);
        assert_eq!(out.z_k.as_slice(), &[c(0.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn scalar_joint_step() {
        // q = z = 1, anchor R = 2, u_q = u_z = 1 -> alpha = beta = 1/2
        let r = one(c(2.0, 0.0));
        let out = joint_step(&one(c(1.0, 0.0)), &one(c(1.0, 0.0)), &r, &real1(1.0), &real1(1.0)).unwrap();
        let s = 1.5f64.sqrt();
        assert!((out.z_k[(0, 0)] - c(s, 0.0)).norm() < 1e-15);
        assert!((out.q[(0, 0)] - c(s, 0.0)).norm() < 1e-15);
        let err = (out.q[(0, 0)] * out.z_k[(0, 0)] - r[(0, 0)]).norm();
        assert!((err - 0.5).abs() < 1e-15);
    }

    #[test]
    fn joint_update_from_intensities() {
        // m = 1: d = 4 gives R = 2 for a real positive exit wave.
        let reg = Regularization::new(0.5).unwrap();
        let q = Grid::from_vec(2, 2, vec![c(1.0, 0.0), c(0.5, 0.1), c(0.2, -0.3), c(0.9, 0.0)]).unwrap();
        let z = ComplexField::ones(2, 2);
        let d = crate::forward::measure(&q, &z, &crate::field::ScanGeometry::new(2, 2, vec![(0, 0)]).unwrap())
            .unwrap()
            .remove(0);
        let same = joint_update_region(&q, &z, &d, &reg, None).unwrap();
        for (a, b) in same.q.iter().zip(q.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in same.z_k.iter().zip(z.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
