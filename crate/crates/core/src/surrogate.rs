//! The quadratic surrogate anchored at an iterate, the zero-coefficient
//! phase memory, and certifiers for the majorization and descent
//! properties.
//!
//! For anchors built at `(Q_j, z_j)` the surrogate is
//! `1/2 sum_k ||Q . z_k - R_k(Q_j, z_j,k)||^2`. It touches the misfit at the
//! anchor, lies above it everywhere, and shares its gradient there.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, extract_patch, fft2, principal_arg, ComplexField, RealField};
use crate::forward::{grad_q, grad_z, misfit_region, revise_fourier, Dataset};
use crate::pie::{joint_combine, update_parts, Combined, Regularization};

/// Per-region Fourier phase memory for coefficients that vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCache {
    phases: Vec<Option<RealField>>,
    last_update_iter: Vec<Option<usize>>,
}

impl PhaseCache {
    pub fn new(regions: usize) -> Self {
        Self { phases: vec![None; regions], last_update_iter: vec![None; regions] }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Cached phase of region `k`; `None` before its first visit.
    pub fn get(&self, k: usize) -> Option<&RealField> {
        self.phases.get(k).and_then(Option::as_ref)
    }

    pub fn last_update_iter(&self, k: usize) -> Option<usize> {
        self.last_update_iter.get(k).copied().flatten()
    }

    /// Stores a phase field that was already resolved against the cache
    /// (as returned by [`crate::forward::revised_exit_wave`]).
    pub fn store(&mut self, k: usize, phase: RealField, iter: usize) -> Result<()> {
        let len = self.phases.len();
        let slot = self.phases.get_mut(k).ok_or(Error::Index { index: k, len })?;
        *slot = Some(phase);
        self.last_update_iter[k] = Some(iter);
        Ok(())
    }
}

/// Applies the zero-coefficient rule to region `k`.
///
/// Nonzero coefficients store their principal argument; zero coefficients
/// keep the previously cached phase, or 0 on the first visit.
pub fn update_phase_cache(cache: &mut PhaseCache, k: usize, fourier_field: &ComplexField, iter: usize) -> Result<()> {
    let prev = cache.get(k);
    if let Some(p) = prev {
        ensure_same_shape(p, fourier_field)?;
    }
    let phase = RealField::from_fn(fourier_field.rows(), fourier_field.cols(), |r, c| {
        let f = fourier_field[(r, c)];
        if f.re == 0.0 && f.im == 0.0 {
            prev.map_or(0.0, |p| p[(r, c)])
        } else {
            principal_arg(f)
        }
    });
    cache.store(k, phase, iter)
}

/// Revised exit wave frozen at an iterate for one region.
#[derive(Debug, Clone)]
pub struct SurrogateAnchor {
    pub region: usize,
    pub revised: ComplexField,
    /// `Phi_k` at the anchoring iterate.
    pub anchor_misfit: f64,
}

impl SurrogateAnchor {
    pub fn build(
        q: &ComplexField,
        z_k: &ComplexField,
        d_k: &RealField,
        region: usize,
        cache: Option<&RealField>,
    ) -> Result<Self> {
        ensure_same_shape(q, z_k)?;
        let psi = q.zip_map(z_k, |a, b| a * b)?;
        let revised = revise_fourier(&fft2(&psi)?, d_k, cache)?.wave;
        let anchor_misfit = 0.5 * dist2(&psi, &revised);
        Ok(Self { region, revised, anchor_misfit })
    }
}

/// Anchors for every region at `(q, z)`.
pub fn anchors_at(
    q: &ComplexField,
    z: &ComplexField,
    dataset: &Dataset,
    cache: Option<&PhaseCache>,
) -> Result<Vec<SurrogateAnchor>> {
    let geom = &dataset.geometry;
    (0..geom.len())
        .map(|k| {
            let z_k = extract_patch(z, geom, k)?;
            SurrogateAnchor::build(q, &z_k, &dataset.intensities[k], k, cache.and_then(|c| c.get(k)))
        })
        .collect()
}

fn dist2(a: &ComplexField, b: &ComplexField) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// `1/2 ||Q . z_k - R_anchor||^2`.
pub fn surrogate_value(q: &ComplexField, z_k: &ComplexField, anchor: &SurrogateAnchor) -> Result<f64> {
    ensure_same_shape(q, z_k)?;
    ensure_same_shape(q, &anchor.revised)?;
    Ok(0.5 * q.iter().zip(z_k.iter()).zip(anchor.revised.iter()).map(|((a, b), r)| (a * b - r).norm_sqr()).sum::<f64>())
}

/// Region surrogate values at `(q, z)`, index order.
pub fn surrogate_per_region(
    q: &ComplexField,
    z: &ComplexField,
    dataset: &Dataset,
    anchors: &[SurrogateAnchor],
) -> Result<Vec<f64>> {
    if anchors.len() != dataset.len() {
        return Err(Error::shape(format!("{} anchors for {} regions", anchors.len(), dataset.len())));
    }
    anchors.iter().map(|a| surrogate_value(q, &extract_patch(z, &dataset.geometry, a.region)?, a)).collect()
}

pub fn surrogate_total(
    q: &ComplexField,
    z: &ComplexField,
    dataset: &Dataset,
    anchors: &[SurrogateAnchor],
) -> Result<f64> {
    Ok(surrogate_per_region(q, z, dataset, anchors)?.iter().sum())
}

/// Margins below this count as a majorization failure.
pub const MAJORIZATION_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Clone)]
pub struct PointMargin {
    pub misfit: f64,
    pub surrogate: f64,
    /// `surrogate - misfit` for the full sum (the asserted quantity).
    pub margin: f64,
    /// Region margins, reported only.
    pub region_margins: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MajorizationReport {
    pub points: Vec<PointMargin>,
}

impl MajorizationReport {
    pub fn min_margin(&self) -> f64 {
        self.points.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.points.iter().all(|p| p.margin >= MAJORIZATION_TOLERANCE)
    }
}

impl fmt::Display for MajorizationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "majorization.points = {}", self.points.len())?;
        writeln!(f, "majorization.min_margin = {:e}", self.min_margin())?;
        let min_region =
            self.points.iter().flat_map(|p| p.region_margins.iter().copied()).fold(f64::INFINITY, f64::min);
        writeln!(f, "majorization.min_region_margin = {min_region:e}")?;
        writeln!(f, "majorization.passed = {}", self.passed())
    }
}

/// Evaluates `Phi` and the anchored surrogate at every test point.
pub fn check_majorization(
    points: &[(ComplexField, ComplexField)],
    dataset: &Dataset,
    anchors: &[SurrogateAnchor],
) -> Result<MajorizationReport> {
    let geom = &dataset.geometry;
    let points = points
        .iter()
        .map(|(q, z)| {
            let sur = surrogate_per_region(q, z, dataset, anchors)?;
            let phi = (0..geom.len())
                .map(|k| misfit_region(q, &extract_patch(z, geom, k)?, &dataset.intensities[k]))
                .collect::<Result<Vec<_>>>()?;
            let misfit: f64 = phi.iter().sum();
            let surrogate: f64 = sur.iter().sum();
            Ok(PointMargin {
                misfit,
                surrogate,
                margin: surrogate - misfit,
                region_margins: sur.iter().zip(&phi).map(|(s, p)| s - p).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MajorizationReport { points })
}

/// Gradient agreement must hold to this relative deviation.
pub const GRADIENT_AGREEMENT_TOLERANCE: f64 = 1e-10;
/// Finite-difference cross-check tolerance (relative).
pub const FINITE_DIFFERENCE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum RegionGradient {
    /// A Fourier coefficient of the exit wave vanishes; the misfit is not smooth here.
    Excluded,
    Checked {
        z_rel: f64,
        q_rel: f64,
        /// Worst relative mismatch between central differences of `Phi_k` and
        /// the surrogate's directional derivative.
        fd_rel: f64,
    },
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub regions: Vec<RegionGradient>,
}

impl GradientReport {
    pub fn max_rel_dev(&self) -> f64 {
        self.regions
            .iter()
            .filter_map(|r| match r {
                RegionGradient::Checked { z_rel, q_rel, .. } => Some(z_rel.max(*q_rel)),
                RegionGradient::Excluded => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn max_fd_rel(&self) -> f64 {
        self.regions
            .iter()
            .filter_map(|r| match r {
                RegionGradient::Checked { fd_rel, .. } => Some(*fd_rel),
                RegionGradient::Excluded => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn excluded(&self) -> usize {
        self.regions.iter().filter(|r| **r == RegionGradient::Excluded).count()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_dev() < GRADIENT_AGREEMENT_TOLERANCE && self.max_fd_rel() < FINITE_DIFFERENCE_TOLERANCE
    }
}

impl fmt::Display for GradientReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient.regions = {}", self.regions.len())?;
        writeln!(f, "gradient.excluded = {}", self.excluded())?;
        writeln!(f, "gradient.max_rel_dev = {:e}", self.max_rel_dev())?;
        writeln!(f, "gradient.max_fd_rel = {:e}", self.max_fd_rel())?;
        writeln!(f, "gradient.passed = {}", self.passed())
    }
}

fn rel_dev(a: &ComplexField, b: &ComplexField) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        dist2(a, b).sqrt() / scale
    }
}

const FD_STEP: f64 = 1e-6;
const FD_DIRECTIONS: usize = 2;

/// Compares the misfit gradient with the surrogate gradient at anchors
/// built at `(q, z)` itself.
///
/// The misfit gradient is evaluated from a fresh revised exit wave, the
/// surrogate gradient from the stored anchor. As an independent route,
/// central differences of `Phi_k` along random directions are compared to
/// `Re <grad, delta>` of the surrogate.
pub fn check_gradient_agreement(
    q: &ComplexField,
    z: &ComplexField,
    dataset: &Dataset,
    anchors: &[SurrogateAnchor],
) -> Result<GradientReport> {
    let geom = &dataset.geometry;
    if anchors.len() != geom.len() {
        return Err(Error::shape(format!("{} anchors for {} regions", anchors.len(), geom.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let regions = anchors
        .iter()
        .map(|a| {
            let k = a.region;
            let z_k = extract_patch(z, geom, k)?;
            let d_k = &dataset.intensities[k];
            let psi = q.zip_map(&z_k, |x, y| x * y)?;
            if fft2(&psi)?.iter().any(|f| f.re == 0.0 && f.im == 0.0) {
                return Ok(RegionGradient::Excluded);
            }
            let resid = psi.zip_map(&a.revised, |x, r| x - r)?;
            let sur_z = q.zip_map(&resid, |x, e| x.conj() * e)?;
            let sur_q = z_k.zip_map(&resid, |x, e| x.conj() * e)?;
            let z_rel = rel_dev(&grad_z(q, &z_k, d_k)?, &sur_z);
            let q_rel = rel_dev(&grad_q(q, &z_k, d_k)?, &sur_q);

            let mut fd_rel: f64 = 0.0;
            for _ in 0..FD_DIRECTIONS {
                let dir = random_direction(&mut rng, q.rows());
                let slope = crate::field::inner(&sur_z, &dir)?.re;
                let plus = z_k.zip_map(&dir, |v, d| v + d * FD_STEP)?;
                let minus = z_k.zip_map(&dir, |v, d| v - d * FD_STEP)?;
                let fd = (misfit_region(q, &plus, d_k)? - misfit_region(q, &minus, d_k)?) / (2.0 * FD_STEP);
                let scale = slope.abs().max(sur_z.norm() * dir.norm()).max(f64::MIN_POSITIVE);
                fd_rel = fd_rel.max((fd - slope).abs() / scale);
            }
            Ok(RegionGradient::Checked { z_rel, q_rel, fd_rel })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientReport { regions })
}

/// Test points `(Q + s dQ, z + s dz)` around an iterate. The directions
/// are random with unit norm and `s = scale * ||.||` of the respective
/// field, so the points stay comparable across problem sizes.
pub fn random_test_points(
    q: &ComplexField,
    z: &ComplexField,
    count: usize,
    scale: f64,
    seed: u64,
) -> Result<Vec<(ComplexField, ComplexField)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sq, sz) = (scale * q.norm(), scale * z.norm());
    (0..count)
        .map(|_| {
            let dq = random_direction(&mut rng, q.rows());
            let dz = random_direction(&mut rng, z.rows());
            Ok((q.zip_map(&dq, |a, b| a + b * sq)?, z.zip_map(&dz, |a, b| a + b * sz)?))
        })
        .collect()
}

fn random_direction(rng: &mut ChaCha8Rng, m: usize) -> ComplexField {
    let dir = ComplexField::from_fn(m, m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let n = dir.norm();
    dir.scale(Complex64::new(1.0 / n, 0.0))
}

/// Absolute slack for the entrywise bounds of the joint update.
pub const ENTRYWISE_SLACK: f64 = 1e-10;

/// Descent certificate for one joint region update.
#[derive(Debug, Clone)]
pub struct DescentCertificate {
    /// Surrogate at the current iterate.
    pub before: f64,
    /// Surrogate at the combined update.
    pub after: f64,
    /// `max(Phi~(Q+, z), Phi~(Q, z+))`.
    pub one_variable_max: f64,
    /// Worst `|q~ z~ - d| - max(a, b) |qz - d|` over pixels (<= slack expected).
    pub entrywise_excess: f64,
    /// Worst `|w - (X+Y)/2| - |X-Y|/2` over pixels.
    pub thales_excess: f64,
}

impl DescentCertificate {
    /// Weak descent with round-off slack; strict descent is checked by callers that control `u > 0`.
    pub fn descended(&self) -> bool {
        self.after <= self.before * (1.0 + 1e-12) + 1e-300
    }

    pub fn passed(&self) -> bool {
        self.descended() && self.entrywise_excess <= ENTRYWISE_SLACK && self.thales_excess <= ENTRYWISE_SLACK
    }
}

/// Evaluates the descent chain and the entrywise bounds for a joint update
/// built from the plain proximal minimizers `z+` and `Q+`.
#[allow(clippy::too_many_arguments)]
pub fn certify_joint_update(
    q: &ComplexField,
    z_k: &ComplexField,
    r_k: &ComplexField,
    u_obj: &RealField,
    u_probe: &RealField,
    zplus: &ComplexField,
    qplus: &ComplexField,
    combined: &Combined,
) -> Result<DescentCertificate> {
    for f in [z_k, r_k, zplus, qplus, &combined.q, &combined.z_k] {
        ensure_same_shape(q, f)?;
    }
    ensure_same_shape(q, u_obj)?;
    ensure_same_shape(q, u_probe)?;
    let mut before = 0.0;
    let mut after = 0.0;
    let mut with_qplus = 0.0;
    let mut with_zplus = 0.0;
    let mut entrywise_excess = f64::NEG_INFINITY;
    let mut thales_excess = f64::NEG_INFINITY;
    for i in 0..q.len() {
        let (qi, zi, d) = (q.as_slice()[i], z_k.as_slice()[i], r_k.as_slice()[i]);
        let (uq, uz) = (u_obj.as_slice()[i], u_probe.as_slice()[i]);
        let x = qi * zplus.as_slice()[i];
        let y = qplus.as_slice()[i] * zi;
        let w = combined.q.as_slice()[i] * combined.z_k.as_slice()[i];
        let e = qi * zi - d;
        before += 0.5 * e.norm_sqr();
        after += 0.5 * (w - d).norm_sqr();
        with_zplus += 0.5 * (x - d).norm_sqr();
        with_qplus += 0.5 * (y - d).norm_sqr();
        let a = ratio(uq, qi.norm_sqr());
        let b = ratio(uz, zi.norm_sqr());
        entrywise_excess = entrywise_excess.max((w - d).norm() - a.max(b) * e.norm());
        thales_excess = thales_excess.max((w - (x + y) * 0.5).norm() - (x - y).norm() * 0.5);
    }
    Ok(DescentCertificate {
        before,
        after,
        one_variable_max: with_qplus.max(with_zplus),
        entrywise_excess,
        thales_excess,
    })
}

/// Certifies the plain joint update of every region at `(q, z)` without
/// moving the iterate. Each region is taken from the same anchor state.
pub fn certify_regions(
    q: &ComplexField,
    z: &ComplexField,
    dataset: &Dataset,
    reg: &Regularization,
    phase_cache: Option<&PhaseCache>,
) -> Result<Vec<DescentCertificate>> {
    let geom = &dataset.geometry;
    (0..geom.len())
        .map(|k| {
            let z_k = extract_patch(z, geom, k)?;
            let cache = phase_cache.and_then(|c| c.get(k));
            let p = update_parts(q, &z_k, &dataset.intensities[k], reg, cache, 0)?;
            let c = joint_combine(&z_k, &p.zplus, q, &p.qplus)?;
            certify_joint_update(q, &z_k, &p.anchor.wave, &p.u_obj, &p.u_probe, &p.zplus, &p.qplus, &c)
        })
        .collect()
}

fn ratio(u: f64, mag2: f64) -> f64 {
    let den = u + mag2;
    if den == 0.0 {
        // both vanish: the proximal step leaves the entry unchanged
        1.0
    } else {
        u / den
    }
}
