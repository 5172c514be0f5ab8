//! Far-field measurement model, revised exit wave, exit-wave misfit and
//! its CR-calculus gradients, plus calibrated Poisson noise.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::field::{
    ensure_same_shape, extract_patch, fft2, ifft2, principal_arg, ComplexField, RealField, ScanGeometry,
};

/// Measured diffraction data plus, for synthetic runs, the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: ScanGeometry,
    /// One m x m intensity frame per scan position (unitary-DFT scale).
    pub intensities: Vec<RealField>,
    pub clean_intensities: Option<Vec<RealField>>,
    pub truth_object: Option<ComplexField>,
    pub truth_probe: Option<ComplexField>,
    /// Achieved noise amplitude percentage, when noise was added.
    pub noise_percent: Option<f64>,
}

impl Dataset {
    pub fn new(geometry: ScanGeometry, intensities: Vec<RealField>) -> Result<Self> {
        let ds = Self {
            geometry,
            intensities,
            clean_intensities: None,
            truth_object: None,
            truth_probe: None,
            noise_percent: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks frame count, frame shapes and non-negativity.
    pub fn validate(&self) -> Result<()> {
        let m = self.geometry.probe_side();
        let n = self.geometry.object_side();
        if self.intensities.len() != self.geometry.len() {
            return Err(Error::shape(format!(
                "{} intensity frames for {} scan positions",
                self.intensities.len(),
                self.geometry.len()
            )));
        }
        let check_frames = |frames: &[RealField], what: &str| -> Result<()> {
            for (k, d) in frames.iter().enumerate() {
                if d.shape() != (m, m) {
                    return Err(Error::shape(format!("{what} frame {k} is {:?}, expected {m}x{m}", d.shape())));
                }
                if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::contract(format!("{what} frame {k} has negative or non-finite entries")));
                }
            }
            Ok(())
        };
        check_frames(&self.intensities, "intensity")?;
        if let Some(clean) = &self.clean_intensities {
            if clean.len() != self.intensities.len() {
                return Err(Error::shape("clean intensities count differs from intensities"));
            }
            check_frames(clean, "clean intensity")?;
        }
        if let Some(z) = &self.truth_object {
            if z.shape() != (n, n) {
                return Err(Error::shape(format!("truth object is {:?}, expected {n}x{n}", z.shape())));
            }
        }
        if let Some(q) = &self.truth_probe {
            if q.shape() != (m, m) {
                return Err(Error::shape(format!("truth probe is {:?}, expected {m}x{m}", q.shape())));
            }
        }
        Ok(())
    }

    pub fn probe_side(&self) -> usize {
        self.geometry.probe_side()
    }

    pub fn object_side(&self) -> usize {
        self.geometry.object_side()
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }
}

fn check_region(q: &ComplexField, z_k: &ComplexField) -> Result<()> {
    ensure_same_shape(q, z_k)?;
    if !q.is_square() {
        return Err(Error::shape("probe must be square"));
    }
    Ok(())
}

fn exit_wave(q: &ComplexField, z_k: &ComplexField) -> Result<ComplexField> {
    check_region(q, z_k)?;
    q.zip_map(z_k, |a, b| a * b)
}

/// Noiseless far-field intensities `|F(Q . P_k z)|^2` for every scan position.
pub fn measure(q: &ComplexField, z: &ComplexField, geom: &ScanGeometry) -> Result<Vec<RealField>> {
    let m = geom.probe_side();
    if q.shape() != (m, m) {
        return Err(Error::shape(format!("probe is {:?}, geometry expects {m}x{m}", q.shape())));
    }
    (0..geom.len())
        .map(|k| {
            let z_k = extract_patch(z, geom, k)?;
            Ok(fft2(&exit_wave(q, &z_k)?)?.abs2())
        })
        .collect()
}

/// Revised exit wave and the Fourier phase it was built with.
#[derive(Debug, Clone)]
pub struct RevisedWave {
    pub wave: ComplexField,
    /// Phase used at every Fourier index; feed back as the next cache.
    pub phase: RealField,
}

/// Replaces the Fourier modulus of `fourier` by `sqrt(d_k)`.
///
/// Where a Fourier coefficient is exactly zero the phase is taken from
/// `cache` (the previous iterate's phase for this region), or 0 without one.
pub fn revise_fourier(fourier: &ComplexField, d_k: &RealField, cache: Option<&RealField>) -> Result<RevisedWave> {
    ensure_same_shape(fourier, d_k)?;
    if let Some(c) = cache {
        ensure_same_shape(fourier, c)?;
    }
    if d_k.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::contract("intensities must be non-negative"));
    }
    let phase = RealField::from_fn(fourier.rows(), fourier.cols(), |r, c| {
        let f = fourier[(r, c)];
        if f.re == 0.0 && f.im == 0.0 {
            cache.map_or(0.0, |cache| cache[(r, c)])
        } else {
            principal_arg(f)
        }
    });
    let spectrum = d_k.zip_map(&phase, |d, th| Complex64::from_polar(d.sqrt(), th))?;
    Ok(RevisedWave { wave: ifft2(&spectrum)?, phase })
}

/// `R_k = F^-1( sqrt(d_k) . exp(i theta(F(Q . z_k))) )`.
pub fn revised_exit_wave(
    q: &ComplexField,
    z_k: &ComplexField,
    d_k: &RealField,
    phase_cache: Option<&RealField>,
) -> Result<RevisedWave> {
    let psi = exit_wave(q, z_k)?;
    revise_fourier(&fft2(&psi)?, d_k, phase_cache)
}

/// `Phi_k = 1/2 ||Q . z_k - R_k(Q, z_k)||^2`.
pub fn misfit_region(q: &ComplexField, z_k: &ComplexField, d_k: &RealField) -> Result<f64> {
    let psi = exit_wave(q, z_k)?;
    let r = revise_fourier(&fft2(&psi)?, d_k, None)?.wave;
    Ok(0.5 * sq_dist(&psi, &r))
}

fn sq_dist(a: &ComplexField, b: &ComplexField) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Full exit-wave misfit, summed over scan positions in index order.
pub fn misfit(q: &ComplexField, z: &ComplexField, dataset: &Dataset) -> Result<f64> {
    let per_region = misfit_per_region(q, z, dataset)?;
    Ok(per_region.iter().sum())
}

pub fn misfit_per_region(q: &ComplexField, z: &ComplexField, dataset: &Dataset) -> Result<Vec<f64>> {
    let geom = &dataset.geometry;
    (0..geom.len()).map(|k| misfit_region(q, &extract_patch(z, geom, k)?, &dataset.intensities[k])).collect()
}

/// `grad_{z_k} Phi_k = conj(Q) . (Q . z_k - R_k)`, with `grad = grad_x + i grad_y`.
pub fn grad_z(q: &ComplexField, z_k: &ComplexField, d_k: &RealField) -> Result<ComplexField> {
    let psi = exit_wave(q, z_k)?;
    let r = revise_fourier(&fft2(&psi)?, d_k, None)?.wave;
    let resid = psi.zip_map(&r, |a, b| a - b)?;
    q.zip_map(&resid, |a, e| a.conj() * e)
}

/// `grad_Q Phi_k = conj(z_k) . (Q . z_k - R_k)`.
pub fn grad_q(q: &ComplexField, z_k: &ComplexField, d_k: &RealField) -> Result<ComplexField> {
    let psi = exit_wave(q, z_k)?;
    let r = revise_fourier(&fft2(&psi)?, d_k, None)?.wave;
    let resid = psi.zip_map(&r, |a, b| a - b)?;
    z_k.zip_map(&resid, |a, e| a.conj() * e)
}

/// Noise amplitude percentage `100 sqrt(sum ||d - d~||^2 / sum ||d~||^2)`.
pub fn noise_percent(noisy: &[RealField], clean: &[RealField]) -> Result<f64> {
    if noisy.len() != clean.len() {
        return Err(Error::shape(format!("{} noisy vs {} clean frames", noisy.len(), clean.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, c) in noisy.iter().zip(clean) {
        ensure_same_shape(d, c)?;
        num += d.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        den += c.norm_sqr();
    }
    if den == 0.0 {
        return Err(Error::Calibration("noise level undefined for all-zero clean data".into()));
    }
    Ok(100.0 * (num / den).sqrt())
}

/// Result of [`add_poisson_noise`].
#[derive(Debug, Clone)]
pub struct NoisyData {
    pub intensities: Vec<RealField>,
    /// Noise percentage of `intensities` against the clean input.
    pub achieved_percent: f64,
    /// Photon-count scale `s`: frames are `Poisson(s d~) / s`.
    pub flux_scale: f64,
}

/// `Poisson(s * clean) / s`, one ChaCha8 stream seeded by `seed`, frames in order.
pub fn poisson_sample(clean: &[RealField], flux_scale: f64, seed: u64) -> Result<Vec<RealField>> {
    if !(flux_scale > 0.0) || !flux_scale.is_finite() {
        return Err(Error::Calibration(format!("invalid flux scale {flux_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean
        .iter()
        .map(|frame| {
            let mut out = frame.clone();
            for v in out.as_mut_slice() {
                let lambda = *v * flux_scale;
                *v = if lambda > 0.0 {
                    let dist =
                        Poisson::new(lambda).map_err(|e| Error::Calibration(format!("poisson rate {lambda}: {e}")))?;
                    dist.sample(&mut rng) / flux_scale
                } else {
                    0.0
                };
            }
            Ok(out)
        })
        .collect()
}

const CALIBRATION_TOLERANCE: f64 = 0.005;
const CALIBRATION_MAX_PROBES: usize = 48;

/// Adds Poisson noise with the photon scale chosen so that the realized
/// noise percentage matches `target_percent`.
///
/// The scale is bisected in log space. Every probe reuses the same seed,
/// so the realized level is a smooth, monotone function of the scale and
/// the returned frames are exactly the probe that was accepted.
pub fn add_poisson_noise(clean: &[RealField], target_percent: f64, seed: u64) -> Result<NoisyData> {
    if !(target_percent > 0.0) || !target_percent.is_finite() {
        return Err(Error::Config(format!("noise target must be positive, got {target_percent}")));
    }
    let total: f64 = clean.iter().map(RealField::sum).sum();
    let total_sq: f64 = clean.iter().map(RealField::norm_sqr).sum();
    if total <= 0.0 || total_sq <= 0.0 {
        return Err(Error::Calibration("clean data are all zero; no noise level is reachable".into()));
    }
    let target = target_percent / 100.0;
    // E||d - d~||^2 = sum(d~) / s for Poisson counts.
    let guess = total / (total_sq * target * target);

    let probe = |s: f64| -> Result<(f64, Vec<RealField>)> {
        let noisy = poisson_sample(clean, s, seed)?;
        Ok((noise_percent(&noisy, clean)?, noisy))
    };

    let mut lo = (guess / 64.0).ln();
    let mut hi = (guess * 64.0).ln();
    let mut best: Option<(f64, f64, Vec<RealField>)> = None;
    let mut log_s = guess.ln();
    for _ in 0..CALIBRATION_MAX_PROBES {
        let s = log_s.exp();
        let (pct, noisy) = probe(s)?;
        let rel = (pct / target_percent - 1.0).abs();
        if best.as_ref().is_none_or(|(_, p, _)| rel < (p / target_percent - 1.0).abs()) {
            best = Some((s, pct, noisy));
        }
        if rel <= CALIBRATION_TOLERANCE {
            break;
        }
        // more flux, less noise
        if pct > target_percent {
            lo = log_s;
        } else {
            hi = log_s;
        }
        log_s = 0.5 * (lo + hi);
    }
    let (flux_scale, achieved_percent, intensities) = best.expect("at least one probe");
    log::debug!("poisson calibration: target {target_percent}% achieved {achieved_percent}% at scale {flux_scale:e}");
    Ok(NoisyData { intensities, achieved_percent, flux_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(v: Complex64) -> ComplexField {
        Grid::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_probe_measures_zero() {
        let geom = ScanGeometry::new(2, 4, vec![(0, 0), (2, 2)]).unwrap();
        let d = measure(&ComplexField::zeros(2, 2), &ComplexField::ones(4, 4), &geom).unwrap();
        assert!(d.iter().all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn scalar_misfit() {
        // m = 1: F is the identity, so R = sqrt(d) e^{i arg(qz)} = 1.
        let phi = misfit_region(&scalar(c(1.0, 0.0)), &scalar(c(2.0, 0.0)), &Grid::filled(1, 1, 1.0)).unwrap();
        assert!((phi - 0.5).abs() < 1e-15);
    }

    #[test]
    fn revised_wave_zero_exit_wave_uses_zero_phase() {
        let d = Grid::from_fn(2, 2, |r, col| (r + 2 * col) as f64);
        let rw = revised_exit_wave(&ComplexField::zeros(2, 2), &ComplexField::ones(2, 2), &d, None).unwrap();
        assert!(rw.phase.iter().all(|p| *p == 0.0));
        let expect = ifft2(&d.map(|v| c(v.sqrt(), 0.0))).unwrap();
        for (a, b) in rw.wave.iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn revised_wave_zero_exit_wave_uses_cache() {
        let d = RealField::filled(2, 2, 1.0);
        let cache = Grid::from_fn(2, 2, |r, col| 0.1 * (r * 2 + col) as f64);
        let rw = revised_exit_wave(&ComplexField::zeros(2, 2), &ComplexField::ones(2, 2), &d, Some(&cache)).unwrap();
        assert_eq!(rw.phase, cache);
    }

    #[test]
    fn revised_wave_zero_intensity() {
        let q = Grid::from_fn(4, 4, |r, col| c(1.0 + r as f64, col as f64));
        let rw = revised_exit_wave(&q, &ComplexField::ones(4, 4), &RealField::zeros(4, 4), None).unwrap();
        assert!(rw.wave.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn negative_intensity_rejected() {
        let d = RealField::filled(1, 1, -1.0);
        assert!(matches!(
            revised_exit_wave(&scalar(c(1.0, 0.0)), &scalar(c(1.0, 0.0)), &d, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn real_gradient_reduces_to_real_formula() {
        let q = Grid::from_vec(1, 2, vec![c(2.0, 0.0), c(0.5, 0.0)]).unwrap();
        // non-square is rejected, use 2x2
        assert!(grad_z(&q, &q, &RealField::zeros(1, 2)).is_err());
        let q = Grid::from_fn(2, 2, |r, col| c(1.0 + r as f64 + 0.5 * col as f64, 0.0));
        let z = Grid::from_fn(2, 2, |r, col| c(0.3 * r as f64 - 0.2 * col as f64 + 0.1, 0.0));
        let d = Grid::from_fn(2, 2, |r, col| 0.5 + (r + col) as f64);
        let g = grad_z(&q, &z, &d).unwrap();
        let r = revised_exit_wave(&q, &z, &d, None).unwrap().wave;
        for i in 0..4 {
            let (qq, zz, rr) = (q.as_slice()[i].re, z.as_slice()[i].re, r.as_slice()[i]);
            let expect = c(qq * qq * zz, 0.0) - qq * rr;
            assert!((g.as_slice()[i] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn noise_percent_trivial_cases() {
        let clean = vec![Grid::from_fn(3, 3, |r, col| (r * 3 + col) as f64)];
        assert_eq!(noise_percent(&clean, &clean).unwrap(), 0.0);
        let doubled: Vec<_> = clean.iter().map(|f| f.map(|v| 2.0 * v)).collect();
        assert!((noise_percent(&doubled, &clean).unwrap() - 100.0).abs() < 1e-12);
        assert!(noise_percent(&clean, &[RealField::zeros(3, 3)]).is_err());
    }

    #[test]
    fn poisson_noise_shrinks_with_flux() {
        let clean = vec![Grid::from_fn(16, 16, |r, col| 1.0 + ((r * 16 + col) % 7) as f64)];
        let levels: Vec<f64> = (0..=6)
            .map(|e| {
                let noisy = poisson_sample(&clean, 10f64.powi(e), 3).unwrap();
                noise_percent(&noisy, &clean).unwrap()
            })
            .collect();
        for w in levels.windows(2) {
            assert!(w[1] < w[0], "{levels:?}");
        }
        assert!(levels[6] < 0.1);
    }

    #[test]
    fn poisson_noise_is_seeded() {
        let clean = vec![Grid::from_fn(8, 8, |r, col| (r + col) as f64)];
        let a = add_poisson_noise(&clean, 10.0, 9).unwrap();
        let b = add_poisson_noise(&clean, 10.0, 9).unwrap();
        assert_eq!(a.intensities, b.intensities);
        assert_eq!(a.achieved_percent, b.achieved_percent);
        let c = add_poisson_noise(&clean, 10.0, 10).unwrap();
        assert_ne!(a.intensities, c.intensities);
    }

    #[test]
    fn calibration_errors() {
        let zero = vec![RealField::zeros(4, 4)];
        assert!(matches!(add_poisson_noise(&zero, 5.0, 0), Err(Error::Calibration(_))));
        let one = vec![RealField::filled(4, 4, 1.0)];
        assert!(matches!(add_poisson_noise(&one, 0.0, 0), Err(Error::Config(_))));
    }
}
