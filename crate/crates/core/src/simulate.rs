//! Synthetic experiments: zone-plate probe, image-derived object, perturbed
//! probe initialization, data-driven probe normalization and raster scans.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fft2, ifft2, ComplexField, Grid, RealField, ScanGeometry};
use crate::forward::{add_poisson_noise, measure, Dataset};

/// Wavelength of 10 keV x-rays, meters.
pub const WAVELENGTH_10KEV: f64 = 1.2398e-10;

/// Fresnel zone plate and propagation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FzpParams {
    pub wavelength: f64,
    pub grid_side: usize,
    pub pixel_size: f64,
    pub outer_radius: f64,
    pub outermost_zone_width: f64,
    pub central_stop_diameter: f64,
    /// Signed offset from the focal plane to the sample.
    pub defocus_offset: f64,
}

impl FzpParams {
    /// Scaled-down zone plate that is well sampled on an `m x m` grid with
    /// 10 nm pixels at 10 keV.
    ///
    /// The aperture spans 62.5% of the field, the focal length keeps the
    /// outermost zone above the Nyquist limit, and the sample sits a quarter
    /// of the focal length downstream of the plate, where the converging
    /// beam covers about half the field.
    pub fn synthetic(m: usize) -> Self {
        let dx = 10e-9;
        let lambda = WAVELENGTH_10KEV;
        let outer_radius = 0.3125 * m as f64 * dx;
        let focal = 0.8 * m as f64 * dx * dx / lambda;
        Self {
            wavelength: lambda,
            grid_side: m,
            pixel_size: dx,
            outer_radius,
            outermost_zone_width: focal * lambda / (2.0 * outer_radius),
            central_stop_diameter: 2.0 * outer_radius / 3.0,
            defocus_offset: -0.75 * focal,
        }
    }

    /// The Velociprobe zone plate (180 um diameter, 50 nm outermost zone,
    /// 60 um central stop) 300 um upstream of focus.
    pub fn velo(grid_side: usize, pixel_size: f64, wavelength: f64) -> Self {
        Self {
            wavelength,
            grid_side,
            pixel_size,
            outer_radius: 90e-6,
            outermost_zone_width: 50e-9,
            central_stop_diameter: 60e-6,
            defocus_offset: -3e-4,
        }
    }

    /// `f = 2 R_n dR_n / lambda`.
    pub fn focal_length(&self) -> f64 {
        2.0 * self.outer_radius * self.outermost_zone_width / self.wavelength
    }

    pub fn propagation_distance(&self) -> f64 {
        self.focal_length() + self.defocus_offset
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("pixel_size", self.pixel_size),
            ("outer_radius", self.outer_radius),
            ("outermost_zone_width", self.outermost_zone_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.central_stop_diameter >= 0.0) || !self.central_stop_diameter.is_finite() {
            return Err(Error::Config(format!(
                "central_stop_diameter must be non-negative, got {}",
                self.central_stop_diameter
            )));
        }
        if !self.defocus_offset.is_finite() {
            return Err(Error::Config("defocus_offset must be finite".into()));
        }
        if self.grid_side == 0 || self.grid_side % 2 != 0 {
            return Err(Error::Config(format!("grid_side must be even and positive, got {}", self.grid_side)));
        }
        if !self.focal_length().is_finite() {
            return Err(Error::Config("focal length is not finite".into()));
        }
        if self.central_stop_diameter / 2.0 >= self.outer_radius {
            return Err(Error::Config("central stop covers the whole aperture".into()));
        }
        Ok(())
    }

    /// Sampling diagnostics; empty when the transfer-function method is valid.
    pub fn sampling_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.grid_side as f64;
        let dx = self.pixel_size;
        let z = self.propagation_distance().abs();
        let z_max = m * dx * dx / self.wavelength;
        if z > z_max {
            out.push(format!("propagation distance {z:.3e} m exceeds the transfer-function limit {z_max:.3e} m"));
        }
        let half = 0.5 * m * dx;
        if self.outer_radius > half {
            out.push(format!("aperture radius {:.3e} m exceeds the half field {half:.3e} m", self.outer_radius));
        }
        // local frequency of the lens phase at the rim, cycles per meter
        let rim = self.outer_radius.min(half) / (self.wavelength * self.focal_length());
        if rim > 0.5 / dx {
            out.push(format!("lens phase aliases at the rim ({rim:.3e} > {:.3e} cycles/m)", 0.5 / dx));
        }
        out
    }
}

/// Signed DFT frequency of bin `k`, in cycles per sample.
fn fftfreq(k: usize, m: usize) -> f64 {
    let k = k as f64;
    let m_f = m as f64;
    if (k as usize) < m.div_ceil(2) {
        k / m_f
    } else {
        (k - m_f) / m_f
    }
}

/// Paraxial transfer-function propagation over `distance`.
///
/// Multiplies the spectrum by `exp(-i pi lambda z (fx^2 + fy^2))`, a pure
/// phase, so the l2 norm is preserved.
pub fn fresnel_propagate(
    field: &ComplexField,
    pixel_size: f64,
    wavelength: f64,
    distance: f64,
) -> Result<ComplexField> {
    let m = field.rows();
    let mut spec = fft2(field)?;
    let scale = PI * wavelength * distance / (pixel_size * pixel_size);
    for r in 0..m {
        let fy = fftfreq(r, m);
        for c in 0..m {
            let fx = fftfreq(c, m);
            spec[(r, c)] *= Complex64::from_polar(1.0, -scale * (fx * fx + fy * fy));
        }
    }
    ifft2(&spec)
}

fn centered(i: usize, m: usize) -> f64 {
    i as f64 - (m / 2) as f64
}

/// Apertured quadratic lens phase at the zone plate, propagated to the sample.
pub fn make_fzp_probe(p: &FzpParams) -> Result<ComplexField> {
    p.validate()?;
    for w in p.sampling_warnings() {
        log::warn!("zone plate sampling: {w}");
    }
    let m = p.grid_side;
    let f = p.focal_length();
    let r_stop = 0.5 * p.central_stop_diameter;
    let lens = Grid::from_fn(m, m, |r, c| {
        let y = centered(r, m) * p.pixel_size;
        let x = centered(c, m) * p.pixel_size;
        let rad2 = x * x + y * y;
        let rad = rad2.sqrt();
        if rad >= r_stop && rad <= p.outer_radius {
            Complex64::from_polar(1.0, -PI * rad2 / (p.wavelength * f))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    if lens.norm_sqr() == 0.0 {
        return Err(Error::Config("zone plate aperture contains no grid points".into()));
    }
    fresnel_propagate(&lens, p.pixel_size, p.wavelength, p.propagation_distance())
}

/// Degradations applied to the true probe to form the initial guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbePerturbation {
    pub sigma_amp: f64,
    /// Largest absolute value of the linear ramp over the field, radians.
    pub ramp_magnitude: f64,
    pub defocus_coeff: f64,
    pub astig_coeff: f64,
    pub noise_amp: f64,
}

impl Default for ProbePerturbation {
    fn default() -> Self {
        Self { sigma_amp: 2.0, ramp_magnitude: 7.0, defocus_coeff: 0.6, astig_coeff: 0.2, noise_amp: 0.01 }
    }
}

impl ProbePerturbation {
    pub fn none() -> Self {
        Self { sigma_amp: 0.0, ramp_magnitude: 0.0, defocus_coeff: 0.0, astig_coeff: 0.0, noise_amp: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_amp >= 0.0) || !self.sigma_amp.is_finite() {
            return Err(Error::Config(format!("sigma_amp must be >= 0, got {}", self.sigma_amp)));
        }
        if !(0.0..1.0).contains(&self.noise_amp) {
            return Err(Error::Config(format!("noise_amp must lie in [0, 1), got {}", self.noise_amp)));
        }
        for (name, v) in [
            ("ramp_magnitude", self.ramp_magnitude),
            ("defocus_coeff", self.defocus_coeff),
            ("astig_coeff", self.astig_coeff),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Gaussian blur by multiplying the spectrum with `exp(-2 pi^2 sigma^2 |f|^2)`.
pub fn gaussian_blur(x: &RealField, sigma: f64) -> Result<RealField> {
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let m = x.rows();
    let mut spec = fft2(&x.to_complex())?;
    let k = 2.0 * PI * PI * sigma * sigma;
    for r in 0..m {
        let fy = fftfreq(r, m);
        for c in 0..m {
            let fx = fftfreq(c, m);
            spec[(r, c)] *= (-k * (fx * fx + fy * fy)).exp();
        }
    }
    Ok(ifft2(&spec)?.map(|v| v.re))
}

/// Normalized probe coordinate in `[-1, 1]`.
fn unit_coord(i: usize, m: usize) -> f64 {
    if m < 2 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (m - 1) as f64
    }
}

/// Initial probe guess from the true probe.
///
/// Magnitude is blurred and clamped at zero, then the phase
/// `a_x x + a_y y + c_d (x^2 + y^2) + c_a (x^2 - y^2)` is applied on
/// coordinates normalized to `[-1, 1]`. The ramp direction is uniform on
/// the circle and scaled so that `|a_x| + |a_y|` (the largest ramp value on
/// the field) equals `ramp_magnitude`. Complex Gaussian noise with RMS
/// `noise_amp * max|Q|` is added last.
pub fn perturb_probe(q_true: &ComplexField, p: &ProbePerturbation, seed: u64) -> Result<ComplexField> {
    p.validate()?;
    let m = q_true.rows();
    let mag = gaussian_blur(&q_true.abs(), p.sigma_amp)?.map(|v| v.max(0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: f64 = rng.random::<f64>() * TAU;
    let (s, c) = dir.sin_cos();
    let norm = c.abs() + s.abs();
    let (a_x, a_y) = (p.ramp_magnitude * c / norm, p.ramp_magnitude * s / norm);

    let mut out = Grid::from_fn(m, q_true.cols(), |r, col| {
        let y = unit_coord(r, m);
        let x = unit_coord(col, q_true.cols());
        let phase = a_x * x + a_y * y + p.defocus_coeff * (x * x + y * y) + p.astig_coeff * (x * x - y * y);
        Complex64::from_polar(mag[(r, col)], phase)
    });
    if p.noise_amp > 0.0 {
        let sd = p.noise_amp * mag.max() / 2f64.sqrt();
        for v in out.as_mut_slice() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(re, im) * sd;
        }
    }
    Ok(out)
}

/// Target probe norm from the data.
///
/// Intensities are stored on the unitary-DFT scale, where
/// `sum(d_k) = ||Q . z_k||^2`, so the target is `sqrt(sum_ij mean_k d_k)`.
/// This is the same quantity as `sqrt(sum mean d) / m` for data recorded
/// with an unnormalized DFT.
pub fn dp_avg(dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::contract("dataset has no frames"));
    }
    let total: f64 = dataset.intensities.iter().map(RealField::sum).sum();
    Ok((total / dataset.len() as f64).sqrt())
}

/// Rescales `q` to the norm [`dp_avg`].
pub fn normalize_probe(q: &ComplexField, dataset: &Dataset) -> Result<ComplexField> {
    let norm = q.norm();
    if norm == 0.0 {
        return Err(Error::contract("cannot normalize a zero probe"));
    }
    let target = dp_avg(dataset)?;
    Ok(q.scale(Complex64::new(target / norm, 0.0)))
}

/// Scan step for an overlap ratio: `round((1 - overlap) m)`.
pub fn scan_step(m: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let step = ((1.0 - overlap) * m as f64).round() as usize;
    if step == 0 {
        return Err(Error::Config(format!("overlap {overlap} gives a zero scan step for m = {m}")));
    }
    Ok(step)
}

/// Raster offsets `0, s, 2s, ...` along each axis, with a final position
/// clamped to `n - m`. Offsets are `(row, col)`, rows outermost.
pub fn make_scan_grid(n: usize, m: usize, overlap: f64) -> Result<ScanGeometry> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("probe side {m} must be in 1..={n}")));
    }
    let step = scan_step(m, overlap)?;
    let last = n - m;
    if last > 0 && step > last {
        log::warn!("scan step {step} exceeds the scan range {last}; only the two edge positions are used");
    }
    let mut axis: Vec<usize> = (0..).map(|i| i * step).take_while(|&p| p < last).collect();
    axis.push(last);
    let offsets = axis.iter().flat_map(|&r| axis.iter().map(move |&c| (r, c))).collect();
    ScanGeometry::new(m, n, offsets)
}

/// `z0 = 1` plus, when `noise_amp > 0`, independent uniform perturbations
/// in `[-noise_amp, noise_amp]` on the real and imaginary parts.
pub fn init_object_constant(n: usize, noise_amp: f64, seed: u64) -> Result<ComplexField> {
    if !(noise_amp >= 0.0) || !noise_amp.is_finite() {
        return Err(Error::Config(format!("object noise must be >= 0, got {noise_amp}")));
    }
    let mut z = ComplexField::ones(n, n);
    if noise_amp > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in z.as_mut_slice() {
            let re = rng.random_range(-noise_amp..=noise_amp);
            let im = rng.random_range(-noise_amp..=noise_amp);
            *v += Complex64::new(re, im);
        }
    }
    Ok(z)
}

/// Bilinear resampling onto an `n x n` grid (pixel-center aligned).
pub fn resample(img: &RealField, n: usize) -> RealField {
    let (rows, cols) = img.shape();
    if rows == n && cols == n {
        return img.clone();
    }
    let coord = |i: usize, len: usize| {
        let t = (i as f64 + 0.5) * len as f64 / n as f64 - 0.5;
        let t = t.clamp(0.0, (len - 1) as f64);
        let lo = t.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, t - lo as f64)
    };
    Grid::from_fn(n, n, |r, c| {
        let (r0, r1, fr) = coord(r, rows);
        let (c0, c1, fc) = coord(c, cols);
        let top = img[(r0, c0)] * (1.0 - fc) + img[(r0, c1)] * fc;
        let bot = img[(r1, c0)] * (1.0 - fc) + img[(r1, c1)] * fc;
        top * (1.0 - fr) + bot * fr
    })
}

/// Complex object from a magnitude image and a phase image.
///
/// Both are resampled to `n x n` and divided by their maximum; magnitude
/// then spans `[0, 1]` and phase `[0, pi/2]`.
pub fn make_object(mag_image: &RealField, phase_image: &RealField, n: usize) -> Result<ComplexField> {
    if n == 0 {
        return Err(Error::Config("object side must be positive".into()));
    }
    for img in [mag_image, phase_image] {
        if img.is_empty() || img.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("images must be non-empty with finite non-negative pixels".into()));
        }
    }
    let mag = resample(mag_image, n);
    let peak = mag.max();
    if peak <= 0.0 {
        return Err(Error::Config("magnitude image is identically zero".into()));
    }
    let phase = resample(phase_image, n);
    let phase_peak = phase.max();
    let phase_scale = if phase_peak > 0.0 { FRAC_PI_2 / phase_peak } else { 0.0 };
    Ok(Grid::from_fn(n, n, |r, c| Complex64::from_polar(mag[(r, c)] / peak, phase[(r, c)] * phase_scale)))
}

/// Reads an 8- or 16-bit grayscale PNG/PGM (color images are converted to luma).
pub fn load_grayscale(path: &Path) -> Result<RealField> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f64::from).collect();
    RealField::from_vec(h as usize, w as usize, data)
}

/// Procedural stand-in for a textured magnitude test image.
pub fn procedural_magnitude(n: usize) -> RealField {
    Grid::from_fn(n, n, |r, c| {
        let y = r as f64 / n as f64;
        let x = c as f64 / n as f64;
        let stripes = (TAU * (7.0 * x + 3.0 * y)).sin() * (TAU * (2.0 * x - 5.0 * y)).cos();
        let fine = (TAU * 23.0 * x).sin() * (TAU * 19.0 * y).sin();
        let eye = |cx: f64, cy: f64| (-((x - cx).powi(2) + (y - cy).powi(2)) / 0.004).exp();
        let v = 0.55 + 0.2 * stripes + 0.1 * fine - 0.4 * (eye(0.33, 0.35) + eye(0.67, 0.35))
            + 0.3 * (-((x - 0.5).powi(2) / 0.01 + (y - 0.7).powi(2) / 0.04)).exp();
        v.clamp(0.05, 1.0)
    })
}

/// Procedural stand-in for a piecewise-smooth phase test image.
pub fn procedural_phase(n: usize) -> RealField {
    Grid::from_fn(n, n, |r, c| {
        let y = r as f64 / n as f64;
        let x = c as f64 / n as f64;
        let mut v = 0.6 + 0.3 * y;
        // figure
        if (x - 0.45).powi(2) + (y - 0.3).powi(2) < 0.01 {
            v = 0.1;
        }
        if (0.38..0.52).contains(&x) && (0.38..0.85).contains(&y) {
            v = 0.15 + 0.1 * x;
        }
        // tripod
        if (y - 0.55 - 0.9 * (x - 0.6)).abs() < 0.01 && (0.55..0.85).contains(&y) {
            v = 0.2;
        }
        if y > 0.85 {
            v = 0.45 + 0.1 * (TAU * 9.0 * x).sin();
        }
        v
    })
}

/// Object built from the procedural images.
pub fn procedural_object(n: usize) -> ComplexField {
    make_object(&procedural_magnitude(n), &procedural_phase(n), n).expect("procedural images are valid")
}

/// Derives an independent sub-seed for a named stage of an experiment.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub const SEED_NOISE: u64 = 1;
pub const SEED_PROBE_INIT: u64 = 2;
pub const SEED_OBJECT_INIT: u64 = 3;

/// Synthetic experiment settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synthetic {
    pub n: usize,
    pub m: usize,
    pub overlap: f64,
    /// Target noise amplitude percentage; 0 for noiseless data.
    pub noise_percent: f64,
    pub seed: u64,
}

/// Measures `probe` over `object` on a raster scan and adds calibrated noise.
///
/// The returned dataset carries the truth and the clean intensities.
pub fn synthesize(exp: &Synthetic, object: &ComplexField, probe: &ComplexField) -> Result<Dataset> {
    if object.shape() != (exp.n, exp.n) || probe.shape() != (exp.m, exp.m) {
        return Err(Error::Config(format!(
            "object {:?} / probe {:?} do not match n = {}, m = {}",
            object.shape(),
            probe.shape(),
            exp.n,
            exp.m
        )));
    }
    if !(exp.noise_percent >= 0.0) || !exp.noise_percent.is_finite() {
        return Err(Error::Config(format!("noise percent must be >= 0, got {}", exp.noise_percent)));
    }
    let geometry = make_scan_grid(exp.n, exp.m, exp.overlap)?;
    let clean = measure(probe, object, &geometry)?;
    let (intensities, noise) = if exp.noise_percent > 0.0 {
        let noisy = add_poisson_noise(&clean, exp.noise_percent, derive_seed(exp.seed, SEED_NOISE))?;
        (noisy.intensities, Some(noisy.achieved_percent))
    } else {
        (clean.clone(), None)
    };
    let mut ds = Dataset::new(geometry, intensities)?;
    ds.clean_intensities = Some(clean);
    ds.truth_object = Some(object.clone());
    ds.truth_probe = Some(probe.clone());
    ds.noise_percent = noise;
    ds.validate()?;
    Ok(ds)
}

/// Initial `(Q0, z0)` for a synthetic dataset: perturbed true probe scaled
/// to [`dp_avg`], and the constant object.
pub fn initial_guess(
    dataset: &Dataset,
    perturbation: &ProbePerturbation,
    object_noise: f64,
    seed: u64,
) -> Result<(ComplexField, ComplexField)> {
    let q_true =
        dataset.truth_probe.as_ref().ok_or_else(|| Error::Missing("dataset has no truth probe to perturb".into()))?;
    let q0 = perturb_probe(q_true, perturbation, derive_seed(seed, SEED_PROBE_INIT))?;
    let q0 = normalize_probe(&q0, dataset)?;
    let z0 = init_object_constant(dataset.object_side(), object_noise, derive_seed(seed, SEED_OBJECT_INIT))?;
    Ok((q0, z0))
}
