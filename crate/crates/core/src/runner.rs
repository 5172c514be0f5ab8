//! Solver orchestration: randomized sweeps, stopping rules, convergence
//! logs and optional per-sweep certification.
//!
//! # Reproducibility
//!
//! Every run draws its scan orders from a ChaCha8 stream (`rand_chacha`)
//! seeded with [`rand::SeedableRng::seed_from_u64`] on
//! `derive_seed(seed, SEED_SWEEP)`. Each sweep shuffles `0..N` with a
//! Fisher-Yates pass from the last index down, taking the swap partner
//! for index `i` as `(x * (i + 1)) >> 64` where `x` is the next `u64` of
//! the stream (a widening multiply, no rejection). The order therefore
//! depends only on the seed and `N`.

use std::fmt;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{extract_patch, write_patch, ComplexField};
use crate::forward::{misfit, Dataset};
use crate::metrics::{magnitude_error, MetricSample};
use crate::multigrid::{check_levels, emagpie_update_region};
use crate::pie::{joint_combine, rpie_update_region, update_parts, ProbeRule, Regularization, EPSILON_FLOOR};
use crate::simulate::derive_seed;
use crate::surrogate::{anchors_at, certify_joint_update, surrogate_total, PhaseCache, MAJORIZATION_TOLERANCE};

pub const SEED_SWEEP: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Both one-variable minimizers from the current iterate, assigned directly.
    Rpie,
    /// MAGPIE object step, proximal probe step, geometric-mean combination.
    Emagpie,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Rpie => "rpie",
            Algorithm::Emagpie => "emagpie",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rpie" => Ok(Algorithm::Rpie),
            "emagpie" => Ok(Algorithm::Emagpie),
            other => Err(Error::Config(format!("unknown algorithm '{other}' (expected rpie or emagpie)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopConfig {
    pub window: usize,
    pub patience: usize,
    pub max_iters: usize,
    /// Misfit at the ground truth on the noisy data.
    pub noise_floor: Option<f64>,
    pub floor_factor: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self { window: 5, patience: 10, max_iters: 500, noise_floor: None, floor_factor: 0.9 }
    }
}

impl StopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.patience == 0 {
            return Err(Error::Config("window and patience must be at least 1".into()));
        }
        if !(self.floor_factor > 0.0 && self.floor_factor <= 1.0) {
            return Err(Error::Config(format!("floor_factor must lie in (0, 1], got {}", self.floor_factor)));
        }
        if let Some(f) = self.noise_floor {
            if !(f >= 0.0) || !f.is_finite() {
                return Err(Error::Config(format!("noise floor must be finite and >= 0, got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub alpha_q: f64,
    pub probe_rule: ProbeRule,
    /// Coarse levels for eMAGPIE; ignored by rPIE.
    pub levels: usize,
    pub seed: u64,
    pub stop: StopConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Emagpie,
            alpha_q: 0.05,
            probe_rule: ProbeRule::Epie,
            levels: 1,
            seed: 0,
            stop: StopConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn regularization(&self) -> Result<Regularization> {
        let reg = Regularization { alpha_q: self.alpha_q, probe_rule: self.probe_rule, epsilon_floor: EPSILON_FLOOR };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self, probe_side: usize) -> Result<()> {
        self.regularization()?;
        self.stop.validate()?;
        if self.algorithm == Algorithm::Emagpie {
            check_levels(probe_side, self.levels).map_err(|_| {
                Error::Config(format!("probe side {probe_side} is not divisible by 2^{} (levels)", self.levels))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MovingAverage,
    NoiseFloor,
    MaxIters,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MovingAverage => "moving_average",
            StopReason::NoiseFloor => "noise_floor",
            StopReason::MaxIters => "max_iters",
        })
    }
}

/// Per-sweep certification summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCertificate {
    /// `min(Phi~ - Phi)` at the new iterate, surrogate anchored at the previous one.
    pub majorization_margin: f64,
    /// `|Phi~ - Phi|` at the anchor itself.
    pub anchor_gap: f64,
    pub regions: usize,
    /// Region visits whose surrogate value did not increase.
    pub regions_descended: usize,
    /// Region visits failing the entrywise bound; counted only for proximal joint updates.
    pub entrywise_failures: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub samples: Vec<MetricSample>,
    pub stop_reason: Option<StopReason>,
    /// One entry per sweep in certified runs, empty otherwise.
    pub certificates: Vec<SweepCertificate>,
}

impl ConvergenceLog {
    pub fn residuals(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.residual).collect()
    }

    pub fn last(&self) -> Option<&MetricSample> {
        self.samples.last()
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub q: ComplexField,
    pub z: ComplexField,
    pub phase_cache: PhaseCache,
    pub rng: ChaCha8Rng,
    /// Completed sweeps.
    pub iter: usize,
    pub log: ConvergenceLog,
}

impl SolverState {
    pub fn new(q0: ComplexField, z0: ComplexField, dataset: &Dataset, seed: u64) -> Result<Self> {
        dataset.validate()?;
        let m = dataset.probe_side();
        let n = dataset.object_side();
        if q0.shape() != (m, m) {
            return Err(Error::shape(format!("initial probe is {:?}, expected {m}x{m}", q0.shape())));
        }
        if z0.shape() != (n, n) {
            return Err(Error::shape(format!("initial object is {:?}, expected {n}x{n}", z0.shape())));
        }
        Ok(Self {
            q: q0,
            z: z0,
            phase_cache: PhaseCache::new(dataset.len()),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_SWEEP)),
            iter: 0,
            log: ConvergenceLog::default(),
        })
    }
}

/// Portable Fisher-Yates shuffle of `0..n` (see the module docs).
pub fn permutation(rng: &mut impl RngCore, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Switches applied to a run that do not change the iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub certify: bool,
    /// Record wall-clock time; disable for byte-identical logs.
    pub record_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { certify: false, record_time: true }
    }
}

struct RegionTally {
    descended: usize,
    entrywise_failures: usize,
}

/// One randomized pass over all regions, then one logged sample.
pub fn sweep(state: &mut SolverState, dataset: &Dataset, config: &SolverConfig) -> Result<()> {
    sweep_inner(state, dataset, config, false, None).map(|_| ())
}

fn sweep_inner(
    state: &mut SolverState,
    dataset: &Dataset,
    config: &SolverConfig,
    certify: bool,
    clock: Option<Instant>,
) -> Result<RegionTally> {
    let reg = config.regularization()?;
    let geom = &dataset.geometry;
    let order = permutation(&mut state.rng, geom.len());
    let mut tally = RegionTally { descended: 0, entrywise_failures: 0 };
    for k in order {
        let z_k = extract_patch(&state.z, geom, k)?;
        let d_k = &dataset.intensities[k];
        let cache = state.phase_cache.get(k);
        let update = if certify {
            certified_update(&state.q, &z_k, d_k, &reg, cache, config, &mut tally)?
        } else {
            match config.algorithm {
                Algorithm::Rpie => rpie_update_region(&state.q, &z_k, d_k, &reg, cache)?,
                Algorithm::Emagpie => emagpie_update_region(&state.q, &z_k, d_k, &reg, cache, config.levels)?,
            }
        };
        write_patch(&mut state.z, &update.z_k, geom, k)?;
        state.q = update.q;
        state.phase_cache.store(k, update.phase, state.iter)?;
    }
    state.iter += 1;
    let residual = misfit(&state.q, &state.z, dataset)?;
    let mag_error = match &dataset.truth_object {
        Some(t) => Some(magnitude_error(&state.z, t)?),
        None => None,
    };
    let elapsed_s = clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
    state.log.samples.push(MetricSample { iter: state.iter, residual, mag_error, elapsed_s });
    Ok(tally)
}

fn certified_update(
    q: &ComplexField,
    z_k: &ComplexField,
    d_k: &crate::field::RealField,
    reg: &Regularization,
    cache: Option<&crate::field::RealField>,
    config: &SolverConfig,
    tally: &mut RegionTally,
) -> Result<crate::pie::RegionUpdate> {
    let levels = match config.algorithm {
        Algorithm::Rpie => 0,
        Algorithm::Emagpie => config.levels,
    };
    let p = update_parts(q, z_k, d_k, reg, cache, levels)?;
    let (new_q, new_z) = match config.algorithm {
        Algorithm::Rpie => (p.qplus.clone(), p.zplus.clone()),
        Algorithm::Emagpie => {
            let c = joint_combine(z_k, &p.zplus, q, &p.qplus)?;
            if levels == 0 {
                let cert = certify_joint_update(q, z_k, &p.anchor.wave, &p.u_obj, &p.u_probe, &p.zplus, &p.qplus, &c)?;
                if !cert.passed() {
                    tally.entrywise_failures += 1;
                }
            }
            (c.q, c.z_k)
        }
    };
    let before: f64 = sq_dist(q, z_k, &p.anchor.wave);
    let after: f64 = sq_dist(&new_q, &new_z, &p.anchor.wave);
    if after <= before * (1.0 + 1e-12) {
        tally.descended += 1;
    }
    Ok(crate::pie::RegionUpdate { q: new_q, z_k: new_z, phase: p.anchor.phase })
}

fn sq_dist(q: &ComplexField, z: &ComplexField, r: &ComplexField) -> f64 {
    q.iter().zip(z.iter()).zip(r.iter()).map(|((a, b), c)| (a * b - c).norm_sqr()).sum()
}

/// Moving-average, noise-floor and iteration-cap rules, in that order of precedence.
///
/// The moving average `r_t` over the last `w` residuals is compared with
/// the best average seen before `t`; the run stops once it has failed to
/// improve on that best for `p` consecutive sweeps. The first average has
/// nothing to compare against, so a constant sequence stops after exactly
/// `w + p` sweeps.
pub fn should_stop(log: &ConvergenceLog, stop: &StopConfig) -> Option<StopReason> {
    let last = log.samples.last()?;
    if let Some(floor) = stop.noise_floor {
        if last.residual < stop.floor_factor * floor {
            return Some(StopReason::NoiseFloor);
        }
    }
    if moving_average_stalled(&log.residuals(), stop.window, stop.patience) {
        return Some(StopReason::MovingAverage);
    }
    if last.iter >= stop.max_iters {
        return Some(StopReason::MaxIters);
    }
    None
}

/// Moving averages `r_t` for `t >= w` (one per full window).
pub fn moving_averages(residuals: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || residuals.len() < window {
        return Vec::new();
    }
    residuals.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

fn moving_average_stalled(residuals: &[f64], window: usize, patience: usize) -> bool {
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for (i, avg) in moving_averages(residuals, window).into_iter().enumerate() {
        if i > 0 && avg >= best {
            stalled += 1;
        } else {
            stalled = 0;
        }
        best = best.min(avg);
    }
    stalled >= patience
}

/// `Phi(Q*, z*)` on the (noisy) intensities.
pub fn noise_floor(dataset: &Dataset) -> Result<f64> {
    let (q, z) = match (&dataset.truth_probe, &dataset.truth_object) {
        (Some(q), Some(z)) => (q, z),
        _ => return Err(Error::Missing("noise floor needs the truth object and probe".into())),
    };
    misfit(q, z, dataset)
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SolverState,
    pub stop_reason: StopReason,
}

impl RunOutcome {
    pub fn log(&self) -> &ConvergenceLog {
        &self.state.log
    }

    /// All sweep certificates passed (vacuously true for uncertified runs).
    pub fn certified(&self) -> bool {
        self.state.log.certificates.iter().all(|c| c.passed)
    }
}

/// Sweeps until a stopping rule fires.
pub fn run(
    dataset: &Dataset,
    config: &SolverConfig,
    q0: ComplexField,
    z0: ComplexField,
    options: RunOptions,
) -> Result<RunOutcome> {
    config.validate(dataset.probe_side())?;
    if config.stop.max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    let mut state = SolverState::new(q0, z0, dataset, config.seed)?;
    let clock = options.record_time.then(Instant::now);
    let reason = loop {
        if options.certify {
            let (q_old, z_old) = (state.q.clone(), state.z.clone());
            let anchors = anchors_at(&q_old, &z_old, dataset, Some(&state.phase_cache))?;
            let phi_old = misfit(&q_old, &z_old, dataset)?;
            let anchor_gap = (surrogate_total(&q_old, &z_old, dataset, &anchors)? - phi_old).abs();
            let tally = sweep_inner(&mut state, dataset, config, true, clock)?;
            let phi_new = state.log.samples.last().map_or(0.0, |s| s.residual);
            let margin = surrogate_total(&state.q, &state.z, dataset, &anchors)? - phi_new;
            let regions = dataset.len();
            let passed = margin >= MAJORIZATION_TOLERANCE
                && anchor_gap <= 1e-12 * (1.0 + phi_old)
                && tally.entrywise_failures == 0;
            state.log.certificates.push(SweepCertificate {
                majorization_margin: margin,
                anchor_gap,
                regions,
                regions_descended: tally.descended,
                entrywise_failures: tally.entrywise_failures,
                passed,
            });
        } else {
            sweep_inner(&mut state, dataset, config, false, clock)?;
        }
        let last = state.log.samples.last().expect("sample just pushed");
        if !last.residual.is_finite() {
            return Err(Error::Internal(format!("residual became non-finite at sweep {}", last.iter)));
        }
        if let Some(reason) = should_stop(&state.log, &config.stop) {
            break reason;
        }
    };
    state.log.stop_reason = Some(reason);
    log::info!(
        "{} stopped after {} sweeps ({reason}), residual {:.6e}",
        config.algorithm,
        state.iter,
        state.log.samples.last().map_or(f64::NAN, |s| s.residual)
    );
    Ok(RunOutcome { state, stop_reason: reason })
}
