//! Helpers shared by the integration tests: random problems and a
//! straight-line reference implementation of the PIE region updates that
//! uses its own O(m^4) DFT instead of the library FFT.

#![allow(dead_code)]

use std::f64::consts::PI;

use emagpie::field::{ComplexField, RealField, ScanGeometry};
use emagpie::forward::{measure, Dataset};
use emagpie::runner::{permutation, SEED_SWEEP};
use emagpie::simulate::derive_seed;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexField {
    ComplexField::from_fn(rows, cols, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

/// Nonzero entries with magnitudes in [lo, lo + 1).
pub fn random_nonzero(rng: &mut ChaCha8Rng, side: usize, lo: f64) -> ComplexField {
    ComplexField::from_fn(side, side, |_, _| {
        Complex64::from_polar(lo + rng.random::<f64>(), 2.0 * PI * rng.random::<f64>())
    })
}

/// Raster geometry with the given step; the last row/column is clamped to the edge.
pub fn raster(m: usize, n: usize, step: usize) -> ScanGeometry {
    let mut starts: Vec<usize> = (0..=n - m).step_by(step).collect();
    if *starts.last().unwrap() != n - m {
        starts.push(n - m);
    }
    let offsets = starts.iter().flat_map(|&r| starts.iter().map(move |&c| (r, c))).collect();
    ScanGeometry::new(m, n, offsets).unwrap()
}

/// Data measured from a random truth, with every frame scaled by a random
/// factor in [0.5, 1.5) so the data are not exactly consistent.
pub fn random_problem(seed: u64, m: usize, n: usize, step: usize) -> (Dataset, ComplexField, ComplexField) {
    let mut r = rng(seed);
    let geom = raster(m, n, step);
    let q = random_nonzero(&mut r, m, 0.2);
    let z = random_nonzero(&mut r, n, 0.2);
    let clean = measure(&q, &z, &geom).unwrap();
    let data = clean.iter().map(|d| d.map(|v| v * (0.5 + r.random::<f64>()))).collect();
    let ds = Dataset::new(geom, data).unwrap();
    let q0 = random_nonzero(&mut r, m, 0.2);
    let z0 = random_nonzero(&mut r, n, 0.2);
    (ds, q0, z0)
}

/// Two 8x8 regions at (0, 0) and (4, 4) on a 12x12 object, consistent data
/// and an unrelated random start.
pub fn two_region_problem(seed: u64) -> (Dataset, ComplexField, ComplexField) {
    let mut r = rng(seed);
    let geom = ScanGeometry::new(8, 12, vec![(0, 0), (4, 4)]).unwrap();
    let q = random_nonzero(&mut r, 8, 0.3);
    let z = random_nonzero(&mut r, 12, 0.3);
    let data = measure(&q, &z, &geom).unwrap();
    let ds = Dataset::new(geom, data).unwrap();
    (ds, random_nonzero(&mut r, 8, 0.3), random_nonzero(&mut r, 12, 0.3))
}

/// Unitary 2-D DFT by direct summation; `sign = -1` forward, `+1` inverse.
pub fn naive_dft(x: &ComplexField, sign: f64) -> ComplexField {
    let (rows, cols) = x.shape();
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    ComplexField::from_fn(rows, cols, |k1, k2| {
        let mut acc = Complex64::new(0.0, 0.0);
        for n1 in 0..rows {
            for n2 in 0..cols {
                // reduce the index first so the twiddle argument stays small
                let t = sign
                    * 2.0
                    * PI
                    * (((k1 * n1) % rows) as f64 / rows as f64 + ((k2 * n2) % cols) as f64 / cols as f64);
                acc += x[(n1, n2)] * Complex64::new(t.cos(), t.sin());
            }
        }
        acc * scale
    })
}

fn revised_wave(q: &ComplexField, z_k: &ComplexField, d: &RealField) -> ComplexField {
    let m = q.rows();
    let psi = ComplexField::from_fn(m, m, |r, c| q[(r, c)] * z_k[(r, c)]);
    let f = naive_dft(&psi, -1.0);
    let g = ComplexField::from_fn(m, m, |r, c| {
        let v = f[(r, c)];
        let th = if v.norm() == 0.0 { 0.0 } else { v.im.atan2(v.re) };
        Complex64::from_polar(d[(r, c)].sqrt(), th)
    });
    naive_dft(&g, 1.0)
}

fn patch(z: &ComplexField, m: usize, (r0, c0): (usize, usize)) -> ComplexField {
    ComplexField::from_fn(m, m, |r, c| z[(r0 + r, c0 + c)])
}

fn sup2(x: &ComplexField) -> f64 {
    x.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max)
}

/// Both one-variable minimizers at the current iterate.
fn plus_pair(q: &ComplexField, z_k: &ComplexField, d: &RealField, alpha: f64) -> (ComplexField, ComplexField) {
    let m = q.rows();
    let rk = revised_wave(q, z_k, d);
    let (qmax, zmax) = (sup2(q), sup2(z_k));
    let mut zplus = z_k.clone();
    let mut qplus = q.clone();
    for r in 0..m {
        for c in 0..m {
            let (qi, zi) = (q[(r, c)], z_k[(r, c)]);
            let resid = rk[(r, c)] - qi * zi;
            let uq = alpha * (qmax - qi.norm_sqr());
            let uz = zmax - zi.norm_sqr();
            zplus[(r, c)] = zi + qi.conj() * resid / (uq + qi.norm_sqr());
            qplus[(r, c)] = qi + zi.conj() * resid / (uz + zi.norm_sqr());
        }
    }
    (zplus, qplus)
}

fn branch_sqrt(cur: Complex64, plus: Complex64) -> Complex64 {
    let s = (cur * plus).sqrt();
    if (s * cur.conj()).re < 0.0 {
        -s
    } else {
        s
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OracleRule {
    /// Assign both minimizers directly.
    Alternating,
    /// Phase-aligned geometric mean of old and new values.
    Joint,
}

/// Runs `sweeps` sweeps of the reference update with the library's sweep
/// order; returns the iterate after every sweep.
pub fn oracle_run(
    ds: &Dataset,
    q0: &ComplexField,
    z0: &ComplexField,
    alpha: f64,
    seed: u64,
    sweeps: usize,
    rule: OracleRule,
) -> Vec<(ComplexField, ComplexField)> {
    let m = ds.probe_side();
    let mut order_rng = rng(derive_seed(seed, SEED_SWEEP));
    let (mut q, mut z) = (q0.clone(), z0.clone());
    let mut out = Vec::new();
    for _ in 0..sweeps {
        for k in permutation(&mut order_rng, ds.len()) {
            let off = ds.geometry.offsets()[k];
            let z_k = patch(&z, m, off);
            let (zplus, qplus) = plus_pair(&q, &z_k, &ds.intensities[k], alpha);
            let (zn, qn) = match rule {
                OracleRule::Alternating => (zplus, qplus),
                OracleRule::Joint => (
                    ComplexField::from_fn(m, m, |r, c| branch_sqrt(z_k[(r, c)], zplus[(r, c)])),
                    ComplexField::from_fn(m, m, |r, c| branch_sqrt(q[(r, c)], qplus[(r, c)])),
                ),
            };
            for r in 0..m {
                for c in 0..m {
                    z[(off.0 + r, off.1 + c)] = zn[(r, c)];
                }
            }
            q = qn;
        }
        out.push((q.clone(), z.clone()));
    }
    out
}

/// `max |a - b| / max |b|`.
pub fn rel_dev(a: &ComplexField, b: &ComplexField) -> f64 {
    let num = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    num / den
}
