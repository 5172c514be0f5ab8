//! Row-major 2-D grids, scan geometry and the patch operators.
//!
//! Every array in the crate (object, probe, exit waves, intensities) is a
//! [`Grid`] stored row-major with an explicit shape. Patches are addressed
//! by the top-left corner of the probe window inside the object.

mod fft;

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fft::{fft2, ifft2};

/// A dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Complex amplitudes: object, probe, exit waves.
pub type ComplexField = Grid<Complex64>;

/// Real values: intensities, phases, regularizer fields.
pub type RealField = Grid<f64>;

impl<T: Copy> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("empty grid {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{} values for a {rows}x{cols} grid", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "empty grid {rows}x{cols}");
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "empty grid {rows}x{cols}");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().copied().map(f).collect() }
    }

    /// Elementwise combination of two grids of identical shape.
    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Grid<U>, mut f: impl FnMut(T, U) -> V) -> Result<Grid<V>> {
        ensure_same_shape(self, other)?;
        Ok(Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub(crate) fn ensure_same_shape<T, U>(a: &Grid<T>, b: &Grid<U>) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::shape(format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    Ok(())
}

/// Principal argument in (-pi, pi], with arg(0) = 0.
#[inline]
pub fn principal_arg(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.im.atan2(c.re);
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Wraps an angle into (-pi, pi].
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w += TAU;
    }
    w
}

impl ComplexField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, Complex64::new(0.0, 0.0))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, Complex64::new(1.0, 0.0))
    }

    pub fn abs(&self) -> RealField {
        self.map(|c| c.norm())
    }

    pub fn abs2(&self) -> RealField {
        self.map(|c| c.norm_sqr())
    }

    pub fn phase(&self) -> RealField {
        self.map(principal_arg)
    }

    pub fn conj(&self) -> ComplexField {
        self.map(|c| c.conj())
    }

    pub fn scale(&self, s: Complex64) -> ComplexField {
        self.map(|c| c * s)
    }

    /// Squared l2 norm.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Largest squared modulus (the squared sup norm).
    pub fn max_abs2(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn from_polar(mag: &RealField, phase: &RealField) -> Result<Self> {
        mag.zip_map(phase, Complex64::from_polar)
    }
}

impl RealField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_complex(&self) -> ComplexField {
        self.map(|v| Complex64::new(v, 0.0))
    }
}

/// Elementwise product.
pub fn hadamard(a: &ComplexField, b: &ComplexField) -> Result<ComplexField> {
    a.zip_map(b, |x, y| x * y)
}

pub fn abs2(a: &ComplexField) -> RealField {
    a.abs2()
}

/// Principal argument of every entry; `phase(0) = 0`.
pub fn phase(a: &ComplexField) -> RealField {
    a.phase()
}

/// `sum(conj(a) * b)`.
pub fn inner(a: &ComplexField, b: &ComplexField) -> Result<Complex64> {
    ensure_same_shape(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

/// Scan positions of a square probe over a square object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct ScanGeometry {
    probe_side: usize,
    object_side: usize,
    offsets: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
struct RawGeometry {
    probe_side: usize,
    object_side: usize,
    offsets: Vec<(usize, usize)>,
}

impl TryFrom<RawGeometry> for ScanGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        ScanGeometry::new(raw.probe_side, raw.object_side, raw.offsets)
    }
}

impl ScanGeometry {
    /// Validates that every window lies inside the object and that offsets are unique.
    pub fn new(probe_side: usize, object_side: usize, offsets: Vec<(usize, usize)>) -> Result<Self> {
        if probe_side == 0 || probe_side > object_side {
            return Err(Error::contract(format!("probe side {probe_side} must be in 1..={object_side}")));
        }
        if offsets.is_empty() {
            return Err(Error::contract("scan geometry needs at least one position"));
        }
        let limit = object_side - probe_side;
        let mut seen = std::collections::HashSet::with_capacity(offsets.len());
        for &(r, c) in &offsets {
            if r > limit || c > limit {
                return Err(Error::contract(format!(
                    "offset ({r}, {c}) puts the window outside the {object_side}x{object_side} object"
                )));
            }
            if !seen.insert((r, c)) {
                return Err(Error::contract(format!("duplicate offset ({r}, {c})")));
            }
        }
        Ok(Self { probe_side, object_side, offsets })
    }

    #[inline]
    pub fn probe_side(&self) -> usize {
        self.probe_side
    }

    #[inline]
    pub fn object_side(&self) -> usize {
        self.object_side
    }

    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    /// Number of scan positions N.
    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    fn offset(&self, k: usize) -> Result<(usize, usize)> {
        self.offsets.get(k).copied().ok_or(Error::Index { index: k, len: self.offsets.len() })
    }

    fn check_object<T: Copy>(&self, obj: &Grid<T>) -> Result<()> {
        if obj.shape() != (self.object_side, self.object_side) {
            return Err(Error::shape(format!(
                "object is {}x{}, geometry expects {n}x{n}",
                obj.rows,
                obj.cols,
                n = self.object_side
            )));
        }
        Ok(())
    }

    fn check_patch<T: Copy>(&self, patch: &Grid<T>) -> Result<()> {
        if patch.shape() != (self.probe_side, self.probe_side) {
            return Err(Error::shape(format!(
                "patch is {}x{}, geometry expects {m}x{m}",
                patch.rows,
                patch.cols,
                m = self.probe_side
            )));
        }
        Ok(())
    }
}

/// The m x m window of `obj` at scan position `k`.
pub fn extract_patch<T: Copy>(obj: &Grid<T>, geom: &ScanGeometry, k: usize) -> Result<Grid<T>> {
    let (r0, c0) = geom.offset(k)?;
    geom.check_object(obj)?;
    let m = geom.probe_side;
    let mut data = Vec::with_capacity(m * m);
    for r in 0..m {
        let start = (r0 + r) * obj.cols + c0;
        data.extend_from_slice(&obj.data[start..start + m]);
    }
    Ok(Grid { rows: m, cols: m, data })
}

/// Overwrites the k-th window of `obj` in place with `patch`.
pub fn write_patch<T: Copy>(obj: &mut Grid<T>, patch: &Grid<T>, geom: &ScanGeometry, k: usize) -> Result<()> {
    let (r0, c0) = geom.offset(k)?;
    geom.check_object(obj)?;
    geom.check_patch(patch)?;
    let m = geom.probe_side;
    let cols = obj.cols;
    for r in 0..m {
        let start = (r0 + r) * cols + c0;
        obj.data[start..start + m].copy_from_slice(&patch.data[r * m..(r + 1) * m]);
    }
    Ok(())
}

/// Copy of `obj` with the k-th window replaced by `patch`.
pub fn scatter_patch<T: Copy>(obj: &Grid<T>, patch: &Grid<T>, geom: &ScanGeometry, k: usize) -> Result<Grid<T>> {
    let mut out = obj.clone();
    write_patch(&mut out, patch, geom, k)?;
    Ok(out)
}
