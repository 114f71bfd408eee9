//! Dense vectors and matrices, activations, seeded randomness and a
//! central-difference gradient oracle.
//!
//! Everything is `f64`. Gradient ratios measured by [`crate::diagnostics`]
//! routinely span ten or more orders of magnitude, which single precision
//! cannot represent faithfully.

use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        DenseVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "from_rows",
                left: format!("row of length {cols}"),
                right: format!("row of length {}", bad.len()),
            });
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("{} elements", data.len()),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `W·x + b`.
pub fn affine(w: &DenseMatrix, x: &DenseVector, b: &DenseVector) -> Result<DenseVector> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(Error::Shape {
            op: "affine",
            left: format!("W {}x{}", w.rows, w.cols),
            right: format!("x {}, b {}", x.len(), b.len()),
        });
    }
    let mut out = b.clone();
    matvec_acc(out.as_mut_slice(), w.as_slice(), x.as_slice());
    Ok(out)
}

pub fn tanh_map(x: &DenseVector) -> DenseVector {
    DenseVector(x.0.iter().map(|v| v.tanh()).collect())
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid_map(x: &DenseVector) -> DenseVector {
    DenseVector(x.0.iter().map(|&v| sigmoid(v)).collect())
}

/// Numerically stable softmax (the maximum is subtracted before exponentiating).
pub fn softmax(x: &DenseVector) -> DenseVector {
    let max = x.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.0.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    DenseVector(exps.into_iter().map(|e| e / total).collect())
}

pub fn l2_norm(x: &DenseVector) -> f64 {
    norm(x.as_slice())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Matrix with entries drawn i.i.d. from `U[lo, hi)`.
pub fn uniform_init(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Result<DenseMatrix> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("uniform_init needs lo < hi, got [{lo}, {hi})")));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Ok(DenseMatrix { rows, cols, data })
}

/// Central-difference estimate of the gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &DenseVector, h: f64) -> Result<DenseVector>
where
    F: FnMut(&DenseVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = DenseVector::zeros(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

// Slice kernels used on the hot paths of forward/backward. Shapes are the
// caller's responsibility; they are checked with debug assertions only.

/// `out += W·x` for row-major `W` with `out.len()` rows.
#[inline]
pub(crate) fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ·v` for row-major `W` with `v.len()` rows.
#[inline]
pub(crate) fn matvec_t_acc(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), v.len() * cols);
    for (&vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        if vi != 0.0 {
            axpy(out, vi, row);
        }
    }
}

/// `G += a·bᵀ`.
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    debug_assert_eq!(g.len(), a.len() * cols);
    for (&ai, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        if ai != 0.0 {
            axpy(row, ai, b);
        }
    }
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums let the compiler vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Deterministic random source: ChaCha8 keyed by a 64-bit seed.
///
/// The stream for a given seed is fixed across platforms. Independent
/// sub-streams are obtained with [`SeededRng::derive`] (or [`derive_seed`]),
/// which hashes the parent seed together with a list of integer tags using
/// SplitMix64 finalization, so work split by tag never depends on the order
/// in which it is executed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for the sub-stream identified by `tags`.
    pub fn derive(&self, tags: &[u64]) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, tags))
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let u: f64 = self.inner.gen();
            let v = lo + (hi - lo) * u;
            // Rounding can land exactly on `hi` for very narrow ranges.
            if v < hi {
                return v;
            }
        }
    }

    /// Uniform integer on the closed range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        self.inner.gen_range(lo..=hi)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}
