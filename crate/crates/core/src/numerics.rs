//! Dense storage, seeded randomness and the small amount of linear algebra
//! the rest of the crate needs.
//!
//! Everything is `f64`. [`DenseTensor`] is row-major; two-dimensional
//! tensors double as matrices and are indexed with `m[(i, j)]`.

use std::ops::{Index, IndexMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Pivot magnitude below which [`solve_linear`] reports a singular system.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const POWER_ITER_CAP: usize = 10_000;
const POWER_ITER_TOL: f64 = 1e-10;
const POWER_ITER_ACCEPT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "tensor dimensions must be positive");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("invalid tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(&[r, c], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(&[n, n]);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn is_square(&self) -> bool {
        self.is_matrix() && self.shape[0] == self.shape[1]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        if !self.is_matrix() {
            return Err(Error::shape("transpose needs a matrix"));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if !self.is_matrix() || !other.is_matrix() || self.cols() != other.rows() {
            return Err(Error::shape(format!(
                "cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (r, inner, c) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let out_row = &mut out[i * c..(i + 1) * c];
            for k in 0..inner {
                let a = self.data[i * inner + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(&other.data[k * c..(k + 1) * c]) {
                    *o += a * b;
                }
            }
        }
        Self::from_vec(&[r, c], out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if !self.is_matrix() || self.cols() != v.len() {
            return Err(Error::shape("matvec dimension mismatch"));
        }
        Ok((0..self.rows()).map(|i| dot(self.row(i), v)).collect())
    }
}

impl Index<(usize, usize)> for DenseTensor {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(self.is_matrix());
        &self.data[i * self.shape[1] + j]
    }
}

impl IndexMut<(usize, usize)> for DenseTensor {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(self.is_matrix());
        let c = self.shape[1];
        &mut self.data[i * c + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded generator backed by ChaCha8.
///
/// Child streams come from [`Prng::split`], which depends only on this
/// generator's seed and the label, never on how many values were drawn.
#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, label: &str) -> Prng {
        // FNV-1a over the label, then a splitmix64 finalizer over seed ^ hash.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut z = self.seed ^ h;
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        Prng::new(z ^ (z >> 31))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if !a.is_square() {
        return Err(Error::shape(format!("solve_linear needs a square matrix, got {:?}", a.shape())));
    }
    if !b.is_matrix() || b.rows() != a.rows() {
        return Err(Error::shape(format!(
            "right-hand side {:?} does not match {:?}",
            b.shape(),
            a.shape()
        )));
    }
    let n = a.rows();
    let m = b.cols();
    let mut lu = a.data().to_vec();
    let mut x = b.data().to_vec();

    for k in 0..n {
        let (pivot_row, pivot) = (k..n)
            .map(|i| (i, lu[i * n + k]))
            .fold((k, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best });
        if pivot.abs() < PIVOT_TOLERANCE {
            return Err(Error::SingularMatrix { column: k, pivot });
        }
        if pivot_row != k {
            for j in 0..n {
                lu.swap(k * n + j, pivot_row * n + j);
            }
            for j in 0..m {
                x.swap(k * m + j, pivot_row * m + j);
            }
        }
        let (upper, lower) = lu.split_at_mut((k + 1) * n);
        let pivot_lu = &upper[k * n..];
        let (xu, xl) = x.split_at_mut((k + 1) * m);
        let pivot_x = &xu[k * m..];
        for (row, xrow) in lower.chunks_exact_mut(n).zip(xl.chunks_exact_mut(m)) {
            let factor = row[k] / pivot;
            if factor == 0.0 {
                continue;
            }
            row[k] = 0.0;
            for (r, p) in row[k + 1..].iter_mut().zip(&pivot_lu[k + 1..]) {
                *r -= factor * p;
            }
            for (r, p) in xrow.iter_mut().zip(pivot_x) {
                *r -= factor * p;
            }
        }
    }

    for k in (0..n).rev() {
        let diag = lu[k * n + k];
        for j in 0..m {
            let mut acc = x[k * m + j];
            for i in k + 1..n {
                acc -= lu[k * n + i] * x[i * m + j];
            }
            x[k * m + j] = acc / diag;
        }
    }
    DenseTensor::from_vec(&[n, m], x)
}

/// Dominant eigenvalue magnitude of a non-negative square matrix by power
/// iteration from the all-ones vector.
pub fn spectral_radius(a: &DenseTensor) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::shape(format!("spectral_radius needs a square matrix, got {:?}", a.shape())));
    }
    if let Some(v) = a.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain(format!("spectral_radius needs a non-negative matrix, found {v}")));
    }
    let n = a.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut estimate = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..POWER_ITER_CAP {
        let w = a.matvec(&v)?;
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        change = (norm - estimate).abs() / norm;
        estimate = norm;
        v = w.into_iter().map(|x| x / norm).collect();
        if change < POWER_ITER_TOL {
            return Ok(estimate);
        }
    }
    if change > POWER_ITER_ACCEPT {
        return Err(Error::NonConvergence {
            iterations: POWER_ITER_CAP,
            change,
        });
    }
    Ok(estimate)
}

/// Central-difference gradient of `f` at `point` with step [`FD_STEP`].
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64]) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let plus = f(&x);
            x[i] = orig - FD_STEP;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check(f: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64]) -> f64 {
    assert_eq!(analytic.len(), point.len(), "gradient and point lengths differ");
    let numeric = numeric_gradient(f, point);
    relative_gradient_error(analytic, &numeric)
}

pub fn relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}
