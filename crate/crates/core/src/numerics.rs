//! Dense row-major matrices, 3-vector helpers, Cholesky factorization,
//! triangular solves, and a seeded deterministic random number generator.
//!
//! This is the minimal linear-algebra core the rest of the crate builds on;
//! it covers exactly what GRU layers and 3x3 covariance statistics need.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

/// A 3-vector of 64-bit reals (position, velocity, or gradient component).
pub type Vec3 = [f64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("matrix is not positive definite (pivot {pivot} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("singular triangular factor: |L[{col},{col}]| < 1e-15")]
    SingularFactor { col: usize },
    #[error("invalid range: lo ({lo}) must be < hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

// ---------------------------------------------------------------------------
// Vec3 helpers
// ---------------------------------------------------------------------------

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense matrix of 64-bit reals in row-major order.
///
/// Values are immutable after construction in all public pipeline types;
/// mutation is confined to parameter updates that own their matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row-major data. Errors if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "expected {} entries for {}x{}, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NumericsError::DimensionMismatch(
                    "ragged rows".to_string(),
                ));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// y = A x. Lengths must match.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                s += a * b;
            }
            *yi = s;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec(x, &mut y);
        y
    }

    /// y += A^T d. Used by reverse-mode passes.
    pub fn matvec_transpose_add(&self, d: &[f64], y: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, &di) in d.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (yj, a) in y.iter_mut().zip(row.iter()) {
                *yj += a * di;
            }
        }
    }

    /// A += d x^T (outer-product accumulation for weight gradients).
    pub fn add_outer(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (i, &di) in d.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (a, b) in row.iter_mut().zip(x.iter()) {
                *a += di * b;
            }
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// C = A B, used only by small-matrix tests and checks.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut c = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                for j in 0..other.cols {
                    c.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(c)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Cholesky and triangular solves
// ---------------------------------------------------------------------------

/// Lower-triangular factor L with L L^T = sigma.
///
/// Standard left-looking algorithm, no pivoting; inputs here are small
/// covariance matrices. The input must be square and symmetric within
/// `1e-9 * max(1, max|sigma|)`.
pub fn cholesky(sigma: &Matrix) -> Result<Matrix, NumericsError> {
    let n = sigma.rows();
    if sigma.cols() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    let sym_tol = 1e-9 * sigma.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > sym_tol {
                return Err(NumericsError::NotSymmetric);
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut s = sigma[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if s <= 0.0 {
            return Err(NumericsError::NotPositiveDefinite { col: j, pivot: s });
        }
        let diag = s.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut t = sigma[(i, j)];
            for k in 0..j {
                t -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = t / diag;
        }
    }
    Ok(l)
}

/// Solves L x = b by forward substitution for lower-triangular L.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = l.rows();
    if l.cols() != n || b.len() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "solve_lower: L is {}x{}, b has {}",
            l.rows(),
            l.cols(),
            b.len()
        )));
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        let diag = l[(i, i)];
        if diag.abs() < 1e-15 {
            return Err(NumericsError::SingularFactor { col: i });
        }
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / diag;
    }
    Ok(x)
}

/// Solves L^T x = b by backward substitution for lower-triangular L.
pub fn solve_lower_transpose(l: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = l.rows();
    if l.cols() != n || b.len() != n {
        return Err(NumericsError::DimensionMismatch(
            "solve_lower_transpose shape".to_string(),
        ));
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let diag = l[(i, i)];
        if diag.abs() < 1e-15 {
            return Err(NumericsError::SingularFactor { col: i });
        }
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / diag;
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer; the documented child-seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream id.
///
/// All randomness in an experiment flows from one top-level seed through
/// this function; modules document which stream ids they consume.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(1)))
}

/// Seeded deterministic generator (ChaCha8 keystream).
///
/// Identical seeds produce bit-identical streams across runs and platforms.
/// Single-owner: callers split parallel work by deriving child seeds, never
/// by sharing one generator.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A generator seeded with `derive_seed(self.seed, stream)`. Does not
    /// advance this generator.
    pub fn child(&self, stream: u64) -> Rng {
        Rng::new(derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn uniform_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi). Errors when lo >= hi.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64, NumericsError> {
        if !(lo < hi) {
            return Err(NumericsError::InvalidRange { lo, hi });
        }
        Ok(lo + self.uniform_unit() * (hi - lo))
    }

    /// Standard normal via Box-Muller on the uniform stream.
    pub fn normal_unit(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform_unit();
        let u2 = self.uniform_unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle. Index draws use 64-bit modulo; the bias is
    /// below 2^-40 for every slice length this crate handles.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
