//! Dense row-major matrices, Cholesky-based SPD solves and splittable seeded
//! randomness.
//!
//! Sizes stay at a few hundred per side, so everything here is plain loops
//! over `Vec<f64>`.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Jitter added to the diagonal when a plain Cholesky factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Dense double-precision matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::SizeMismatch {
                expected: format!("{rows}x{cols} with rows, cols >= 1"),
                actual: format!("{} entries", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::SizeMismatch {
                expected: format!("rows of length {cols}"),
                actual: "ragged rows".into(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product. Panics on mismatched inner dimensions.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · selfᵀ`, symmetric by construction.
    pub fn gram(&self) -> Matrix {
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Matrix-vector product. Panics on a length mismatch.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec: length mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Entrywise `self - rhs`. Panics on a shape mismatch.
    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest absolute entrywise difference. Panics on a shape mismatch.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        self.sub(rhs).max_abs()
    }

    /// Copies the block `rows × cols`.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Matrix {
        let (r0, c0) = (rows.start, cols.start);
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self[(r0 + i, c0 + j)])
    }

    /// Symmetric within `rel_tol` relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.rows)
            .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= rel_tol * scale))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

fn try_cholesky(a: &Matrix, jitter: f64) -> std::result::Result<Matrix, usize> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)] + jitter;
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !diag.is_finite() || diag <= 0.0 {
            return Err(j);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Lower-triangular `L` with `L·Lᵀ = a`, reading only the lower triangle of `a`.
///
/// A failed factorization is retried once with [`CHOLESKY_JITTER`] added to
/// the diagonal.
pub fn cholesky_factor(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::SizeMismatch {
            expected: "square matrix".into(),
            actual: format!("{}x{}", a.rows, a.cols),
        });
    }
    try_cholesky(a, 0.0)
        .or_else(|_| try_cholesky(a, CHOLESKY_JITTER))
        .map_err(|pivot| Error::NotPositiveDefinite { pivot })
}

/// Solves `L·Lᵀ·x = b` given the Cholesky factor `l`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows;
    if b.rows != n {
        return Err(Error::SizeMismatch {
            expected: format!("{n} rows"),
            actual: format!("{} rows", b.rows),
        });
    }
    let mut x = b.clone();
    for c in 0..b.cols {
        // L·y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // Lᵀ·x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `a·x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let l = cholesky_factor(a)?;
    cholesky_solve(&l, b)
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn inverse_spd(a: &Matrix) -> Result<Matrix> {
    solve_spd(a, &Matrix::identity(a.rows))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes an integer key into a seed. Used to derive child streams.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key))
}

/// Deterministic ChaCha8 stream that splits into independent children keyed
/// on integers.
///
/// Parallel code never shares one stream: each task gets
/// `rng.split(&[step, segment])`, so results do not depend on scheduling.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            draws: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of normal draws taken so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    /// Independent child stream. Depends only on this stream's seed and
    /// `keys`, never on how far this stream has advanced.
    pub fn split(&self, keys: &[u64]) -> SeededRng {
        let seed = keys.iter().fold(self.seed, |s, &k| derive_seed(s, k));
        SeededRng::new(seed)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        self.inner.sample(StandardNormal)
    }

    /// `n` i.i.d. standard normal draws.
    pub fn sample_standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.standard_normal();
        }
    }
}
