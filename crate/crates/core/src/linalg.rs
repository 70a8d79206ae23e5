//! Small dense vectors and symmetric matrices.
//!
//! Dimensions are runtime values; everything is sized once when a trial
//! starts. Only what the bandit protocol needs is here: rank-one updates,
//! a maintained inverse, Mahalanobis norms and Euclidean ball projection.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

/// Number of Sherman–Morrison updates after which the maintained inverse is
/// recomputed from scratch.
pub const REFRESH_INTERVAL: usize = 1000;

/// A dense real vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Vector(values.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.dim(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.0.iter_mut() {
            *a *= factor;
        }
    }

    pub fn fill_zero(&mut self) {
        self.0.iter_mut().for_each(|a| *a = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(values: Vec<f64>) -> Self {
        Vector(values)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Matrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    ///
    /// Panics if `data.len() != dim * dim`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "matrix data has wrong length");
        Matrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    /// `self += weight * u uᵀ`.
    pub fn add_outer(&mut self, weight: f64, u: &[f64]) {
        debug_assert_eq!(u.len(), self.dim);
        let d = self.dim;
        for i in 0..d {
            let wi = weight * u[i];
            let row = &mut self.data[i * d..(i + 1) * d];
            for (entry, uj) in row.iter_mut().zip(u) {
                *entry += wi * uj;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|a| *a = 0.0);
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vector {
        debug_assert_eq!(v.len(), self.dim);
        let d = self.dim;
        (0..d)
            .map(|i| dot(&self.data[i * d..(i + 1) * d], v))
            .collect::<Vec<_>>()
            .into()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
        let d = self.dim;
        let mut out = Matrix::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        out
    }

    /// `uᵀ M u`.
    pub fn quad_form(&self, u: &[f64]) -> f64 {
        let d = self.dim;
        (0..d)
            .map(|i| u[i] * dot(&self.data[i * d..(i + 1) * d], u))
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.data.iter().map(|a| libm::fabs(*a)).fold(0.0, f64::max);
        let d = self.dim;
        (0..d).all(|i| {
            (0..i).all(|j| libm::fabs(self.get(i, j) - self.get(j, i)) <= rel_tol * scale.max(1.0))
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Lower-triangular Cholesky factor, or `None` if the matrix is not
    /// numerically positive definite.
    pub fn cholesky(&self) -> Option<Cholesky> {
        let d = self.dim;
        let mut l = Matrix::zeros(d);
        for j in 0..d {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            let ljj = libm::sqrt(diag);
            l.set(j, j, ljj);
            for i in j + 1..d {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Some(Cholesky { lower: l })
    }
}

/// Cholesky factorization `A = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vector {
        let d = self.lower.dim;
        let l = &self.lower;
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        y.into()
    }

    pub fn inverse(&self) -> Matrix {
        let d = self.lower.dim;
        let mut inv = Matrix::zeros(d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..d {
                inv.set(i, j, col[i]);
            }
        }
        // Symmetrize to remove the last-ulp asymmetry of the column solves.
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, avg);
                inv.set(j, i, avg);
            }
        }
        inv
    }

    pub fn log_det(&self) -> f64 {
        (0..self.lower.dim)
            .map(|i| 2.0 * libm::log(self.lower.get(i, i)))
            .sum()
    }
}

/// Regularized information matrix `W` together with its maintained inverse.
///
/// `W` starts at `ridge · I` and only ever grows by PSD terms, so it stays
/// positive definite. The inverse is carried along with Sherman–Morrison and
/// recomputed exactly every [`REFRESH_INTERVAL`] rank-one updates and after
/// every bulk [`absorb`](InfoMatrix::absorb).
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    w: Matrix,
    w_inv: Matrix,
    log_det: f64,
    since_refresh: usize,
}

impl InfoMatrix {
    /// `W = ridge · I`. Panics unless `ridge > 0`.
    pub fn scaled_identity(dim: usize, ridge: f64) -> Self {
        assert!(ridge > 0.0 && ridge.is_finite(), "ridge must be positive");
        InfoMatrix {
            w: Matrix::scaled_identity(dim, ridge),
            w_inv: Matrix::scaled_identity(dim, 1.0 / ridge),
            log_det: dim as f64 * libm::log(ridge),
            since_refresh: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.dim
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn inverse(&self) -> &Matrix {
        &self.w_inv
    }

    /// Incrementally tracked `log det W`; diagnostic only.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `W ← W + u uᵀ`.
    pub fn rank_one_update(&mut self, u: &[f64]) {
        debug_assert!(u.iter().all(|x| x.is_finite()));
        let w_inv_u = self.w_inv.mul_vec(u);
        let denom = 1.0 + dot(u, &w_inv_u);
        self.w.add_outer(1.0, u);
        self.w_inv.add_outer(-1.0 / denom, &w_inv_u);
        self.log_det += libm::log(denom);
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
    }

    /// `W ← W + delta` for a PSD `delta`, followed by an exact refresh.
    pub fn absorb(&mut self, delta: &Matrix) {
        self.w.add_assign(delta);
        self.refresh();
    }

    /// Recomputes the inverse and log-determinant from `W` by Cholesky.
    pub fn refresh(&mut self) {
        let chol = self
            .w
            .cholesky()
            .expect("information matrix lost positive definiteness");
        self.w_inv = chol.inverse();
        self.log_det = chol.log_det();
        self.since_refresh = 0;
    }

    /// `‖u‖_{W⁻¹} = sqrt(uᵀ W⁻¹ u)`.
    pub fn inv_norm(&self, u: &[f64]) -> f64 {
        libm::sqrt(self.w_inv.quad_form(u).max(0.0))
    }

    /// `‖u‖_W = sqrt(uᵀ W u)`.
    pub fn norm(&self, u: &[f64]) -> f64 {
        libm::sqrt(self.w.quad_form(u).max(0.0))
    }

    /// `max |W · W⁻¹ − I|`.
    pub fn inverse_residual(&self) -> f64 {
        let prod = self.w.mul(&self.w_inv);
        prod.max_abs_diff(&Matrix::scaled_identity(self.dim(), 1.0))
    }
}

/// Euclidean projection of `p` onto the ball of `radius` around `center`.
pub fn project_ball(p: &[f64], center: &[f64], radius: f64) -> Vector {
    debug_assert!(radius > 0.0);
    let offset: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
    let dist = norm(&offset);
    if dist <= radius {
        return Vector::from_slice(p);
    }
    let mut shrink = radius / dist;
    loop {
        let q: Vec<f64> = center.iter().zip(&offset).map(|(c, o)| c + shrink * o).collect();
        // Rounding can leave the result a few ulps outside; pull it in so a
        // second projection is a no-op.
        let back: Vec<f64> = q.iter().zip(center).map(|(a, c)| a - c).collect();
        if norm(&back) <= radius {
            return q.into();
        }
        shrink *= 1.0 - f64::EPSILON;
    }
}
