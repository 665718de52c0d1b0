//! Dense 2-D matrix kernels.
//!
//! A [`RealMatrix`] is a row-major `f64` array. Frame-feature sequences are
//! stored as one column per frame (rows = channels, cols = time), so all
//! temporal ops in this crate walk columns.
//!
//! Contractions always accumulate in ascending index order; tests compare
//! against independently coded oracles for exact equality, which only holds
//! if the summation order is pinned.

use crate::error::{GltrError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise a + s*b.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(GltrError::DimensionMismatch(format!(
                "add: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + s * b)
            .collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&RealMatrix]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| GltrError::EmptyInput("vstack of zero blocks".into()))?;
        let cols = first.cols;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(GltrError::DimensionMismatch(
                "vstack blocks differ in column count".into(),
            ));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(Self { rows, cols, data })
    }
}

/// Standard matrix product.
pub fn matmul(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.rows {
        return Err(GltrError::DimensionMismatch(format!(
            "matmul: {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = RealMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.at(i, k) * b.at(k, j);
            }
            *out.at_mut(i, j) = acc;
        }
    }
    Ok(out)
}

/// a * b^T without materializing the transpose.
pub fn matmul_nt(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.cols {
        return Err(GltrError::DimensionMismatch(format!(
            "matmul_nt: {}x{} by ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = RealMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.at(i, k) * b.at(j, k);
            }
            *out.at_mut(i, j) = acc;
        }
    }
    Ok(out)
}

/// a^T * b without materializing the transpose.
pub fn matmul_tn(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.rows != b.rows {
        return Err(GltrError::DimensionMismatch(format!(
            "matmul_tn: ({}x{})^T by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = RealMatrix::zeros(a.cols, b.cols);
    for i in 0..a.cols {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.rows {
                acc += a.at(k, i) * b.at(k, j);
            }
            *out.at_mut(i, j) = acc;
        }
    }
    Ok(out)
}

/// Elementwise max(0, x).
pub fn relu(x: &RealMatrix) -> RealMatrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Row-wise softmax, stabilized by max subtraction. Each row sums to 1.
pub fn row_softmax(x: &RealMatrix) -> RealMatrix {
    let mut out = RealMatrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..x.cols {
            let e = (x.at(r, c) - max).exp();
            *out.at_mut(r, c) = e;
            sum += e;
        }
        for c in 0..x.cols {
            *out.at_mut(r, c) /= sum;
        }
    }
    out
}

/// Projection of the columns of `x` onto their first principal component.
///
/// Columns are mean-centered; the component direction is found by power
/// iteration on the column covariance (population convention, divide by T)
/// and sign-fixed so its first nonzero coordinate is positive. Zero-variance
/// input returns the zero vector.
pub fn pca_first_component(x: &RealMatrix) -> Result<Vec<f64>> {
    let (c, t) = (x.rows, x.cols);
    if t < 2 {
        return Err(GltrError::InvalidArgument(
            "pca_first_component needs at least 2 columns".into(),
        ));
    }
    let mean: Vec<f64> = (0..c)
        .map(|r| x.row(r).iter().sum::<f64>() / t as f64)
        .collect();
    let centered = RealMatrix::from_fn(c, t, |r, col| x.at(r, col) - mean[r]);

    // Column covariance, population convention.
    let mut cov = RealMatrix::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for col in 0..t {
                acc += centered.at(i, col) * centered.at(j, col);
            }
            *cov.at_mut(i, j) = acc / t as f64;
        }
    }
    let total_var: f64 = (0..c).map(|i| cov.at(i, i)).sum();
    if total_var <= 0.0 || !total_var.is_finite() {
        return Ok(vec![0.0; t]);
    }

    // Power iteration with a fixed start; restarts guard against the start
    // vector being orthogonal to the dominant eigenspace.
    let mut dir = power_iteration(&cov, 0)
        .or_else(|| power_iteration(&cov, 1))
        .unwrap_or_else(|| vec![0.0; c]);
    if dir.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; t]);
    }

    // Sign convention: first nonzero coordinate positive.
    let scale = dir.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(&lead) = dir.iter().find(|v| v.abs() > 1e-12 * scale) {
        if lead < 0.0 {
            for v in &mut dir {
                *v = -*v;
            }
        }
    }

    Ok((0..t)
        .map(|col| (0..c).map(|r| dir[r] * centered.at(r, col)).sum())
        .collect())
}

fn power_iteration(cov: &RealMatrix, restart: u64) -> Option<Vec<f64>> {
    let c = cov.rows();
    let mut rng = crate::rng::SplitMix64::fork(0x70ca_f1e5, restart);
    let mut v: Vec<f64> = (0..c).map(|_| rng.uniform(-1.0, 1.0)).collect();
    normalize(&mut v)?;
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = vec![0.0; c];
        for i in 0..c {
            let mut acc = 0.0;
            for j in 0..c {
                acc += cov.at(i, j) * v[j];
            }
            w[i] = acc;
        }
        let new_lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        normalize(&mut w)?;
        v = w;
        if (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs().max(1.0) {
            return Some(v);
        }
        lambda = new_lambda;
    }
    Some(v)
}

fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Some(())
}
