//! Small dense helpers on top of nalgebra's Cholesky factorization.

use nalgebra::DMatrix;

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular Cholesky factor stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix; `None` otherwise.
    pub fn new(matrix: &[Vec<f64>]) -> Option<Self> {
        let dim = matrix.len();
        if dim == 0 || matrix.iter().any(|r| r.len() != dim) {
            return None;
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]);
        let l = m.cholesky()?.unpack();
        let lower: Vec<f64> = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| l[(i, j)])
            .collect();
        if lower.iter().any(|v| !v.is_finite()) || (0..dim).any(|i| lower[i * dim + i] <= 0.0) {
            return None;
        }
        Some(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// ln det of the factorized matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.lower[i * self.dim + i].ln()).sum::<f64>()
    }

    /// Solves `L v = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut v = vec![0.0; n];
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s: f64 = row.iter().zip(&v).map(|(l, x)| l * x).sum();
            v[i] = (b[i] - s) / self.lower[i * n + i];
        }
        v
    }

    /// Solves `L^T v = b`.
    pub fn backward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut v = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lower[j * n + i] * v[j]).sum();
            v[i] = (b[i] - s) / self.lower[i * n + i];
        }
        v
    }

    /// Solves `A v = b` for the factorized `A`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// `(x - mean)^T A^{-1} (x - mean)`.
    pub fn mahalanobis_sq(&self, x: &[f64], mean: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        self.forward(&diff).iter().map(|v| v * v).sum()
    }

    /// `L^{-1}` as a packed lower triangle, row-major.
    pub fn packed_inverse(&self) -> Vec<f64> {
        let n = self.dim;
        let mut columns = Vec::with_capacity(n);
        let mut unit = vec![0.0; n];
        for c in 0..n {
            unit[c] = 1.0;
            columns.push(self.forward(&unit));
            unit[c] = 0.0;
        }
        (0..n)
            .flat_map(|a| (0..=a).map(move |b| (a, b)))
            .map(|(a, b)| columns[b][a])
            .collect()
    }
}

/// Multivariate normal log density with covariance given by its factor.
pub fn normal_log_pdf(chol: &Cholesky, mean: &[f64], x: &[f64]) -> f64 {
    let d = chol.dim() as f64;
    -0.5 * (d * LN_2PI + chol.log_det() + chol.mahalanobis_sq(x, mean))
}

/// Max-shifted log of a sum of exponentials.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
