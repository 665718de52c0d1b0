//! Pointwise (1x1) linear maps: projections, the attention output layer and
//! the identity classifier are all `weights * x + bias` applied per column.

use crate::conv::pointwise_conv;
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{matmul_nt, matmul_tn, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weights: RealMatrix, // out_features x in_features
    pub bias: Vec<f64>,      // out_features
}

impl Linear {
    /// Weights and bias uniform in [-1/sqrt(in_features), +1/sqrt(in_features)].
    pub fn random(out_features: usize, in_features: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weights: RealMatrix::from_fn(out_features, in_features, |_, _| {
                rng.uniform(-bound, bound)
            }),
            bias: (0..out_features).map(|_| rng.uniform(-bound, bound)).collect(),
        }
    }

    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        Self {
            weights: RealMatrix::zeros(out_features, in_features),
            bias: vec![0.0; out_features],
        }
    }

    pub fn out_features(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_features(&self) -> usize {
        self.weights.cols()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.data().iter().all(|&w| w == 0.0) && self.bias.iter().all(|&b| b == 0.0)
    }

    /// Apply to every column of a sequence.
    pub fn forward_seq(&self, x: &RealMatrix) -> Result<RealMatrix> {
        pointwise_conv(x, &self.weights, &self.bias)
    }

    /// Apply to a single vector.
    pub fn forward_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let col = RealMatrix::from_vec(v.len(), 1, v.to_vec());
        let out = self.forward_seq(&col)?;
        Ok(out.data().to_vec())
    }
}

/// Gradients of `y = W x + b` applied per column.
/// Returns (dW, db, dx) for upstream gradient `grad_out`.
pub fn linear_backward_seq(
    x: &RealMatrix,
    layer: &Linear,
    grad_out: &RealMatrix,
) -> Result<(RealMatrix, Vec<f64>, RealMatrix)> {
    let d_weights = matmul_nt(grad_out, x)?;
    let d_bias: Vec<f64> = (0..grad_out.rows())
        .map(|r| grad_out.row(r).iter().sum())
        .collect();
    let d_x = matmul_tn(&layer.weights, grad_out)?;
    Ok((d_weights, d_bias, d_x))
}
