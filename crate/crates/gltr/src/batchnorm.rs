//! Per-channel batch normalization over the time axis.
//!
//! A c x T input is treated as T samples of c channels. Training mode
//! normalizes with the statistics of the matrix it is given (the current
//! mini-batch) and folds them into the running estimates; inference mode is a
//! fixed affine transform using the running estimates. Variance is the biased
//! (population) estimate in both the normalization and the running update.

use crate::error::{GltrError, Result};
use crate::tensor::RealMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: BnMode,
}

impl BatchNormState {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        assert!(channels > 0);
        assert!(eps > 0.0);
        assert!(momentum > 0.0 && momentum < 1.0);
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
            momentum,
            mode: BnMode::Training,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Fold batch statistics into the running estimates.
    pub fn absorb(&mut self, stats: &BnBatchStats) {
        for c in 0..self.channels {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * stats.mean[c];
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * stats.var[c];
        }
    }
}

/// Per-channel mean/variance of one mini-batch.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Forward cache; everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct BnForward {
    pub output: RealMatrix,
    pub x_hat: RealMatrix,
    pub inv_std: Vec<f64>,
}

fn check_channels(x: &RealMatrix, state: &BatchNormState) -> Result<()> {
    if x.rows() != state.channels {
        return Err(GltrError::DimensionMismatch(format!(
            "input has {} channels, batchnorm expects {}",
            x.rows(),
            state.channels
        )));
    }
    Ok(())
}

/// Training-mode forward. Does not touch running stats; the caller decides
/// when to [`BatchNormState::absorb`] the returned batch statistics.
pub fn bn_forward_training(
    x: &RealMatrix,
    state: &BatchNormState,
) -> Result<(BnForward, BnBatchStats)> {
    check_channels(x, state)?;
    let t = x.cols() as f64;
    let mut mean = vec![0.0; state.channels];
    let mut var = vec![0.0; state.channels];
    for c in 0..state.channels {
        let row = x.row(c);
        let m = row.iter().sum::<f64>() / t;
        let v = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / t;
        mean[c] = m;
        var[c] = v;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + state.eps).sqrt()).collect();
    let x_hat = RealMatrix::from_fn(x.rows(), x.cols(), |c, tt| {
        (x.at(c, tt) - mean[c]) * inv_std[c]
    });
    let output = RealMatrix::from_fn(x.rows(), x.cols(), |c, tt| {
        state.gamma[c] * x_hat.at(c, tt) + state.beta[c]
    });
    Ok((BnForward { output, x_hat, inv_std }, BnBatchStats { mean, var }))
}

/// Inference-mode forward: deterministic affine transform from running stats.
pub fn bn_forward_inference(x: &RealMatrix, state: &BatchNormState) -> Result<BnForward> {
    check_channels(x, state)?;
    let inv_std: Vec<f64> = state
        .running_var
        .iter()
        .map(|&v| 1.0 / (v + state.eps).sqrt())
        .collect();
    let x_hat = RealMatrix::from_fn(x.rows(), x.cols(), |c, t| {
        (x.at(c, t) - state.running_mean[c]) * inv_std[c]
    });
    let output = RealMatrix::from_fn(x.rows(), x.cols(), |c, t| {
        state.gamma[c] * x_hat.at(c, t) + state.beta[c]
    });
    Ok(BnForward { output, x_hat, inv_std })
}

/// Mode dispatch per `state.mode`; training mode updates running stats.
pub fn batchnorm_temporal(x: &RealMatrix, state: &mut BatchNormState) -> Result<RealMatrix> {
    match state.mode {
        BnMode::Training => {
            let (fwd, stats) = bn_forward_training(x, state)?;
            state.absorb(&stats);
            Ok(fwd.output)
        }
        BnMode::Inference => Ok(bn_forward_inference(x, state)?.output),
    }
}

/// Gradients of training-mode batchnorm (full batch-statistics Jacobian).
/// Returns (dgamma, dbeta, dx).
pub fn bn_backward_training(
    cache: &BnForward,
    state: &BatchNormState,
    grad_out: &RealMatrix,
) -> (Vec<f64>, Vec<f64>, RealMatrix) {
    let (c_n, t_n) = (cache.x_hat.rows(), cache.x_hat.cols());
    let m = t_n as f64;
    let mut dgamma = vec![0.0; c_n];
    let mut dbeta = vec![0.0; c_n];
    for c in 0..c_n {
        for t in 0..t_n {
            dgamma[c] += grad_out.at(c, t) * cache.x_hat.at(c, t);
            dbeta[c] += grad_out.at(c, t);
        }
    }
    let dx = RealMatrix::from_fn(c_n, t_n, |c, t| {
        state.gamma[c] * cache.inv_std[c]
            * (grad_out.at(c, t) - dbeta[c] / m - cache.x_hat.at(c, t) * dgamma[c] / m)
    });
    (dgamma, dbeta, dx)
}

/// Gradients of inference-mode batchnorm (plain affine map).
pub fn bn_backward_inference(
    cache: &BnForward,
    state: &BatchNormState,
    grad_out: &RealMatrix,
) -> (Vec<f64>, Vec<f64>, RealMatrix) {
    let (c_n, t_n) = (cache.x_hat.rows(), cache.x_hat.cols());
    let mut dgamma = vec![0.0; c_n];
    let mut dbeta = vec![0.0; c_n];
    for c in 0..c_n {
        for t in 0..t_n {
            dgamma[c] += grad_out.at(c, t) * cache.x_hat.at(c, t);
            dbeta[c] += grad_out.at(c, t);
        }
    }
    let dx = RealMatrix::from_fn(c_n, t_n, |c, t| {
        grad_out.at(c, t) * state.gamma[c] * cache.inv_std[c]
    });
    (dgamma, dbeta, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_input(seed: u64, c: usize, t: usize) -> RealMatrix {
        let mut rng = SplitMix64::new(seed);
        RealMatrix::from_fn(c, t, |_, _| rng.uniform(-2.0, 2.0))
    }

    #[test]
    fn training_mode_normalizes_each_channel() {
        let x = random_input(1, 3, 40);
        let mut state = BatchNormState::new(3, 1e-5, 0.1);
        let out = batchnorm_temporal(&x, &mut state).unwrap();
        for c in 0..3 {
            let row = out.row(c);
            let mean = row.iter().sum::<f64>() / 40.0;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12, "mean {mean}");
            // var is slightly below 1 because of the eps correction.
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn inference_with_default_stats_is_near_identity() {
        let x = random_input(2, 3, 10);
        let mut state = BatchNormState::new(3, 1e-5, 0.1);
        state.mode = BnMode::Inference;
        let out = batchnorm_temporal(&x, &mut state).unwrap();
        for (o, i) in out.data().iter().zip(x.data()) {
            assert!((o - i).abs() < 1e-4);
        }
    }

    #[test]
    fn matches_two_pass_oracle() {
        let x = random_input(3, 4, 16);
        let mut state = BatchNormState::new(4, 1e-5, 0.1);
        let mut rng = SplitMix64::new(4);
        for c in 0..4 {
            state.gamma[c] = rng.uniform(0.5, 2.0);
            state.beta[c] = rng.uniform(-1.0, 1.0);
        }
        let (fwd, _) = bn_forward_training(&x, &state).unwrap();
        for c in 0..4 {
            // First pass: mean. Second pass: variance. Then affine.
            let row = x.row(c);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            for t in 0..16 {
                let expect =
                    state.gamma[c] * (x.at(c, t) - mean) / (var + state.eps).sqrt() + state.beta[c];
                assert!((fwd.output.at(c, t) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn inference_is_bitwise_repeatable() {
        let x = random_input(5, 3, 8);
        let mut state = BatchNormState::new(3, 1e-5, 0.1);
        // Push the running stats away from the defaults first.
        batchnorm_temporal(&x, &mut state).unwrap();
        state.mode = BnMode::Inference;
        let a = batchnorm_temporal(&x, &mut state).unwrap();
        let b = batchnorm_temporal(&x, &mut state).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = RealMatrix::from_fn(1, 4, |_, t| t as f64); // mean 1.5, var 1.25
        let mut state = BatchNormState::new(1, 1e-5, 0.1);
        batchnorm_temporal(&x, &mut state).unwrap();
        assert!((state.running_mean[0] - 0.15).abs() < 1e-12);
        assert!((state.running_var[0] - (0.9 + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = RealMatrix::zeros(3, 4);
        let mut state = BatchNormState::new(2, 1e-5, 0.1);
        assert!(batchnorm_temporal(&x, &mut state).is_err());
    }

    #[test]
    fn training_backward_matches_finite_differences() {
        let x = random_input(6, 2, 9);
        let mut state = BatchNormState::new(2, 1e-5, 0.1);
        let mut rng = SplitMix64::new(7);
        for c in 0..2 {
            state.gamma[c] = rng.uniform(0.5, 2.0);
            state.beta[c] = rng.uniform(-0.5, 0.5);
        }
        // Loss = sum of squares of outputs; dL/dy = 2y.
        let (fwd, _) = bn_forward_training(&x, &state).unwrap();
        let grad_out = fwd.output.map(|v| 2.0 * v);
        let (dgamma, dbeta, dx) = bn_backward_training(&fwd, &state, &grad_out);

        let loss = |x: &RealMatrix, state: &BatchNormState| {
            let (f, _) = bn_forward_training(x, state).unwrap();
            f.output.data().iter().map(|v| v * v).sum::<f64>()
        };
        let h = 1e-6;
        for c in 0..2 {
            let mut sp = state.clone();
            sp.gamma[c] += h;
            let mut sm = state.clone();
            sm.gamma[c] -= h;
            let num = (loss(&x, &sp) - loss(&x, &sm)) / (2.0 * h);
            assert!((num - dgamma[c]).abs() < 1e-5, "dgamma[{c}]");

            let mut sp = state.clone();
            sp.beta[c] += h;
            let mut sm = state.clone();
            sm.beta[c] -= h;
            let num = (loss(&x, &sp) - loss(&x, &sm)) / (2.0 * h);
            assert!((num - dbeta[c]).abs() < 1e-5, "dbeta[{c}]");
        }
        for c in 0..2 {
            for t in 0..9 {
                let mut xp = x.clone();
                *xp.at_mut(c, t) += h;
                let mut xm = x.clone();
                *xm.at_mut(c, t) -= h;
                let num = (loss(&xp, &state) - loss(&xm, &state)) / (2.0 * h);
                assert!((num - dx.at(c, t)).abs() < 1e-4, "dx[{c},{t}]");
            }
        }
    }
}
