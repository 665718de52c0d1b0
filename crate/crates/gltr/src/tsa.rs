//! Temporal self-attention over a frame-feature sequence.
//!
//! Two projected-and-gated views of the input, B and C, produce a T x T
//! affinity mask M between frames; a third view is mixed through M and mapped
//! back to the input width by a zero-initialized output projection, then
//! added to the input. Because the output projection starts at zero, a fresh
//! layer is exactly the identity map, and training only gradually opens the
//! attention path.

use crate::batchnorm::{
    bn_backward_inference, bn_backward_training, bn_forward_inference, bn_forward_training,
    BatchNormState, BnBatchStats, BnForward, BnMode,
};
use crate::error::{GltrError, Result};
use crate::linear::{linear_backward_seq, Linear};
use crate::rng::SplitMix64;
use crate::tensor::{matmul, matmul_nt, matmul_tn, relu, row_softmax, RealMatrix};

/// The frame-affinity mask M and its per-frame weight vector m.
///
/// `m_vector[t]` is the column sum over `m_matrix[:, t]`: the total weight
/// frame t receives across all output frames, i.e. its effective share in the
/// pooled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub m_matrix: RealMatrix,
    pub m_vector: Vec<f64>,
}

impl AttentionMask {
    fn from_matrix(m_matrix: RealMatrix) -> Self {
        let m_vector = (0..m_matrix.cols())
            .map(|t| (0..m_matrix.rows()).map(|s| m_matrix.at(s, t)).sum())
            .collect();
        Self { m_matrix, m_vector }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsaLayer {
    pub proj_b: Linear,
    pub proj_c: Linear,
    pub proj_f: Linear,
    pub bn_b: BatchNormState,
    pub bn_c: BatchNormState,
    pub out_proj: Linear,
    alpha: usize,
    mask_normalization: bool,
    in_channels: usize,
}

impl TsaLayer {
    /// B/C/F projections are randomly initialized, the output projection is
    /// exactly zero. `alpha` must divide `in_channels`.
    pub fn random(
        in_channels: usize,
        alpha: usize,
        mask_normalization: bool,
        bn_eps: f64,
        bn_momentum: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if alpha == 0 || in_channels % alpha != 0 {
            return Err(GltrError::InvalidArgument(format!(
                "alpha ({alpha}) must be a positive divisor of the channel count ({in_channels})"
            )));
        }
        let hidden = in_channels / alpha;
        Ok(Self {
            proj_b: Linear::random(hidden, in_channels, rng),
            proj_c: Linear::random(hidden, in_channels, rng),
            proj_f: Linear::random(hidden, in_channels, rng),
            bn_b: BatchNormState::new(hidden, bn_eps, bn_momentum),
            bn_c: BatchNormState::new(hidden, bn_eps, bn_momentum),
            out_proj: Linear::zeros(in_channels, hidden),
            alpha,
            mask_normalization,
            in_channels,
        })
    }

    /// Assemble a layer from existing parts (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        proj_b: Linear,
        proj_c: Linear,
        proj_f: Linear,
        bn_b: BatchNormState,
        bn_c: BatchNormState,
        out_proj: Linear,
        alpha: usize,
        mask_normalization: bool,
    ) -> Result<Self> {
        let in_channels = proj_b.in_features();
        let hidden = proj_b.out_features();
        if alpha == 0 || in_channels % alpha != 0 || in_channels / alpha != hidden {
            return Err(GltrError::InvalidArgument(
                "projection shapes disagree with alpha".into(),
            ));
        }
        let shapes_ok = proj_c.in_features() == in_channels
            && proj_c.out_features() == hidden
            && proj_f.in_features() == in_channels
            && proj_f.out_features() == hidden
            && out_proj.in_features() == hidden
            && out_proj.out_features() == in_channels
            && bn_b.channels() == hidden
            && bn_c.channels() == hidden;
        if !shapes_ok {
            return Err(GltrError::DimensionMismatch(
                "attention layer parts have inconsistent shapes".into(),
            ));
        }
        Ok(Self {
            proj_b,
            proj_c,
            proj_f,
            bn_b,
            bn_c,
            out_proj,
            alpha,
            mask_normalization,
            in_channels,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn hidden_channels(&self) -> usize {
        self.in_channels / self.alpha
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn mask_normalization(&self) -> bool {
        self.mask_normalization
    }
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TsaForward {
    pub output: RealMatrix,
    pub mask: AttentionMask,
    bn_b_fwd: BnForward,
    bn_c_fwd: BnForward,
    b_gated: RealMatrix,
    c_gated: RealMatrix,
    fbar: RealMatrix,
    mixed: RealMatrix,
    /// Batch statistics from training-mode BN, for the caller to absorb.
    pub bn_stats: Option<(BnBatchStats, BnBatchStats)>,
}

/// Forward pass returning output and mask only.
pub fn tsa_forward(
    fp: &RealMatrix,
    layer: &TsaLayer,
    mode: BnMode,
) -> Result<(RealMatrix, AttentionMask)> {
    let fwd = tsa_forward_cached(fp, layer, mode)?;
    Ok((fwd.output, fwd.mask))
}

/// Forward pass keeping every intermediate. Pure: training-mode batch
/// statistics are returned, not absorbed into the layer.
pub fn tsa_forward_cached(fp: &RealMatrix, layer: &TsaLayer, mode: BnMode) -> Result<TsaForward> {
    if fp.rows() != layer.in_channels {
        return Err(GltrError::DimensionMismatch(format!(
            "input has {} channels, attention layer expects {}",
            fp.rows(),
            layer.in_channels
        )));
    }
    let zb = layer.proj_b.forward_seq(fp)?;
    let zc = layer.proj_c.forward_seq(fp)?;
    let (bn_b_fwd, bn_c_fwd, bn_stats) = match mode {
        BnMode::Training => {
            let (fb, sb) = bn_forward_training(&zb, &layer.bn_b)?;
            let (fc, sc) = bn_forward_training(&zc, &layer.bn_c)?;
            (fb, fc, Some((sb, sc)))
        }
        BnMode::Inference => (
            bn_forward_inference(&zb, &layer.bn_b)?,
            bn_forward_inference(&zc, &layer.bn_c)?,
            None,
        ),
    };
    let b_gated = relu(&bn_b_fwd.output);
    let c_gated = relu(&bn_c_fwd.output);

    // scores[i, j] = <C[:, i], B[:, j]>
    let scores = matmul_tn(&c_gated, &b_gated)?;
    let mask_matrix = if layer.mask_normalization {
        row_softmax(&scores)
    } else {
        scores
    };

    let fbar = layer.proj_f.forward_seq(fp)?;
    // mixed[:, t] = sum_s fbar[:, s] * M[t, s]
    let mixed = matmul_nt(&fbar, &mask_matrix)?;
    let restored = layer.out_proj.forward_seq(&mixed)?;
    let output = restored.add_scaled(fp, 1.0)?;

    Ok(TsaForward {
        output,
        mask: AttentionMask::from_matrix(mask_matrix),
        bn_b_fwd,
        bn_c_fwd,
        b_gated,
        c_gated,
        fbar,
        mixed,
        bn_stats,
    })
}

/// Parameter gradients of one TSA forward/backward.
#[derive(Debug, Clone)]
pub struct TsaGrads {
    pub proj_b_w: RealMatrix,
    pub proj_b_b: Vec<f64>,
    pub proj_c_w: RealMatrix,
    pub proj_c_b: Vec<f64>,
    pub proj_f_w: RealMatrix,
    pub proj_f_b: Vec<f64>,
    pub bn_b_gamma: Vec<f64>,
    pub bn_b_beta: Vec<f64>,
    pub bn_c_gamma: Vec<f64>,
    pub bn_c_beta: Vec<f64>,
    pub out_proj_w: RealMatrix,
    pub out_proj_b: Vec<f64>,
}

/// Backward pass. `mode` must match the forward that produced `fwd`.
/// Returns parameter gradients and the gradient w.r.t. the layer input.
pub fn tsa_backward(
    fp: &RealMatrix,
    layer: &TsaLayer,
    fwd: &TsaForward,
    mode: BnMode,
    grad_out: &RealMatrix,
) -> Result<(TsaGrads, RealMatrix)> {
    // Residual: output = out_proj(mixed) + fp.
    let mut grad_fp = grad_out.clone();

    let (out_proj_w, out_proj_b, grad_mixed) =
        linear_backward_seq(&fwd.mixed, &layer.out_proj, grad_out)?;

    // mixed = fbar * M^T.
    let grad_fbar = matmul(&grad_mixed, &fwd.mask.m_matrix)?;
    let grad_mask = matmul_tn(&grad_mixed, &fwd.fbar)?;

    // Softmax rows, if the mask was normalized.
    let grad_scores = if layer.mask_normalization {
        let m = &fwd.mask.m_matrix;
        let t_n = m.rows();
        let mut g = RealMatrix::zeros(t_n, t_n);
        for i in 0..t_n {
            let dot: f64 = (0..t_n).map(|j| grad_mask.at(i, j) * m.at(i, j)).sum();
            for j in 0..t_n {
                *g.at_mut(i, j) = m.at(i, j) * (grad_mask.at(i, j) - dot);
            }
        }
        g
    } else {
        grad_mask
    };

    // scores = C^T B.
    let grad_c_gated = matmul_nt(&fwd.b_gated, &grad_scores)?;
    let grad_b_gated = matmul(&fwd.c_gated, &grad_scores)?;

    // ReLU gates.
    let grad_bn_b_out = RealMatrix::from_fn(grad_b_gated.rows(), grad_b_gated.cols(), |r, c| {
        if fwd.bn_b_fwd.output.at(r, c) > 0.0 {
            grad_b_gated.at(r, c)
        } else {
            0.0
        }
    });
    let grad_bn_c_out = RealMatrix::from_fn(grad_c_gated.rows(), grad_c_gated.cols(), |r, c| {
        if fwd.bn_c_fwd.output.at(r, c) > 0.0 {
            grad_c_gated.at(r, c)
        } else {
            0.0
        }
    });

    let (bn_b_gamma, bn_b_beta, grad_zb) = match mode {
        BnMode::Training => bn_backward_training(&fwd.bn_b_fwd, &layer.bn_b, &grad_bn_b_out),
        BnMode::Inference => bn_backward_inference(&fwd.bn_b_fwd, &layer.bn_b, &grad_bn_b_out),
    };
    let (bn_c_gamma, bn_c_beta, grad_zc) = match mode {
        BnMode::Training => bn_backward_training(&fwd.bn_c_fwd, &layer.bn_c, &grad_bn_c_out),
        BnMode::Inference => bn_backward_inference(&fwd.bn_c_fwd, &layer.bn_c, &grad_bn_c_out),
    };

    let (proj_b_w, proj_b_b, g_fp_b) = linear_backward_seq(fp, &layer.proj_b, &grad_zb)?;
    let (proj_c_w, proj_c_b, g_fp_c) = linear_backward_seq(fp, &layer.proj_c, &grad_zc)?;
    let (proj_f_w, proj_f_b, g_fp_f) = linear_backward_seq(fp, &layer.proj_f, &grad_fbar)?;
    grad_fp = grad_fp.add_scaled(&g_fp_b, 1.0)?;
    grad_fp = grad_fp.add_scaled(&g_fp_c, 1.0)?;
    grad_fp = grad_fp.add_scaled(&g_fp_f, 1.0)?;

    Ok((
        TsaGrads {
            proj_b_w,
            proj_b_b,
            proj_c_w,
            proj_c_b,
            proj_f_w,
            proj_f_b,
            bn_b_gamma,
            bn_b_beta,
            bn_c_gamma,
            bn_c_beta,
            out_proj_w,
            out_proj_b,
        },
        grad_fp,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(seed: u64, c: usize, t: usize) -> RealMatrix {
        let mut rng = SplitMix64::new(seed);
        RealMatrix::from_fn(c, t, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn fresh_layer_is_bitwise_identity() {
        let mut rng = SplitMix64::new(1);
        let layer = TsaLayer::random(6, 2, true, 1e-5, 0.1, &mut rng).unwrap();
        assert!(layer.out_proj.is_zero());
        for seed in 0..5 {
            let fp = random_input(100 + seed, 6, 9);
            for mode in [BnMode::Training, BnMode::Inference] {
                let (out, _) = tsa_forward(&fp, &layer, mode).unwrap();
                assert_eq!(out.data(), fp.data());
            }
        }
    }

    #[test]
    fn shapes_follow_alpha() {
        let mut rng = SplitMix64::new(2);
        let layer = TsaLayer::random(12, 2, true, 1e-5, 0.1, &mut rng).unwrap();
        assert_eq!(layer.hidden_channels(), 6);
        let fp = random_input(3, 12, 16);
        let fwd = tsa_forward_cached(&fp, &layer, BnMode::Inference).unwrap();
        assert_eq!(fwd.b_gated.rows(), 6);
        assert_eq!(fwd.c_gated.rows(), 6);
        assert_eq!(fwd.mask.m_matrix.rows(), 16);
        assert_eq!(fwd.mask.m_matrix.cols(), 16);
        assert_eq!(fwd.output.rows(), 12);
        assert_eq!(fwd.output.cols(), 16);
    }

    #[test]
    fn alpha_must_divide_channels() {
        let mut rng = SplitMix64::new(3);
        assert!(TsaLayer::random(10, 4, true, 1e-5, 0.1, &mut rng).is_err());
        assert!(TsaLayer::random(10, 0, true, 1e-5, 0.1, &mut rng).is_err());
    }

    #[test]
    fn normalized_mask_rows_sum_to_one() {
        let mut rng = SplitMix64::new(4);
        let layer = TsaLayer::random(8, 2, true, 1e-5, 0.1, &mut rng).unwrap();
        let fp = random_input(5, 8, 7);
        let (_, mask) = tsa_forward(&fp, &layer, BnMode::Inference).unwrap();
        for i in 0..7 {
            let s: f64 = mask.m_matrix.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn m_vector_is_column_sums() {
        let mut rng = SplitMix64::new(5);
        for mask_norm in [true, false] {
            let layer = TsaLayer::random(8, 2, mask_norm, 1e-5, 0.1, &mut rng).unwrap();
            let fp = random_input(6, 8, 9);
            let (_, mask) = tsa_forward(&fp, &layer, BnMode::Inference).unwrap();
            for t in 0..9 {
                let col_sum: f64 = (0..9).map(|s| mask.m_matrix.at(s, t)).sum();
                assert!((mask.m_vector[t] - col_sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, mode, mask_norm) in [
            (6, BnMode::Inference, true),
            (7, BnMode::Training, true),
            (8, BnMode::Inference, false),
        ] {
            let mut rng = SplitMix64::new(seed);
            let mut layer = TsaLayer::random(6, 2, mask_norm, 1e-5, 0.1, &mut rng).unwrap();
            // Open the residual path; the zero output projection would hide
            // most of the graph from the loss.
            layer.out_proj = Linear::random(6, 3, &mut rng);
            let fp = random_input(60 + seed, 6, 5);

            let loss = |layer: &TsaLayer, fp: &RealMatrix| {
                let (out, _) = tsa_forward(fp, layer, mode).unwrap();
                out.data().iter().map(|v| v * v).sum::<f64>()
            };
            let fwd = tsa_forward_cached(&fp, &layer, mode).unwrap();
            let grad_out = fwd.output.map(|v| 2.0 * v);
            let (grads, grad_fp) = tsa_backward(&fp, &layer, &fwd, mode, &grad_out).unwrap();

            let h = 1e-5;
            let check = |num: f64, ana: f64, what: &str| {
                let denom = (num.abs() + ana.abs()).max(1e-8);
                assert!(
                    (num - ana).abs() / denom < 1e-5,
                    "{what}: numeric {num} vs analytic {ana}"
                );
            };

            for r in 0..3 {
                for c in 0..6 {
                    let mut lp = layer.clone();
                    *lp.proj_b.weights.at_mut(r, c) += h;
                    let mut lm = layer.clone();
                    *lm.proj_b.weights.at_mut(r, c) -= h;
                    check(
                        (loss(&lp, &fp) - loss(&lm, &fp)) / (2.0 * h),
                        grads.proj_b_w.at(r, c),
                        "proj_b_w",
                    );
                }
                let mut lp = layer.clone();
                lp.bn_b.gamma[r] += h;
                let mut lm = layer.clone();
                lm.bn_b.gamma[r] -= h;
                check(
                    (loss(&lp, &fp) - loss(&lm, &fp)) / (2.0 * h),
                    grads.bn_b_gamma[r],
                    "bn_b_gamma",
                );
                let mut lp = layer.clone();
                lp.bn_c.beta[r] += h;
                let mut lm = layer.clone();
                lm.bn_c.beta[r] -= h;
                check(
                    (loss(&lp, &fp) - loss(&lm, &fp)) / (2.0 * h),
                    grads.bn_c_beta[r],
                    "bn_c_beta",
                );
            }
            for r in 0..6 {
                for c in 0..3 {
                    let mut lp = layer.clone();
                    *lp.out_proj.weights.at_mut(r, c) += h;
                    let mut lm = layer.clone();
                    *lm.out_proj.weights.at_mut(r, c) -= h;
                    check(
                        (loss(&lp, &fp) - loss(&lm, &fp)) / (2.0 * h),
                        grads.out_proj_w.at(r, c),
                        "out_proj_w",
                    );
                }
            }
            for r in 0..6 {
                for t in 0..5 {
                    let mut fpp = fp.clone();
                    *fpp.at_mut(r, t) += h;
                    let mut fpm = fp.clone();
                    *fpm.at_mut(r, t) -= h;
                    check(
                        (loss(&layer, &fpp) - loss(&layer, &fpm)) / (2.0 * h),
                        grad_fp.at(r, t),
                        "grad_input",
                    );
                }
            }
        }
    }
}
