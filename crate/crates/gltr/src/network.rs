//! The aggregation network: optional dilated temporal pyramid, optional
//! temporal self-attention, temporal average pooling, and a softmax identity
//! classifier for training. Both ablation switches default to on; with both
//! off the network degenerates to the average-pool baseline.

use crate::batchnorm::{BnBatchStats, BnMode};
use crate::dtp::{dtp_backward, dtp_forward, DtpLayer};
use crate::error::{GltrError, Result};
use crate::linear::Linear;
use crate::rng::SplitMix64;
use crate::tensor::RealMatrix;
use crate::tsa::{tsa_backward, tsa_forward_cached, AttentionMask, TsaForward, TsaLayer};
use serde::{Deserialize, Serialize};

/// Model hyperparameters. Serialized into experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Frame feature dimension d.
    pub frame_dim: usize,
    /// Pyramid branches N; dilation of branch n is 2^(n-1).
    pub num_branches: usize,
    /// Temporal kernel width w (odd).
    pub kernel_width: usize,
    /// Channel reduction factor inside the attention block.
    pub alpha: usize,
    /// Row-softmax the attention mask before use.
    pub mask_normalization: bool,
    /// Ablation switches.
    pub use_dtp: bool,
    pub use_tsa: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_dim: 16,
            num_branches: 3,
            kernel_width: 3,
            alpha: 2,
            mask_normalization: true,
            use_dtp: true,
            use_tsa: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GltrNetwork {
    pub dtp: Option<DtpLayer>,
    pub tsa: Option<TsaLayer>,
    pub classifier: Linear,
    frame_dim: usize,
    num_identities: usize,
}

impl GltrNetwork {
    /// Build a network from config, deterministically seeded. The attention
    /// output projection starts at zero; everything else is uniform in
    /// [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn new(cfg: &ModelConfig, num_identities: usize, seed: u64) -> Result<Self> {
        if num_identities == 0 {
            return Err(GltrError::InvalidArgument(
                "need at least one identity".into(),
            ));
        }
        let mut rng = SplitMix64::fork(seed, 0x6e65);
        let dtp = if cfg.use_dtp {
            Some(DtpLayer::random(
                cfg.frame_dim,
                cfg.num_branches,
                cfg.kernel_width,
                &mut rng,
            )?)
        } else {
            None
        };
        let emb = if cfg.use_dtp {
            cfg.frame_dim * cfg.num_branches
        } else {
            cfg.frame_dim
        };
        let tsa = if cfg.use_tsa {
            Some(TsaLayer::random(
                emb,
                cfg.alpha,
                cfg.mask_normalization,
                cfg.bn_eps,
                cfg.bn_momentum,
                &mut rng,
            )?)
        } else {
            None
        };
        let classifier = Linear::random(num_identities, emb, &mut rng);
        Ok(Self {
            dtp,
            tsa,
            classifier,
            frame_dim: cfg.frame_dim,
            num_identities,
        })
    }

    /// Assemble a network from existing parts (checkpoint loading). The
    /// classifier's output width defines the identity count.
    pub fn from_parts(
        dtp: Option<DtpLayer>,
        tsa: Option<TsaLayer>,
        classifier: Linear,
        frame_dim: usize,
    ) -> Result<Self> {
        let emb = frame_dim * dtp.as_ref().map_or(1, |d| d.num_branches());
        if let Some(d) = &dtp {
            if d.input_channels() != frame_dim {
                return Err(GltrError::DimensionMismatch(
                    "pyramid input channels differ from frame_dim".into(),
                ));
            }
        }
        if let Some(t) = &tsa {
            if t.in_channels() != emb {
                return Err(GltrError::DimensionMismatch(
                    "attention width differs from the embedding width".into(),
                ));
            }
        }
        if classifier.in_features() != emb {
            return Err(GltrError::DimensionMismatch(
                "classifier input width differs from the embedding width".into(),
            ));
        }
        let num_identities = classifier.out_features();
        Ok(Self { dtp, tsa, classifier, frame_dim, num_identities })
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn num_branches(&self) -> usize {
        self.dtp.as_ref().map_or(0, |d| d.num_branches())
    }

    pub fn embedding_dim(&self) -> usize {
        self.frame_dim * self.num_branches().max(1)
    }

    /// Trainable parameter groups in canonical (declaration) order.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        if let Some(dtp) = &self.dtp {
            for n in 0..dtp.num_branches() {
                groups.push(ParamGroup::DtpTaps(n));
            }
        }
        if self.tsa.is_some() {
            groups.extend([
                ParamGroup::ProjBWeights,
                ParamGroup::ProjBBias,
                ParamGroup::ProjCWeights,
                ParamGroup::ProjCBias,
                ParamGroup::ProjFWeights,
                ParamGroup::ProjFBias,
                ParamGroup::BnBGamma,
                ParamGroup::BnBBeta,
                ParamGroup::BnCGamma,
                ParamGroup::BnCBeta,
                ParamGroup::OutProjWeights,
                ParamGroup::OutProjBias,
            ]);
        }
        groups.push(ParamGroup::ClassifierWeights);
        groups.push(ParamGroup::ClassifierBias);
        groups
    }

    pub fn params(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::DtpTaps(n) => self.dtp.as_ref().unwrap().branches()[n].taps().data(),
            ParamGroup::ProjBWeights => self.tsa.as_ref().unwrap().proj_b.weights.data(),
            ParamGroup::ProjBBias => &self.tsa.as_ref().unwrap().proj_b.bias,
            ParamGroup::ProjCWeights => self.tsa.as_ref().unwrap().proj_c.weights.data(),
            ParamGroup::ProjCBias => &self.tsa.as_ref().unwrap().proj_c.bias,
            ParamGroup::ProjFWeights => self.tsa.as_ref().unwrap().proj_f.weights.data(),
            ParamGroup::ProjFBias => &self.tsa.as_ref().unwrap().proj_f.bias,
            ParamGroup::BnBGamma => &self.tsa.as_ref().unwrap().bn_b.gamma,
            ParamGroup::BnBBeta => &self.tsa.as_ref().unwrap().bn_b.beta,
            ParamGroup::BnCGamma => &self.tsa.as_ref().unwrap().bn_c.gamma,
            ParamGroup::BnCBeta => &self.tsa.as_ref().unwrap().bn_c.beta,
            ParamGroup::OutProjWeights => self.tsa.as_ref().unwrap().out_proj.weights.data(),
            ParamGroup::OutProjBias => &self.tsa.as_ref().unwrap().out_proj.bias,
            ParamGroup::ClassifierWeights => self.classifier.weights.data(),
            ParamGroup::ClassifierBias => &self.classifier.bias,
        }
    }

    pub fn params_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::DtpTaps(n) => self.dtp.as_mut().unwrap().branches_mut()[n]
                .taps_mut()
                .data_mut(),
            ParamGroup::ProjBWeights => self.tsa.as_mut().unwrap().proj_b.weights.data_mut(),
            ParamGroup::ProjBBias => &mut self.tsa.as_mut().unwrap().proj_b.bias,
            ParamGroup::ProjCWeights => self.tsa.as_mut().unwrap().proj_c.weights.data_mut(),
            ParamGroup::ProjCBias => &mut self.tsa.as_mut().unwrap().proj_c.bias,
            ParamGroup::ProjFWeights => self.tsa.as_mut().unwrap().proj_f.weights.data_mut(),
            ParamGroup::ProjFBias => &mut self.tsa.as_mut().unwrap().proj_f.bias,
            ParamGroup::BnBGamma => &mut self.tsa.as_mut().unwrap().bn_b.gamma,
            ParamGroup::BnBBeta => &mut self.tsa.as_mut().unwrap().bn_b.beta,
            ParamGroup::BnCGamma => &mut self.tsa.as_mut().unwrap().bn_c.gamma,
            ParamGroup::BnCBeta => &mut self.tsa.as_mut().unwrap().bn_c.beta,
            ParamGroup::OutProjWeights => self.tsa.as_mut().unwrap().out_proj.weights.data_mut(),
            ParamGroup::OutProjBias => &mut self.tsa.as_mut().unwrap().out_proj.bias,
            ParamGroup::ClassifierWeights => self.classifier.weights.data_mut(),
            ParamGroup::ClassifierBias => &mut self.classifier.bias,
        }
    }

    /// Fold a clip's batch-norm statistics into the running estimates.
    pub fn absorb_bn_stats(&mut self, stats: &(BnBatchStats, BnBatchStats)) {
        if let Some(tsa) = &mut self.tsa {
            tsa.bn_b.absorb(&stats.0);
            tsa.bn_c.absorb(&stats.1);
        }
    }
}

/// One trainable parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    DtpTaps(usize),
    ProjBWeights,
    ProjBBias,
    ProjCWeights,
    ProjCBias,
    ProjFWeights,
    ProjFBias,
    BnBGamma,
    BnBBeta,
    BnCGamma,
    BnCBeta,
    OutProjWeights,
    OutProjBias,
    ClassifierWeights,
    ClassifierBias,
}

impl ParamGroup {
    pub fn name(&self) -> String {
        match self {
            ParamGroup::DtpTaps(n) => format!("dtp.taps[{n}]"),
            ParamGroup::ProjBWeights => "tsa.proj_b.weights".into(),
            ParamGroup::ProjBBias => "tsa.proj_b.bias".into(),
            ParamGroup::ProjCWeights => "tsa.proj_c.weights".into(),
            ParamGroup::ProjCBias => "tsa.proj_c.bias".into(),
            ParamGroup::ProjFWeights => "tsa.proj_f.weights".into(),
            ParamGroup::ProjFBias => "tsa.proj_f.bias".into(),
            ParamGroup::BnBGamma => "tsa.bn_b.gamma".into(),
            ParamGroup::BnBBeta => "tsa.bn_b.beta".into(),
            ParamGroup::BnCGamma => "tsa.bn_c.gamma".into(),
            ParamGroup::BnCBeta => "tsa.bn_c.beta".into(),
            ParamGroup::OutProjWeights => "tsa.out_proj.weights".into(),
            ParamGroup::OutProjBias => "tsa.out_proj.bias".into(),
            ParamGroup::ClassifierWeights => "classifier.weights".into(),
            ParamGroup::ClassifierBias => "classifier.bias".into(),
        }
    }
}

/// Gradient accumulators matching a network's trainable parameters, plus the
/// gradient w.r.t. the most recent input clip.
#[derive(Debug, Clone)]
pub struct GradientTape {
    buffers: Vec<(ParamGroup, Vec<f64>)>,
    pub input_grad: Option<RealMatrix>,
}

impl GradientTape {
    pub fn for_network(net: &GltrNetwork) -> Self {
        let buffers = net
            .param_groups()
            .into_iter()
            .map(|g| (g, vec![0.0; net.params(g).len()]))
            .collect();
        Self { buffers, input_grad: None }
    }

    pub fn grad(&self, group: ParamGroup) -> &[f64] {
        &self
            .buffers
            .iter()
            .find(|(g, _)| *g == group)
            .expect("tape does not track this group")
            .1
    }

    fn grad_mut(&mut self, group: ParamGroup) -> &mut Vec<f64> {
        &mut self
            .buffers
            .iter_mut()
            .find(|(g, _)| *g == group)
            .expect("tape does not track this group")
            .1
    }

    pub fn accumulate(&mut self, group: ParamGroup, values: &[f64]) {
        let buf = self.grad_mut(group);
        assert_eq!(buf.len(), values.len(), "gradient shape mismatch");
        for (b, v) in buf.iter_mut().zip(values) {
            *b += v;
        }
    }

    pub fn reset(&mut self) {
        for (_, buf) in &mut self.buffers {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
        self.input_grad = None;
    }

    pub fn scale(&mut self, s: f64) {
        for (_, buf) in &mut self.buffers {
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = ParamGroup> + '_ {
        self.buffers.iter().map(|(g, _)| *g)
    }
}

/// Mean over the time axis: component c of the result is the average of
/// row c.
pub fn temporal_avg_pool(fpp: &RealMatrix) -> Vec<f64> {
    let t = fpp.cols() as f64;
    (0..fpp.rows())
        .map(|c| fpp.row(c).iter().sum::<f64>() / t)
        .collect()
}

/// Everything one forward pass produces.
pub struct ForwardPass {
    input: RealMatrix,
    dtp_out: Option<RealMatrix>,
    tsa_fwd: Option<TsaForward>,
    pub features: RealMatrix,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardPass {
    pub fn mask(&self) -> Option<&AttentionMask> {
        self.tsa_fwd.as_ref().map(|f| &f.mask)
    }

    pub fn bn_stats(&self) -> Option<&(BnBatchStats, BnBatchStats)> {
        self.tsa_fwd.as_ref().and_then(|f| f.bn_stats.as_ref())
    }

    /// Pyramid output F' (falls back to the input when the pyramid is off).
    pub fn local_features(&self) -> &RealMatrix {
        self.dtp_out.as_ref().unwrap_or(&self.input)
    }
}

/// Full forward pass including classifier logits. Pure; training-mode BN
/// statistics ride along in the result for the caller to absorb.
pub fn forward_pass(net: &GltrNetwork, f: &RealMatrix, mode: BnMode) -> Result<ForwardPass> {
    if f.rows() != net.frame_dim {
        return Err(GltrError::DimensionMismatch(format!(
            "clip has {} channels, network expects {}",
            f.rows(),
            net.frame_dim
        )));
    }
    let dtp_out = match &net.dtp {
        Some(dtp) => Some(dtp_forward(f, dtp)?),
        None => None,
    };
    let fp = dtp_out.as_ref().unwrap_or(f);
    let tsa_fwd = match &net.tsa {
        Some(tsa) => Some(tsa_forward_cached(fp, tsa, mode)?),
        None => None,
    };
    let features = match &tsa_fwd {
        Some(t) => t.output.clone(),
        None => fp.clone(),
    };
    let embedding = temporal_avg_pool(&features);
    let logits = net.classifier.forward_vec(&embedding)?;
    let probs = softmax(&logits);
    Ok(ForwardPass {
        input: f.clone(),
        dtp_out,
        tsa_fwd,
        features,
        embedding,
        logits,
        probs,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy of the classifier on one pooled embedding.
pub fn cross_entropy_loss(pass: &ForwardPass, label: usize) -> Result<f64> {
    if label >= pass.probs.len() {
        return Err(GltrError::LabelOutOfRange {
            label,
            num_identities: pass.probs.len(),
        });
    }
    let max = pass.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + pass.logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - pass.logits[label])
}

/// Video-level embedding: pool the attention output over time. Returns the
/// attention mask when the attention block is present. Deterministic in
/// inference mode.
pub fn gltr_embed(
    net: &GltrNetwork,
    f: &RealMatrix,
    mode: BnMode,
) -> Result<(Vec<f64>, Option<AttentionMask>)> {
    let pass = forward_pass(net, f, mode)?;
    let mask = pass.tsa_fwd.map(|t| t.mask);
    Ok((pass.embedding, mask))
}

/// Result of one clip's forward/backward.
pub struct ClipResult {
    pub loss: f64,
    /// Classifier argmax equals the label.
    pub correct: bool,
    pub bn_stats: Option<(BnBatchStats, BnBatchStats)>,
}

/// Forward + backward for one clip, accumulating parameter gradients into
/// the tape. Pure w.r.t. the network: training-mode BN statistics are
/// returned for the caller to absorb (in a fixed order, for determinism).
pub fn clip_forward_backward(
    net: &GltrNetwork,
    f: &RealMatrix,
    label: usize,
    mode: BnMode,
    tape: &mut GradientTape,
) -> Result<ClipResult> {
    let pass = forward_pass(net, f, mode)?;
    let loss = cross_entropy_loss(&pass, label)?;

    // d loss / d logits = softmax - one-hot.
    let mut d_logits = pass.probs.clone();
    d_logits[label] -= 1.0;

    // Classifier.
    let emb_dim = pass.embedding.len();
    let k = d_logits.len();
    let mut d_cls_w = vec![0.0; k * emb_dim];
    for i in 0..k {
        for c in 0..emb_dim {
            d_cls_w[i * emb_dim + c] = d_logits[i] * pass.embedding[c];
        }
    }
    tape.accumulate(ParamGroup::ClassifierWeights, &d_cls_w);
    tape.accumulate(ParamGroup::ClassifierBias, &d_logits);

    let d_embedding: Vec<f64> = (0..emb_dim)
        .map(|c| {
            (0..k)
                .map(|i| net.classifier.weights.at(i, c) * d_logits[i])
                .sum()
        })
        .collect();

    // Pooling spreads the gradient evenly over time.
    let t_len = pass.features.cols();
    let d_features = RealMatrix::from_fn(emb_dim, t_len, |c, _| d_embedding[c] / t_len as f64);

    // Attention block.
    let d_fp = match (&net.tsa, &pass.tsa_fwd) {
        (Some(tsa), Some(tsa_fwd)) => {
            let fp = pass.local_features();
            let (grads, d_fp) = tsa_backward(fp, tsa, tsa_fwd, mode, &d_features)?;
            tape.accumulate(ParamGroup::ProjBWeights, grads.proj_b_w.data());
            tape.accumulate(ParamGroup::ProjBBias, &grads.proj_b_b);
            tape.accumulate(ParamGroup::ProjCWeights, grads.proj_c_w.data());
            tape.accumulate(ParamGroup::ProjCBias, &grads.proj_c_b);
            tape.accumulate(ParamGroup::ProjFWeights, grads.proj_f_w.data());
            tape.accumulate(ParamGroup::ProjFBias, &grads.proj_f_b);
            tape.accumulate(ParamGroup::BnBGamma, &grads.bn_b_gamma);
            tape.accumulate(ParamGroup::BnBBeta, &grads.bn_b_beta);
            tape.accumulate(ParamGroup::BnCGamma, &grads.bn_c_gamma);
            tape.accumulate(ParamGroup::BnCBeta, &grads.bn_c_beta);
            tape.accumulate(ParamGroup::OutProjWeights, grads.out_proj_w.data());
            tape.accumulate(ParamGroup::OutProjBias, &grads.out_proj_b);
            d_fp
        }
        _ => d_features,
    };

    // Pyramid.
    let d_input = match &net.dtp {
        Some(dtp) => {
            let (tap_grads, d_input) = dtp_backward(&pass.input, dtp, &d_fp)?;
            for (n, g) in tap_grads.iter().enumerate() {
                tape.accumulate(ParamGroup::DtpTaps(n), g.data());
            }
            d_input
        }
        None => d_fp,
    };
    tape.input_grad = Some(d_input);

    let argmax = pass
        .logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(ClipResult {
        loss,
        correct: argmax == label,
        bn_stats: pass.tsa_fwd.and_then(|t| t.bn_stats),
    })
}

/// Training-mode forward/backward for one clip, updating the network's
/// running batch-norm statistics in place. Loss is the softmax cross-entropy
/// on the pooled embedding.
pub fn forward_backward(
    net: &mut GltrNetwork,
    f: &RealMatrix,
    label: usize,
    tape: &mut GradientTape,
) -> Result<f64> {
    let result = clip_forward_backward(net, f, label, BnMode::Training, tape)?;
    if let Some(stats) = &result.bn_stats {
        net.absorb_bn_stats(stats);
    }
    Ok(result.loss)
}

/// Loss as a plain function of the network, for finite differencing.
pub fn loss_only(net: &GltrNetwork, f: &RealMatrix, label: usize, mode: BnMode) -> Result<f64> {
    let pass = forward_pass(net, f, mode)?;
    cross_entropy_loss(&pass, label)
}
