//! Clip sampling, the step learning-rate schedule, and the epoch loop:
//! plain SGD on softmax loss, no momentum or weight decay unless asked for.
//!
//! Determinism contract: given (seed, dataset, config) the whole run is
//! bit-reproducible. Every random draw comes from a stream forked off
//! (seed, epoch), so epoch k's shuffle and clip starts do not depend on how
//! earlier epochs went — which also makes resumed runs line up with straight
//! ones.

use crate::batchnorm::BnMode;
use crate::error::{GltrError, Result};
use crate::features::SequenceRecord;
use crate::network::{clip_forward_backward, GltrNetwork, GradientTape, ParamGroup};
use crate::rng::SplitMix64;
use crate::tensor::RealMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Frames per training clip.
    pub clip_length: usize,
    /// Clips per SGD step.
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Multiplier applied once at the decay epoch.
    pub lr_decay_factor: f64,
    /// First epoch index that uses the reduced rate.
    pub lr_decay_epoch: usize,
    pub total_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_length: 16,
            batch_size: 10,
            lr_initial: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 120,
            total_epochs: 400,
            seed: 0,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_length == 0 || self.batch_size == 0 || self.total_epochs == 0 {
            return Err(GltrError::InvalidArgument(
                "clip_length, batch_size and total_epochs must be positive".into(),
            ));
        }
        if self.lr_initial <= 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(GltrError::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if self.lr_decay_epoch >= self.total_epochs {
            return Err(GltrError::InvalidArgument(format!(
                "lr_decay_epoch ({}) must be < total_epochs ({})",
                self.lr_decay_epoch, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// A batch of equally sized clips with their identity labels.
#[derive(Debug, Clone)]
pub struct ClipBatch {
    clips: Vec<RealMatrix>,
    labels: Vec<usize>,
}

impl ClipBatch {
    pub fn new(clips: Vec<RealMatrix>, labels: Vec<usize>) -> Result<Self> {
        if clips.is_empty() {
            return Err(GltrError::EmptyInput("batch with no clips".into()));
        }
        if clips.len() != labels.len() {
            return Err(GltrError::InvalidArgument(
                "one label per clip required".into(),
            ));
        }
        let (d, t) = (clips[0].rows(), clips[0].cols());
        if clips.iter().any(|c| c.rows() != d || c.cols() != t) {
            return Err(GltrError::DimensionMismatch(
                "all clips in a batch must share one shape".into(),
            ));
        }
        Ok(Self { clips, labels })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[RealMatrix] {
        &self.clips
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Contiguous window of `clip_length` frames at a uniformly random start.
/// Shorter tracklets are extended by repeating their last frame.
pub fn sample_clip(
    tracklet: &RealMatrix,
    clip_length: usize,
    rng: &mut SplitMix64,
) -> Result<RealMatrix> {
    if clip_length == 0 {
        return Err(GltrError::InvalidArgument("clip_length must be positive".into()));
    }
    let t_len = tracklet.cols();
    if t_len == 0 {
        return Err(GltrError::EmptyInput("tracklet has no frames".into()));
    }
    if t_len >= clip_length {
        let start = if t_len == clip_length {
            0
        } else {
            rng.below(t_len - clip_length + 1)
        };
        Ok(RealMatrix::from_fn(tracklet.rows(), clip_length, |c, t| {
            tracklet.at(c, start + t)
        }))
    } else {
        Ok(RealMatrix::from_fn(tracklet.rows(), clip_length, |c, t| {
            tracklet.at(c, t.min(t_len - 1))
        }))
    }
}

/// Step schedule: `lr_initial` before the decay epoch, `lr_initial *
/// lr_decay_factor` at and after it.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(GltrError::InvalidArgument(format!(
            "epoch {epoch} out of range (total_epochs {})",
            cfg.total_epochs
        )));
    }
    Ok(if epoch < cfg.lr_decay_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_initial * cfg.lr_decay_factor
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    /// CSV with the columns epoch, lr, mean_loss, train_accuracy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,mean_loss,train_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.lr, e.mean_loss, e.train_accuracy
            ));
        }
        out
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.epochs.last().map(|e| e.epoch)
    }
}

/// Plain SGD with optional momentum and weight decay (both default off).
struct SgdOptimizer {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<(ParamGroup, Vec<f64>)>,
}

impl SgdOptimizer {
    fn new(net: &GltrNetwork, momentum: f64, weight_decay: f64) -> Self {
        let velocity = if momentum > 0.0 {
            net.param_groups()
                .into_iter()
                .map(|g| (g, vec![0.0; net.params(g).len()]))
                .collect()
        } else {
            Vec::new()
        };
        Self { momentum, weight_decay, velocity }
    }

    fn step(&mut self, net: &mut GltrNetwork, tape: &GradientTape, lr: f64) {
        for group in net.param_groups() {
            let grads = tape.grad(group).to_vec();
            let params = net.params_mut(group);
            if self.momentum > 0.0 {
                let vel = &mut self
                    .velocity
                    .iter_mut()
                    .find(|(g, _)| *g == group)
                    .expect("velocity buffer missing")
                    .1;
                for i in 0..params.len() {
                    let g = grads[i] + self.weight_decay * params[i];
                    vel[i] = self.momentum * vel[i] + g;
                    params[i] -= lr * vel[i];
                }
            } else if self.weight_decay > 0.0 {
                for i in 0..params.len() {
                    params[i] -= lr * (grads[i] + self.weight_decay * params[i]);
                }
            } else {
                for i in 0..params.len() {
                    params[i] -= lr * grads[i];
                }
            }
        }
    }
}

/// Map arbitrary person ids onto classifier indices, sorted ascending.
pub fn identity_labels(dataset: &[SequenceRecord]) -> Vec<u32> {
    let mut ids: Vec<u32> = dataset.iter().map(|r| r.person_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Train `net` on the labeled tracklets from epoch 0.
pub fn train(
    dataset: &[SequenceRecord],
    net: &mut GltrNetwork,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_from(dataset, net, cfg, 0)
}

/// Train starting at `start_epoch` (for checkpoint resumption); the schedule
/// is a pure function of the epoch index, so resuming continues it exactly.
pub fn train_from(
    dataset: &[SequenceRecord],
    net: &mut GltrNetwork,
    cfg: &TrainConfig,
    start_epoch: usize,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(GltrError::EmptyInput("training dataset has no tracklets".into()));
    }
    let ids = identity_labels(dataset);
    if ids.len() != net.num_identities() {
        return Err(GltrError::InvalidArgument(format!(
            "dataset has {} identities, classifier expects {}",
            ids.len(),
            net.num_identities()
        )));
    }
    let labels: Vec<usize> = dataset
        .iter()
        .map(|r| ids.binary_search(&r.person_id).unwrap())
        .collect();
    if dataset.iter().any(|r| r.frame_dim() != net.frame_dim()) {
        return Err(GltrError::DimensionMismatch(
            "tracklet frame dimension differs from the network's".into(),
        ));
    }

    let mut log = TrainLog::default();
    if let Some(dtp) = &net.dtp {
        let reach = 2 * dtp.max_reach() + 1;
        if cfg.clip_length < reach {
            log.warnings.push(format!(
                "clip_length {} is shorter than the widest receptive field ({} frames); \
                 outer branches will mostly see padding",
                cfg.clip_length, reach
            ));
        }
    }

    let mut optimizer = SgdOptimizer::new(net, cfg.momentum, cfg.weight_decay);
    let mut tape = GradientTape::for_network(net);

    for epoch in start_epoch..cfg.total_epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let mut rng = SplitMix64::fork(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = ClipBatch::new(
                chunk
                    .iter()
                    .map(|&idx| sample_clip(&dataset[idx].features, cfg.clip_length, &mut rng))
                    .collect::<Result<_>>()?,
                chunk.iter().map(|&idx| labels[idx]).collect(),
            )?;
            tape.reset();
            let (loss_sum, correct) = accumulate_batch(net, &batch, &mut tape)?;
            epoch_loss += loss_sum;
            epoch_correct += correct;
            tape.scale(1.0 / batch.len() as f64);
            optimizer.step(net, &tape, lr);
        }

        log.epochs.push(EpochStats {
            epoch,
            lr,
            mean_loss: epoch_loss / dataset.len() as f64,
            train_accuracy: epoch_correct as f64 / dataset.len() as f64,
        });
    }
    Ok(log)
}

/// Per-clip forward/backward over one batch, gradients summed into the tape
/// and batch-norm statistics absorbed in clip order (the fixed accumulation
/// order behind the determinism contract). Returns (loss sum, correct count).
fn accumulate_batch(
    net: &mut GltrNetwork,
    batch: &ClipBatch,
    tape: &mut GradientTape,
) -> Result<(f64, usize)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (clip, &label) in batch.clips().iter().zip(batch.labels()) {
        let result = clip_forward_backward(net, clip, label, BnMode::Training, tape)?;
        if let Some(stats) = &result.bn_stats {
            net.absorb_bn_stats(stats);
        }
        loss_sum += result.loss;
        correct += result.correct as usize;
    }
    Ok((loss_sum, correct))
}
