use crate::Context;
use anyhow::{bail, Context as _, Result};
use gltr::checkpoint::{read_checkpoint, write_checkpoint, LoadOptions};
use gltr::network::{GltrNetwork, ModelConfig};
use gltr::synth::generate_benchmark;
use gltr::train::{identity_labels, train_from};
use std::path::Path;

pub fn run(
    ctx: &Context,
    no_dtp: bool,
    no_tsa: bool,
    features: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    let model_cfg = ModelConfig {
        use_dtp: ctx.cfg.model.use_dtp && !no_dtp,
        use_tsa: ctx.cfg.model.use_tsa && !no_tsa,
        ..ctx.cfg.model.clone()
    };

    let dataset = match features.or(ctx.cfg.data_files.train.as_deref()) {
        Some(path) => super::read_records(path)?,
        None => generate_benchmark(&ctx.cfg.data)?.train,
    };
    if dataset.is_empty() {
        bail!("training dataset is empty");
    }
    let num_identities = identity_labels(&dataset).len();

    let (mut net, start_epoch) = match resume {
        Some(dir) => {
            let options = LoadOptions {
                mask_normalization: model_cfg.mask_normalization,
                bn_eps: model_cfg.bn_eps,
                bn_momentum: model_cfg.bn_momentum,
            };
            let net = read_checkpoint(&dir.join("checkpoint.gltr"), &options)
                .with_context(|| format!("loading checkpoint from {}", dir.display()))?;
            if net.num_identities() != num_identities {
                bail!(
                    "resumed checkpoint classifies {} identities, dataset has {}",
                    net.num_identities(),
                    num_identities
                );
            }
            let start = last_logged_epoch(&dir.join("train_log.csv"))?
                .map_or(0, |epoch| epoch + 1);
            (net, start)
        }
        None => (
            GltrNetwork::new(&model_cfg, num_identities, ctx.cfg.net_seed())?,
            0,
        ),
    };
    if start_epoch >= ctx.cfg.train.total_epochs {
        bail!(
            "resume epoch {start_epoch} is past total_epochs {}",
            ctx.cfg.train.total_epochs
        );
    }

    super::prepare_run(ctx)?;
    let log = train_from(&dataset, &mut net, &ctx.cfg.train, start_epoch)?;
    for warning in &log.warnings {
        eprintln!("warning: {warning}");
    }

    std::fs::write(ctx.out.join("train_log.csv"), log.to_csv())?;
    write_checkpoint(&ctx.out.join("checkpoint.gltr"), &net)?;

    if let Some(last) = log.epochs.last() {
        println!(
            "trained epochs {}..={} ({} identities, {} tracklets): loss {} accuracy {}",
            start_epoch,
            last.epoch,
            num_identities,
            dataset.len(),
            last.mean_loss,
            last.train_accuracy
        );
    }
    Ok(())
}

/// Last epoch index in a training-log CSV, if any rows exist.
fn last_logged_epoch(path: &Path) -> Result<Option<usize>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading training log {}", path.display()))?;
    let last = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .last();
    match last {
        None => Ok(None),
        Some(line) => {
            let epoch = line
                .split(',')
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .with_context(|| format!("unparseable log line: {line}"))?;
            Ok(Some(epoch))
        }
    }
}
