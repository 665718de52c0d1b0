pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod trace;
pub mod train;

use crate::Context;
use anyhow::{bail, Context as _, Result};
use gltr::batchnorm::BnMode;
use gltr::eval::EmbeddingRecord;
use gltr::features::SequenceRecord;
use gltr::network::{gltr_embed, GltrNetwork};
use std::path::Path;

/// Validate, create the output directory, and record the configs. Called by
/// every command before it writes anything, so config errors never leave
/// partial output behind.
fn prepare_run(ctx: &Context) -> Result<()> {
    ctx.cfg.validate()?;
    std::fs::create_dir_all(&ctx.out)
        .with_context(|| format!("creating output directory {}", ctx.out.display()))?;
    crate::config::record_configs(&ctx.out, ctx.config_path.as_deref(), &ctx.cfg)
}

fn read_records(path: &Path) -> Result<Vec<SequenceRecord>> {
    let (_, records) = gltr::features::read_features(path)
        .with_context(|| format!("reading features {}", path.display()))?;
    Ok(records)
}

/// Embed every sequence; per-record work is independent, so it fans out over
/// up to `threads` workers with results landing in stable slots.
fn embed_all(
    net: &GltrNetwork,
    records: &[SequenceRecord],
    threads: usize,
) -> Result<Vec<EmbeddingRecord>> {
    for r in records {
        if r.frame_dim() != net.frame_dim() {
            bail!(
                "sequence has d={}, checkpoint expects d={}",
                r.frame_dim(),
                net.frame_dim()
            );
        }
    }
    let embed_one = |r: &SequenceRecord| {
        let (vector, _) = gltr_embed(net, &r.features, BnMode::Inference)
            .expect("dimensions were validated above");
        EmbeddingRecord { person_id: r.person_id, camera_id: r.camera_id, vector }
    };
    let workers = threads.clamp(1, records.len().max(1));
    if workers <= 1 {
        return Ok(records.iter().map(embed_one).collect());
    }
    let chunk = records.len().div_ceil(workers);
    let mut out: Vec<Option<EmbeddingRecord>> = vec![None; records.len()];
    std::thread::scope(|scope| {
        for (recs, slots) in records.chunks(chunk).zip(out.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (r, slot) in recs.iter().zip(slots.iter_mut()) {
                    *slot = Some(embed_one(r));
                }
            });
        }
    });
    Ok(out.into_iter().map(|e| e.expect("every slot filled")).collect())
}
