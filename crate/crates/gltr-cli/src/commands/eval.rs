use crate::Context;
use anyhow::{bail, Result};
use gltr::checkpoint::{read_checkpoint, LoadOptions};
use gltr::eval::{evaluate, EvalProtocol};
use gltr::synth::generate_benchmark;
use std::fmt::Write as _;
use std::path::Path;

#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Context,
    checkpoint: &Path,
    query: Option<&Path>,
    gallery: Option<&Path>,
    embeddings_out: Option<&Path>,
    include_same_camera: bool,
    k_max: Option<usize>,
) -> Result<()> {
    let options = LoadOptions {
        mask_normalization: ctx.cfg.model.mask_normalization,
        bn_eps: ctx.cfg.model.bn_eps,
        bn_momentum: ctx.cfg.model.bn_momentum,
    };
    let net = read_checkpoint(checkpoint, &options)?;

    let (query_records, gallery_records) = match (
        query.or(ctx.cfg.data_files.query.as_deref()),
        gallery.or(ctx.cfg.data_files.gallery.as_deref()),
    ) {
        (Some(q), Some(g)) => (super::read_records(q)?, super::read_records(g)?),
        (None, None) => {
            let bench = generate_benchmark(&ctx.cfg.data)?;
            (bench.query, bench.gallery)
        }
        _ => bail!("--query and --gallery must be given together"),
    };

    let protocol = EvalProtocol {
        cross_camera_only: ctx.cfg.eval.cross_camera_only && !include_same_camera,
        k_max: k_max.unwrap_or(ctx.cfg.eval.k_max),
    };

    super::prepare_run(ctx)?;
    let query_embeddings = super::embed_all(&net, &query_records, ctx.threads)?;
    let gallery_embeddings = super::embed_all(&net, &gallery_records, ctx.threads)?;
    let report = evaluate(&query_embeddings, &gallery_embeddings, &protocol)?;
    if report.k_max_clamped {
        eprintln!(
            "warning: k_max {} exceeds the gallery; CMC clamped to {} ranks",
            protocol.k_max,
            report.cmc.len()
        );
    }

    std::fs::write(ctx.out.join("report.json"), report.to_json())?;
    if let Some(path) = embeddings_out {
        // All outputs stay under --out.
        if path.is_absolute() {
            bail!("--embeddings-out must be a path relative to --out");
        }
        let path = ctx.out.join(path);
        let mut csv = String::from("split,person_id,camera_id,embedding\n");
        for (split, records) in [("query", &query_embeddings), ("gallery", &gallery_embeddings)] {
            for r in records {
                let joined = r
                    .vector
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                writeln!(csv, "{split},{},{},{joined}", r.person_id, r.camera_id)?;
            }
        }
        std::fs::write(path, csv)?;
    }

    println!(
        "rank1 {} mAP {} over {} queries ({} skipped)",
        report.rank1(),
        report.map,
        report.num_queries_evaluated,
        report.skipped_queries
    );
    Ok(())
}
