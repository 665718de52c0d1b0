use crate::Context;
use anyhow::Result;
use gltr::features::write_features;
use gltr::synth::generate_benchmark;
use serde::Serialize;

#[derive(Serialize)]
struct Manifest {
    frame_dim: usize,
    tracklet_len: usize,
    num_identities: usize,
    cameras: usize,
    train_records: usize,
    query_records: usize,
    gallery_records: usize,
    train_file: &'static str,
    query_file: &'static str,
    gallery_file: &'static str,
}

pub fn run(ctx: &Context) -> Result<()> {
    // Generate before touching the filesystem; bad configs must not leave
    // partial files.
    let bench = generate_benchmark(&ctx.cfg.data)?;
    super::prepare_run(ctx)?;

    let d = ctx.cfg.data.frame_dim;
    write_features(&ctx.out.join("train.glfv"), &bench.train, d)?;
    write_features(&ctx.out.join("query.glfv"), &bench.query, d)?;
    write_features(&ctx.out.join("gallery.glfv"), &bench.gallery, d)?;

    let manifest = Manifest {
        frame_dim: d,
        tracklet_len: ctx.cfg.data.tracklet_len,
        num_identities: ctx.cfg.data.num_identities,
        cameras: ctx.cfg.data.cameras,
        train_records: bench.train.len(),
        query_records: bench.query.len(),
        gallery_records: bench.gallery.len(),
        train_file: "train.glfv",
        query_file: "query.glfv",
        gallery_file: "gallery.glfv",
    };
    std::fs::write(
        ctx.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "generated {} train / {} query / {} gallery tracklets under {}",
        bench.train.len(),
        bench.query.len(),
        bench.gallery.len(),
        ctx.out.display()
    );
    Ok(())
}
