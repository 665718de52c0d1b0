use crate::Context;
use anyhow::{bail, Context as _, Result};
use gltr::batchnorm::BnMode;
use gltr::checkpoint::{read_checkpoint, LoadOptions};
use gltr::dtp::dtp_forward;
use gltr::tensor::{pca_first_component, RealMatrix};
use gltr::tsa::tsa_forward;
use std::path::Path;

pub fn run(ctx: &Context, checkpoint: &Path, features: &Path, record: usize) -> Result<()> {
    let options = LoadOptions {
        mask_normalization: ctx.cfg.model.mask_normalization,
        bn_eps: ctx.cfg.model.bn_eps,
        bn_momentum: ctx.cfg.model.bn_momentum,
    };
    let net = read_checkpoint(checkpoint, &options)?;
    let Some(tsa) = &net.tsa else {
        bail!("trace needs a checkpoint with the attention block present");
    };

    let records = super::read_records(features)?;
    let rec = records
        .get(record)
        .with_context(|| format!("feature file has {} records, asked for {record}", records.len()))?;
    if rec.frame_dim() != net.frame_dim() {
        bail!(
            "record has d={}, checkpoint expects d={}",
            rec.frame_dim(),
            net.frame_dim()
        );
    }

    let input = &rec.features;
    let local = match &net.dtp {
        Some(dtp) => dtp_forward(input, dtp)?,
        None => input.clone(),
    };
    let (global, mask) = tsa_forward(&local, tsa, BnMode::Inference)?;

    super::prepare_run(ctx)?;
    write_row(&ctx.out.join("pca_frames.csv"), &pca_first_component(input)?)?;
    write_row(&ctx.out.join("pca_dtp.csv"), &pca_first_component(&local)?)?;
    write_row(&ctx.out.join("pca_tsa.csv"), &pca_first_component(&global)?)?;
    write_matrix(&ctx.out.join("mask_matrix.csv"), &mask.m_matrix)?;
    write_row(&ctx.out.join("mask_weights.csv"), &mask.m_vector)?;

    println!(
        "traced record {record} (person {}, camera {}, {} frames) into {}",
        rec.person_id,
        rec.camera_id,
        input.cols(),
        ctx.out.display()
    );
    Ok(())
}

fn write_row(path: &Path, values: &[f64]) -> Result<()> {
    let line = values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    std::fs::write(path, line + "\n")?;
    Ok(())
}

fn write_matrix(path: &Path, m: &RealMatrix) -> Result<()> {
    let mut out = String::new();
    for r in 0..m.rows() {
        let line = m
            .row(r)
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
