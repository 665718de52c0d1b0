use crate::Context;
use anyhow::{bail, Result};
use gltr::gradcheck::grad_check;
use gltr::network::GltrNetwork;
use gltr::rng::SplitMix64;
use gltr::tensor::RealMatrix;

/// Returns whether every parameter group passed.
pub fn run(
    ctx: &Context,
    frames: usize,
    identities: usize,
    step: f64,
    tolerance: f64,
) -> Result<bool> {
    if frames == 0 || identities == 0 {
        bail!("--frames and --identities must be positive");
    }
    if step <= 0.0 || tolerance <= 0.0 {
        bail!("--step and --tolerance must be positive");
    }
    let mut net = GltrNetwork::new(&ctx.cfg.model, identities, ctx.cfg.net_seed())?;
    let mut rng = SplitMix64::fork(ctx.cfg.seed, 4);
    // A freshly built attention block has a zero output projection, which
    // blocks gradient flow into the mask path; randomize it so the check
    // covers the whole graph.
    if let Some(tsa) = &mut net.tsa {
        tsa.out_proj = gltr::linear::Linear::random(
            tsa.out_proj.out_features(),
            tsa.out_proj.in_features(),
            &mut rng,
        );
    }
    let clip = RealMatrix::from_fn(ctx.cfg.model.frame_dim, frames, |_, _| {
        rng.uniform(-1.0, 1.0)
    });
    let label = rng.below(identities);
    let report = grad_check(&net, &clip, label, step, tolerance)?;

    super::prepare_run(ctx)?;
    std::fs::write(
        ctx.out.join("gradcheck.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    for group in &report.groups {
        println!(
            "{} {}: max rel error {:e}",
            if group.pass { "PASS" } else { "FAIL" },
            group.name,
            group.max_rel_error
        );
    }
    println!(
        "gradcheck {}: {} groups, worst {:e} (tolerance {:e})",
        if report.pass() { "passed" } else { "FAILED" },
        report.groups.len(),
        report.max_rel_error(),
        tolerance
    );
    Ok(report.pass())
}
