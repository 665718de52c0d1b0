//! Binary network checkpoints.
//!
//! Layout (little-endian):
//!   magic "GLTR" | version u32 = 1 | d u32 | n u32 | w u32 | alpha u32 |
//!   num_identities u32 | parameter groups in declaration order, each an
//!   element count u32 followed by that many f64 values, row-major.
//!
//! Ablation variants are encoded with n = 0 (no pyramid; w is written as 0)
//! and alpha = 0 (no attention block); both values are invalid for a present
//! component, so the encoding is unambiguous. Group order: pyramid taps per
//! branch; then, when the attention block exists, proj_b, proj_c, proj_f
//! (weights then bias each), bn_b and bn_c (gamma, beta, running_mean,
//! running_var), out_proj (weights, bias); finally classifier weights and
//! bias. Round-trips are bit-exact.
//!
//! Batch-norm eps/momentum and the mask-normalization flag are experiment
//! configuration, not learned state; supply them via [`LoadOptions`].

use crate::batchnorm::BatchNormState;
use crate::conv::DepthwiseKernel;
use crate::dtp::DtpLayer;
use crate::error::{GltrError, Result};
use crate::linear::Linear;
use crate::network::GltrNetwork;
use crate::tensor::RealMatrix;
use crate::tsa::TsaLayer;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GLTR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Config-level knobs a checkpoint does not carry.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub mask_normalization: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { mask_normalization: true, bn_eps: 1e-5, bn_momentum: 0.1 }
    }
}

pub fn write_checkpoint(path: &Path, net: &GltrNetwork) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CHECKPOINT_MAGIC)?;
    for header in [
        CHECKPOINT_VERSION,
        net.frame_dim() as u32,
        net.num_branches() as u32,
        net.dtp.as_ref().map_or(0, |d| d.width()) as u32,
        net.tsa.as_ref().map_or(0, |t| t.alpha()) as u32,
        net.num_identities() as u32,
    ] {
        w.write_all(&header.to_le_bytes())?;
    }
    if let Some(dtp) = &net.dtp {
        for kernel in dtp.branches() {
            write_group(&mut w, kernel.taps().data())?;
        }
    }
    if let Some(tsa) = &net.tsa {
        write_linear(&mut w, &tsa.proj_b)?;
        write_linear(&mut w, &tsa.proj_c)?;
        write_linear(&mut w, &tsa.proj_f)?;
        write_bn(&mut w, &tsa.bn_b)?;
        write_bn(&mut w, &tsa.bn_c)?;
        write_linear(&mut w, &tsa.out_proj)?;
    }
    write_linear(&mut w, &net.classifier)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path, options: &LoadOptions) -> Result<GltrNetwork> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| GltrError::Truncated("checkpoint magic".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(GltrError::BadMagic { expected: CHECKPOINT_MAGIC });
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(GltrError::UnsupportedVersion(version));
    }
    let d = read_u32(&mut r, "frame_dim")? as usize;
    let n = read_u32(&mut r, "num_branches")? as usize;
    let w = read_u32(&mut r, "kernel_width")? as usize;
    let alpha = read_u32(&mut r, "alpha")? as usize;
    let num_identities = read_u32(&mut r, "num_identities")? as usize;
    if d == 0 || num_identities == 0 {
        return Err(GltrError::InvalidArgument(
            "checkpoint header has zero frame_dim or identity count".into(),
        ));
    }

    let dtp = if n > 0 {
        if w == 0 || w % 2 == 0 {
            return Err(GltrError::InvalidArgument(format!(
                "checkpoint kernel width {w} is not a positive odd number"
            )));
        }
        let mut kernels = Vec::with_capacity(n);
        for _ in 0..n {
            let taps = read_group(&mut r, d * w, "pyramid taps")?;
            kernels.push(DepthwiseKernel::new(d, w, RealMatrix::from_vec(d, w, taps))?);
        }
        Some(DtpLayer::from_kernels(d, kernels)?)
    } else {
        None
    };

    let emb = d * n.max(1);
    let tsa = if alpha > 0 {
        if emb % alpha != 0 {
            return Err(GltrError::InvalidArgument(
                "checkpoint alpha does not divide the embedding width".into(),
            ));
        }
        let hidden = emb / alpha;
        let proj_b = read_linear(&mut r, hidden, emb)?;
        let proj_c = read_linear(&mut r, hidden, emb)?;
        let proj_f = read_linear(&mut r, hidden, emb)?;
        let bn_b = read_bn(&mut r, hidden, options)?;
        let bn_c = read_bn(&mut r, hidden, options)?;
        let out_proj = read_linear(&mut r, emb, hidden)?;
        Some(TsaLayer::from_parts(
            proj_b,
            proj_c,
            proj_f,
            bn_b,
            bn_c,
            out_proj,
            alpha,
            options.mask_normalization,
        )?)
    } else {
        None
    };

    let classifier = read_linear(&mut r, num_identities, emb)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(GltrError::InvalidArgument(
            "checkpoint has trailing bytes after the last parameter group".into(),
        ));
    }
    GltrNetwork::from_parts(dtp, tsa, classifier, d)
}

fn write_group(w: &mut impl Write, data: &[f64]) -> Result<()> {
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_linear(w: &mut impl Write, layer: &Linear) -> Result<()> {
    write_group(w, layer.weights.data())?;
    write_group(w, &layer.bias)
}

fn write_bn(w: &mut impl Write, state: &BatchNormState) -> Result<()> {
    write_group(w, &state.gamma)?;
    write_group(w, &state.beta)?;
    write_group(w, &state.running_mean)?;
    write_group(w, &state.running_var)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| GltrError::Truncated(what.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_group(r: &mut impl Read, expected: usize, what: &str) -> Result<Vec<f64>> {
    let count = read_u32(r, what)? as usize;
    if count != expected {
        return Err(GltrError::DimensionMismatch(format!(
            "{what}: checkpoint group holds {count} values, expected {expected}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| GltrError::Truncated(what.to_string()))?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_linear(r: &mut impl Read, out_features: usize, in_features: usize) -> Result<Linear> {
    let weights = read_group(r, out_features * in_features, "linear weights")?;
    let bias = read_group(r, out_features, "linear bias")?;
    Ok(Linear {
        weights: RealMatrix::from_vec(out_features, in_features, weights),
        bias,
    })
}

fn read_bn(r: &mut impl Read, channels: usize, options: &LoadOptions) -> Result<BatchNormState> {
    let mut state = BatchNormState::new(channels, options.bn_eps, options.bn_momentum);
    state.gamma = read_group(r, channels, "bn gamma")?;
    state.beta = read_group(r, channels, "bn beta")?;
    state.running_mean = read_group(r, channels, "bn running_mean")?;
    state.running_var = read_group(r, channels, "bn running_var")?;
    Ok(state)
}
