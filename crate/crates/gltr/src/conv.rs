//! Temporal convolutions over frame-feature sequences.
//!
//! The depthwise dilated convolution is the workhorse: each channel is
//! convolved with its own width-`w` kernel, sampling frames `dilation` steps
//! apart, with zero padding so the output keeps the input length. Channels
//! never mix here; channel mixing is what [`pointwise_conv`] is for.

use crate::error::{GltrError, Result};
use crate::rng::SplitMix64;
use crate::tensor::RealMatrix;

/// How kernel taps are laid over the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TapAlignment {
    /// Offsets -(w-1)/2 ..= +(w-1)/2 around the output frame. This is the
    /// reading consistent with a width-3, dilation-2 kernel covering five
    /// adjacent frames, and the default everywhere.
    #[default]
    Centered,
    /// Literal forward-only offsets r*1 ..= r*w. Kept as a documented
    /// alternative; no other module uses it.
    Forward,
}

/// One 1-D kernel per channel, taps stored as a channels x width matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernel {
    channels: usize,
    width: usize,
    taps: RealMatrix,
}

impl DepthwiseKernel {
    pub fn new(channels: usize, width: usize, taps: RealMatrix) -> Result<Self> {
        if width % 2 == 0 {
            return Err(GltrError::InvalidArgument(format!(
                "kernel width must be odd, got {width}"
            )));
        }
        if taps.rows() != channels || taps.cols() != width {
            return Err(GltrError::DimensionMismatch(format!(
                "taps are {}x{}, expected {channels}x{width}",
                taps.rows(),
                taps.cols()
            )));
        }
        Ok(Self { channels, width, taps })
    }

    /// Identity kernel: center tap 1, all others 0.
    pub fn identity(channels: usize, width: usize) -> Result<Self> {
        let center = width / 2;
        let taps = RealMatrix::from_fn(channels, width, |_, i| if i == center { 1.0 } else { 0.0 });
        Self::new(channels, width, taps)
    }

    /// Taps drawn uniform in [-1/sqrt(width), +1/sqrt(width)].
    pub fn random(channels: usize, width: usize, rng: &mut SplitMix64) -> Result<Self> {
        let bound = 1.0 / (width as f64).sqrt();
        let taps = RealMatrix::from_fn(channels, width, |_, _| rng.uniform(-bound, bound));
        Self::new(channels, width, taps)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &RealMatrix {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut RealMatrix {
        &mut self.taps
    }

    /// Frames within this distance of t can influence output column t
    /// (centered alignment).
    pub fn reach(&self, dilation: usize) -> usize {
        dilation * (self.width - 1) / 2
    }
}

/// Depthwise dilated convolution with zero padding, centered taps.
pub fn depthwise_dilated_conv(
    x: &RealMatrix,
    kernel: &DepthwiseKernel,
    dilation: usize,
) -> Result<RealMatrix> {
    depthwise_dilated_conv_aligned(x, kernel, dilation, TapAlignment::Centered)
}

/// Depthwise dilated convolution with an explicit tap alignment.
pub fn depthwise_dilated_conv_aligned(
    x: &RealMatrix,
    kernel: &DepthwiseKernel,
    dilation: usize,
    alignment: TapAlignment,
) -> Result<RealMatrix> {
    if x.rows() != kernel.channels {
        return Err(GltrError::DimensionMismatch(format!(
            "input has {} channels, kernel has {}",
            x.rows(),
            kernel.channels
        )));
    }
    if dilation < 1 {
        return Err(GltrError::InvalidArgument("dilation must be >= 1".into()));
    }
    if kernel.width % 2 == 0 {
        return Err(GltrError::InvalidArgument("kernel width must be odd".into()));
    }
    let t_len = x.cols() as isize;
    let mut out = RealMatrix::zeros(x.rows(), x.cols());
    for c in 0..x.rows() {
        for t in 0..x.cols() {
            let mut acc = 0.0;
            for i in 0..kernel.width {
                let offset = tap_offset(i, kernel.width, dilation, alignment);
                let s = t as isize + offset;
                if s >= 0 && s < t_len {
                    acc += x.at(c, s as usize) * kernel.taps.at(c, i);
                }
            }
            *out.at_mut(c, t) = acc;
        }
    }
    Ok(out)
}

#[inline]
fn tap_offset(i: usize, width: usize, dilation: usize, alignment: TapAlignment) -> isize {
    match alignment {
        TapAlignment::Centered => dilation as isize * (i as isize - (width as isize - 1) / 2),
        TapAlignment::Forward => dilation as isize * (i as isize + 1),
    }
}

/// Gradients of a centered depthwise dilated convolution.
///
/// Given dL/d(output), returns (dL/d(taps), dL/d(input)).
pub fn depthwise_dilated_conv_backward(
    x: &RealMatrix,
    kernel: &DepthwiseKernel,
    dilation: usize,
    grad_out: &RealMatrix,
) -> Result<(RealMatrix, RealMatrix)> {
    if grad_out.rows() != x.rows() || grad_out.cols() != x.cols() {
        return Err(GltrError::DimensionMismatch(
            "grad_out shape must match input".into(),
        ));
    }
    let t_len = x.cols() as isize;
    let mut grad_taps = RealMatrix::zeros(kernel.channels, kernel.width);
    let mut grad_x = RealMatrix::zeros(x.rows(), x.cols());
    for c in 0..x.rows() {
        for t in 0..x.cols() {
            let g = grad_out.at(c, t);
            for i in 0..kernel.width {
                let offset = tap_offset(i, kernel.width, dilation, TapAlignment::Centered);
                let s = t as isize + offset;
                if s >= 0 && s < t_len {
                    *grad_taps.at_mut(c, i) += g * x.at(c, s as usize);
                    *grad_x.at_mut(c, s as usize) += g * kernel.taps.at(c, i);
                }
            }
        }
    }
    Ok((grad_taps, grad_x))
}

/// Per-column linear map: out[:, t] = weights * x[:, t] + bias.
pub fn pointwise_conv(x: &RealMatrix, weights: &RealMatrix, bias: &[f64]) -> Result<RealMatrix> {
    if weights.cols() != x.rows() {
        return Err(GltrError::DimensionMismatch(format!(
            "weights expect {} input channels, input has {}",
            weights.cols(),
            x.rows()
        )));
    }
    if bias.len() != weights.rows() {
        return Err(GltrError::DimensionMismatch(format!(
            "bias has {} entries, weights have {} output channels",
            bias.len(),
            weights.rows()
        )));
    }
    let mut out = RealMatrix::zeros(weights.rows(), x.cols());
    for r in 0..weights.rows() {
        for t in 0..x.cols() {
            let mut acc = 0.0;
            for k in 0..x.rows() {
                acc += weights.at(r, k) * x.at(k, t);
            }
            *out.at_mut(r, t) = acc + bias[r];
        }
    }
    Ok(out)
}
