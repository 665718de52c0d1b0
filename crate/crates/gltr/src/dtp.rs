//! Dilated temporal pyramid: N parallel depthwise convolutions whose dilation
//! rates double per branch (1, 2, 4, ...), outputs concatenated channel-wise.
//! A d x T input becomes an (N*d) x T output; rows [(n-1)*d, n*d) belong to
//! branch n.

use crate::conv::{depthwise_dilated_conv, depthwise_dilated_conv_backward, DepthwiseKernel};
use crate::error::{GltrError, Result};
use crate::rng::SplitMix64;
use crate::tensor::RealMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DtpLayer {
    branches: Vec<DepthwiseKernel>,
    dilations: Vec<usize>,
    input_channels: usize,
}

impl DtpLayer {
    /// `num_branches` kernels of shared odd `width`, dilation 2^(n-1) for
    /// branch n, taps drawn uniform in [-1/sqrt(width), +1/sqrt(width)].
    pub fn random(
        input_channels: usize,
        num_branches: usize,
        width: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        Self::build(input_channels, num_branches, width, |_, _| {
            DepthwiseKernel::random(input_channels, width, rng)
        })
    }

    /// Every branch gets the identity kernel; the output is the input stacked
    /// N times. Useful as a fixture.
    pub fn identity(input_channels: usize, num_branches: usize, width: usize) -> Result<Self> {
        Self::build(input_channels, num_branches, width, |_, _| {
            DepthwiseKernel::identity(input_channels, width)
        })
    }

    pub fn from_kernels(input_channels: usize, kernels: Vec<DepthwiseKernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(GltrError::EmptyInput("pyramid with zero branches".into()));
        }
        let width = kernels[0].width();
        for k in &kernels {
            if k.channels() != input_channels {
                return Err(GltrError::DimensionMismatch(
                    "branch kernel channel count differs from input_channels".into(),
                ));
            }
            if k.width() != width {
                return Err(GltrError::InvalidArgument(
                    "all branch kernels must share one width".into(),
                ));
            }
        }
        let dilations = (0..kernels.len()).map(|n| 1usize << n).collect();
        Ok(Self { branches: kernels, dilations, input_channels })
    }

    fn build(
        input_channels: usize,
        num_branches: usize,
        width: usize,
        mut make: impl FnMut(usize, usize) -> Result<DepthwiseKernel>,
    ) -> Result<Self> {
        if num_branches == 0 {
            return Err(GltrError::InvalidArgument(
                "pyramid needs at least one branch".into(),
            ));
        }
        let kernels = (0..num_branches)
            .map(|n| make(n, width))
            .collect::<Result<Vec<_>>>()?;
        Self::from_kernels(input_channels, kernels)
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn output_channels(&self) -> usize {
        self.branches.len() * self.input_channels
    }

    pub fn width(&self) -> usize {
        self.branches[0].width()
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    pub fn branches(&self) -> &[DepthwiseKernel] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [DepthwiseKernel] {
        &mut self.branches
    }

    /// Widest receptive-field radius over all branches: 2^(N-1) * (w-1)/2.
    pub fn max_reach(&self) -> usize {
        self.branches
            .iter()
            .zip(&self.dilations)
            .map(|(k, &r)| k.reach(r))
            .max()
            .unwrap_or(0)
    }
}

/// Run every branch and stack the outputs channel-wise.
pub fn dtp_forward(f: &RealMatrix, layer: &DtpLayer) -> Result<RealMatrix> {
    if f.rows() != layer.input_channels {
        return Err(GltrError::DimensionMismatch(format!(
            "input has {} channels, pyramid expects {}",
            f.rows(),
            layer.input_channels
        )));
    }
    let outs = layer
        .branches
        .iter()
        .zip(&layer.dilations)
        .map(|(k, &r)| depthwise_dilated_conv(f, k, r))
        .collect::<Result<Vec<_>>>()?;
    RealMatrix::vstack(&outs.iter().collect::<Vec<_>>())
}

/// Gradients of [`dtp_forward`]: per-branch tap gradients plus the input
/// gradient (sum of all branch contributions).
pub fn dtp_backward(
    f: &RealMatrix,
    layer: &DtpLayer,
    grad_out: &RealMatrix,
) -> Result<(Vec<RealMatrix>, RealMatrix)> {
    let d = layer.input_channels;
    if grad_out.rows() != layer.output_channels() || grad_out.cols() != f.cols() {
        return Err(GltrError::DimensionMismatch(
            "grad_out shape must be (N*d) x T".into(),
        ));
    }
    let mut tap_grads = Vec::with_capacity(layer.num_branches());
    let mut grad_f = RealMatrix::zeros(f.rows(), f.cols());
    for (n, (k, &r)) in layer.branches.iter().zip(&layer.dilations).enumerate() {
        let slice = RealMatrix::from_fn(d, f.cols(), |c, t| grad_out.at(n * d + c, t));
        let (g_taps, g_x) = depthwise_dilated_conv_backward(f, k, r, &slice)?;
        tap_grads.push(g_taps);
        grad_f = grad_f.add_scaled(&g_x, 1.0)?;
    }
    Ok((tap_grads, grad_f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_schedule_doubles() {
        let mut rng = SplitMix64::new(1);
        let layer = DtpLayer::random(4, 3, 3, &mut rng).unwrap();
        assert_eq!(layer.dilations(), &[1, 2, 4]);
        assert_eq!(layer.output_channels(), 12);
        assert_eq!(layer.max_reach(), 4);
    }

    #[test]
    fn single_branch_equals_plain_convolution() {
        let mut rng = SplitMix64::new(2);
        let layer = DtpLayer::random(4, 1, 3, &mut rng).unwrap();
        let f = RealMatrix::from_fn(4, 10, |_, _| rng.uniform(-1.0, 1.0));
        let pyramid = dtp_forward(&f, &layer).unwrap();
        let plain = depthwise_dilated_conv(&f, &layer.branches()[0], 1).unwrap();
        assert_eq!(pyramid, plain);
    }

    #[test]
    fn identity_kernels_stack_the_input() {
        let layer = DtpLayer::identity(3, 4, 3).unwrap();
        let mut rng = SplitMix64::new(3);
        let f = RealMatrix::from_fn(3, 6, |_, _| rng.uniform(-1.0, 1.0));
        let out = dtp_forward(&f, &layer).unwrap();
        assert_eq!(out.rows(), 12);
        for n in 0..4 {
            for c in 0..3 {
                for t in 0..6 {
                    assert_eq!(out.at(n * 3 + c, t), f.at(c, t));
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let layer = DtpLayer::identity(3, 2, 3).unwrap();
        let f = RealMatrix::zeros(4, 6);
        assert!(dtp_forward(&f, &layer).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_on_taps() {
        let mut rng = SplitMix64::new(4);
        let layer = DtpLayer::random(2, 2, 3, &mut rng).unwrap();
        let f = RealMatrix::from_fn(2, 8, |_, _| rng.uniform(-1.0, 1.0));
        let out = dtp_forward(&f, &layer).unwrap();
        let grad_out = out.map(|v| 2.0 * v); // loss = sum of squares
        let (tap_grads, grad_f) = dtp_backward(&f, &layer, &grad_out).unwrap();

        let loss = |f: &RealMatrix, layer: &DtpLayer| {
            dtp_forward(f, layer).unwrap().data().iter().map(|v| v * v).sum::<f64>()
        };
        let h = 1e-6;
        for n in 0..2 {
            for c in 0..2 {
                for i in 0..3 {
                    let mut lp = layer.clone();
                    *lp.branches_mut()[n].taps_mut().at_mut(c, i) += h;
                    let mut lm = layer.clone();
                    *lm.branches_mut()[n].taps_mut().at_mut(c, i) -= h;
                    let num = (loss(&f, &lp) - loss(&f, &lm)) / (2.0 * h);
                    assert!((num - tap_grads[n].at(c, i)).abs() < 1e-5);
                }
            }
        }
        for c in 0..2 {
            for t in 0..8 {
                let mut fp = f.clone();
                *fp.at_mut(c, t) += h;
                let mut fm = f.clone();
                *fm.at_mut(c, t) -= h;
                let num = (loss(&fp, &layer) - loss(&fm, &layer)) / (2.0 * h);
                assert!((num - grad_f.at(c, t)).abs() < 1e-5);
            }
        }
    }
}
