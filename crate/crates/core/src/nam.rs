//! Normalization-based attention over `(B, C, T, H, W)` feature maps.
//!
//! Two gates in sequence, both realized as sigmoids over normalized features:
//!
//! 1. global: `F_bn = sigmoid(BN(F)) * F`, where BN normalizes each channel
//!    over the joint `(B, T, H, W)` population so batch and temporal context
//!    mix into the statistic;
//! 2. local: `F2 = sigmoid(pixel_norm(F_bn)) * F_bn`, where `pixel_norm`
//!    divides each position's channel vector by its RMS.
//!
//! Both gates lie strictly in `(0, 1)`, so the module is shape-preserving and
//! contracts magnitudes without flipping signs.

use crate::error::{Error, Result};
use crate::ops::{dims5, sigmoid};
use crate::tensor::Tensor;

/// Per-channel batch-norm parameters.
#[derive(Debug, Clone)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

pub const DEFAULT_BN_EPS: f32 = 1e-5;

impl BnParams {
    /// Identity configuration: gamma=1, beta=0, mean=0, var=1.
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: DEFAULT_BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, input_channels: usize) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::Shape("batch norm parameter lengths disagree".into()));
        }
        if c != input_channels {
            return Err(Error::Shape(format!(
                "batch norm over {c} channels applied to {input_channels}-channel input"
            )));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidArgument("bn epsilon must be > 0".into()));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("bn variance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Statistics source for [`batch_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the stored running statistics.
    Inference,
    /// Compute per-channel mean and (population) variance over `(B, T, H, W)`
    /// of the input itself.
    BatchStats,
}

/// Pixel-wise RMS normalization settings.
#[derive(Debug, Clone, Copy)]
pub struct NamConfig {
    pub channels: usize,
    pub eps: f32,
}

pub const DEFAULT_PIXEL_EPS: f32 = 1e-5;

impl NamConfig {
    pub fn new(channels: usize) -> Self {
        NamConfig {
            channels,
            eps: DEFAULT_PIXEL_EPS,
        }
    }
}

/// Channel-wise batch normalization of a `(B, C, T, H, W)` tensor.
pub fn batch_norm(input: &Tensor, params: &BnParams, mode: BnMode) -> Result<Tensor> {
    let [b, c, t, h, w] = dims5(input, "batch_norm input")?;
    params.validate(c)?;

    let (mean, var) = match mode {
        BnMode::Inference => (params.running_mean.clone(), params.running_var.clone()),
        BnMode::BatchStats => channel_stats(input, b, c, t * h * w),
    };

    let x = input.data();
    let spatial = t * h * w;
    let mut out = vec![0.0f32; x.len()];
    for ci in 0..c {
        let inv = 1.0 / ((var[ci] as f64) + params.eps as f64).sqrt();
        let g = params.gamma[ci] as f64;
        let be = params.beta[ci] as f64;
        let m = mean[ci] as f64;
        for bi in 0..b {
            let base = (bi * c + ci) * spatial;
            for s in 0..spatial {
                out[base + s] = (((x[base + s] as f64) - m) * inv * g + be) as f32;
            }
        }
    }
    Tensor::from_vec(out, input.dims(), input.roles())
}

fn channel_stats(input: &Tensor, b: usize, c: usize, spatial: usize) -> (Vec<f32>, Vec<f32>) {
    let x = input.data();
    let count = (b * spatial) as f64;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ci in 0..c {
        let mut sum = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * spatial;
            sum += x[base..base + spatial].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * spatial;
            sq += x[base..base + spatial]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ci] = m as f32;
        var[ci] = (sq / count) as f32;
    }
    (mean, var)
}

/// Global attention gate: `sigmoid(BN(F)) * F`, element-wise.
pub fn nam_global(input: &Tensor, params: &BnParams, mode: BnMode) -> Result<Tensor> {
    let normalized = batch_norm(input, params, mode)?;
    normalized.map(sigmoid).mul(input)
}

/// Divide each position's channel vector by `sqrt(mean_c(x^2) + eps)`.
pub fn pixel_norm(input: &Tensor, cfg: &NamConfig) -> Result<Tensor> {
    let [b, c, t, h, w] = dims5(input, "pixel_norm input")?;
    if c != cfg.channels {
        return Err(Error::Shape(format!(
            "pixel_norm configured for {} channels, input has {c}",
            cfg.channels
        )));
    }
    if cfg.eps <= 0.0 {
        return Err(Error::InvalidArgument("pixel-norm epsilon must be > 0".into()));
    }
    let x = input.data();
    let spatial = t * h * w;
    let mut out = vec![0.0f32; x.len()];
    for bi in 0..b {
        for s in 0..spatial {
            let mut sq = 0.0f64;
            for ci in 0..c {
                let v = x[(bi * c + ci) * spatial + s] as f64;
                sq += v * v;
            }
            let denom = (sq / c as f64 + cfg.eps as f64).sqrt();
            for ci in 0..c {
                let idx = (bi * c + ci) * spatial + s;
                out[idx] = ((x[idx] as f64) / denom) as f32;
            }
        }
    }
    Tensor::from_vec(out, input.dims(), input.roles())
}

/// Full attention path: global gate, then pixel-level gate.
pub fn nam_forward(
    frame_features: &Tensor,
    params: &BnParams,
    cfg: &NamConfig,
    mode: BnMode,
) -> Result<Tensor> {
    let gated = nam_global(frame_features, params, mode)?;
    let local_gate = pixel_norm(&gated, cfg)?.map(sigmoid);
    local_gate.mul(&gated)
}
