//! Residual spatio-temporal branch and the pluggable frame-feature provider.
//!
//! Frames are first encoded independently by a small 2D residual stack
//! (stem + two projection-shortcut blocks, three stride-2 halvings in total),
//! then re-assembled into a clip and mixed along time by a grouped `3x1x1`
//! convolution followed by a shape-preserving spatial max pool. The same
//! block structure, with its own weights, serves as the RSTN tail of the
//! wavelet branch.
//!
//! The frame-feature provider stands in for a frozen pretrained image
//! encoder: either a seeded stub encoder with the same downsampling ladder,
//! or features loaded from a TNSR file.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::ops::{conv2d, conv3d_temporal_grouped, dims5, maxpool3d_spatial, relu};
use crate::rng::Rng;
use crate::tensor::{bchw, bcthw, generic, Tensor};

/// Channel widths of the 2D ladder ahead of the configurable `c_f`.
pub const STEM_WIDTH: usize = 8;
pub const MID_WIDTH: usize = 16;
/// Grouped temporal convolution group count.
pub const TEMPORAL_GROUPS: usize = 4;
/// Total spatial downsampling factor of every branch.
pub const SPATIAL_REDUCTION: usize = 8;

/// Common tensor contract all three branches must meet: inputs are
/// `(B, c_in, t, h, w)`, branch outputs are `(B, c_f, t, h/8, w/8)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineShape {
    pub c_in: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c_f: usize,
}

impl PipelineShape {
    /// The pinned desk-scale configuration.
    pub fn desk() -> Self {
        PipelineShape {
            c_in: 1,
            t: 8,
            h: 64,
            w: 64,
            c_f: 16,
        }
    }

    pub fn h_out(&self) -> usize {
        self.h / SPATIAL_REDUCTION
    }

    pub fn w_out(&self) -> usize {
        self.w / SPATIAL_REDUCTION
    }

    pub fn validate(&self) -> Result<()> {
        if self.h % SPATIAL_REDUCTION != 0 || self.w % SPATIAL_REDUCTION != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} must be divisible by {SPATIAL_REDUCTION}",
                self.h, self.w
            )));
        }
        if self.c_f % TEMPORAL_GROUPS != 0 {
            return Err(Error::Shape(format!(
                "c_f {} must be divisible by {TEMPORAL_GROUPS} groups",
                self.c_f
            )));
        }
        if self.c_in == 0 || self.t == 0 || self.h == 0 || self.w == 0 || self.c_f == 0 {
            return Err(Error::Shape("pipeline extents must be >= 1".into()));
        }
        Ok(())
    }

    /// Branch output dims for batch size `b`.
    pub fn branch_dims(&self, b: usize) -> [usize; 5] {
        [b, self.c_f, self.t, self.h_out(), self.w_out()]
    }
}

/// One 2D convolution with its geometry.
#[derive(Debug, Clone)]
pub struct Conv2dParams {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dParams {
    /// Seeded init: weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn seeded(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (c_in * k * k) as f32;
        let bound = 1.0 / fan_in.sqrt();
        let weight =
            Tensor::seeded_uniform(&[c_out, c_in, k, k], &generic(4), -bound, bound, rng)
                .expect("conv weight dims are positive");
        let bias = (0..c_out).map(|_| rng.uniform(-bound, bound)).collect();
        Conv2dParams {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }

    pub fn zero_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }
}

/// Residual block: `relu(conv3x3(x) + shortcut1x1(x))`, both stride 2.
#[derive(Debug, Clone)]
pub struct ResBlockParams {
    pub conv: Conv2dParams,
    pub shortcut: Conv2dParams,
}

impl ResBlockParams {
    pub fn seeded(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        ResBlockParams {
            conv: Conv2dParams::seeded(c_out, c_in, 3, 2, 1, rng),
            shortcut: Conv2dParams::seeded(c_out, c_in, 1, 2, 0, rng),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let main = self.conv.apply(x)?;
        let short = self.shortcut.apply(x)?;
        Ok(main.add(&short)?.map(relu))
    }

    pub fn zero_bias(mut self) -> Self {
        self.conv = self.conv.zero_bias();
        self.shortcut = self.shortcut.zero_bias();
        self
    }
}

/// Per-frame 2D stack: stem conv + two residual blocks, `/8` spatially.
#[derive(Debug, Clone)]
pub struct Res2dParams {
    pub stem: Conv2dParams,
    pub block_a: ResBlockParams,
    pub block_b: ResBlockParams,
}

impl Res2dParams {
    pub fn seeded(c_in: usize, c_f: usize, rng: &mut Rng) -> Self {
        Res2dParams {
            stem: Conv2dParams::seeded(STEM_WIDTH, c_in, 3, 2, 1, rng),
            block_a: ResBlockParams::seeded(STEM_WIDTH, MID_WIDTH, rng),
            block_b: ResBlockParams::seeded(MID_WIDTH, c_f, rng),
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.stem = self.stem.zero_bias();
        self.block_a = self.block_a.zero_bias();
        self.block_b = self.block_b.zero_bias();
        self
    }
}

/// Grouped temporal mixing parameters.
#[derive(Debug, Clone)]
pub struct TemporalParams {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub groups: usize,
}

impl TemporalParams {
    pub fn seeded(c_f: usize, groups: usize, rng: &mut Rng) -> Self {
        let cg = c_f / groups;
        let fan_in = (cg * 3) as f32;
        let bound = 1.0 / fan_in.sqrt();
        let weight = Tensor::seeded_uniform(&[c_f, cg, 3], &generic(3), -bound, bound, rng)
            .expect("temporal weight dims are positive");
        let bias = (0..c_f).map(|_| rng.uniform(-bound, bound)).collect();
        TemporalParams {
            weight,
            bias,
            groups,
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }
}

/// The full residual spatio-temporal parameter set.
#[derive(Debug, Clone)]
pub struct RstnParams {
    pub res2d: Res2dParams,
    pub temporal: TemporalParams,
}

impl RstnParams {
    pub fn seeded(c_in: usize, c_f: usize, rng: &mut Rng) -> Self {
        RstnParams {
            res2d: Res2dParams::seeded(c_in, c_f, rng),
            temporal: TemporalParams::seeded(c_f, TEMPORAL_GROUPS, rng),
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.res2d = self.res2d.zero_bias();
        self.temporal = self.temporal.zero_bias();
        self
    }
}

/// Rearrange `(B, C, T, H, W)` into a per-frame batch `(B*T, C, H, W)`.
pub fn clip_to_frames(clip: &Tensor) -> Result<Tensor> {
    let [b, c, t, h, w] = dims5(clip, "clip_to_frames input")?;
    let x = clip.data();
    let hw = h * w;
    let mut out = vec![0.0f32; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let src = ((bi * c + ci) * t + ti) * hw;
                let dst = ((bi * t + ti) * c + ci) * hw;
                out[dst..dst + hw].copy_from_slice(&x[src..src + hw]);
            }
        }
    }
    Tensor::from_vec(out, &[b * t, c, h, w], &bchw())
}

/// Inverse of [`clip_to_frames`].
pub fn frames_to_clip(frames: &Tensor, b: usize, t: usize) -> Result<Tensor> {
    let d = frames.dims();
    if d.len() != 4 || d[0] != b * t {
        return Err(Error::Shape(format!(
            "frames_to_clip: expected ({b}*{t}, C, H, W), got {:?}",
            d
        )));
    }
    let (c, h, w) = (d[1], d[2], d[3]);
    let x = frames.data();
    let hw = h * w;
    let mut out = vec![0.0f32; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let src = ((bi * t + ti) * c + ci) * hw;
                let dst = ((bi * c + ci) * t + ti) * hw;
                out[dst..dst + hw].copy_from_slice(&x[src..src + hw]);
            }
        }
    }
    Tensor::from_vec(out, &[b, c, t, h, w], &bcthw())
}

/// Per-frame 2D encoding: stem + two residual blocks.
pub fn res2d_forward(frames: &Tensor, params: &Res2dParams) -> Result<Tensor> {
    let d = frames.dims();
    if d.len() != 4 {
        return Err(Error::Shape(format!(
            "res2d_forward: expected rank 4, got {:?}",
            d
        )));
    }
    if d[2] % SPATIAL_REDUCTION != 0 || d[3] % SPATIAL_REDUCTION != 0 {
        return Err(Error::Shape(format!(
            "res2d_forward: spatial {}x{} not divisible by {SPATIAL_REDUCTION}",
            d[2], d[3]
        )));
    }
    let x = params.stem.apply(frames)?.map(relu);
    let x = params.block_a.apply(&x)?;
    params.block_b.apply(&x)
}

/// Temporal mixing: grouped `3x1x1` conv, ReLU, spatial max pool. Shape
/// preserving.
pub fn temporal_forward(clip: &Tensor, params: &TemporalParams) -> Result<Tensor> {
    let x = conv3d_temporal_grouped(clip, &params.weight, &params.bias, params.groups)?
        .map(relu);
    maxpool3d_spatial(&x)
}

/// Full branch: per-frame 2D encoding, then temporal mixing.
pub fn backbone_forward(clip: &Tensor, params: &RstnParams) -> Result<Tensor> {
    let [b, _, t, _, _] = dims5(clip, "backbone_forward input")?;
    let frames = clip_to_frames(clip)?;
    let encoded = res2d_forward(&frames, &params.res2d)?;
    let clip5 = frames_to_clip(&encoded, b, t)?;
    temporal_forward(&clip5, &params.temporal)
}

/// Stub stand-in for a frozen per-frame image encoder: stem + one residual
/// block + linear 1x1 stride-2 projection down to the branch shape.
#[derive(Debug, Clone)]
pub struct StubEncoderParams {
    pub stem: Conv2dParams,
    pub block: ResBlockParams,
    pub proj: Conv2dParams,
}

impl StubEncoderParams {
    pub fn seeded(c_in: usize, c_f: usize, rng: &mut Rng) -> Self {
        StubEncoderParams {
            stem: Conv2dParams::seeded(STEM_WIDTH, c_in, 3, 2, 1, rng),
            block: ResBlockParams::seeded(STEM_WIDTH, MID_WIDTH, rng),
            proj: Conv2dParams::seeded(c_f, MID_WIDTH, 1, 2, 0, rng),
        }
    }
}

/// Where per-frame semantic features come from.
#[derive(Debug, Clone)]
pub enum FrameFeatureProvider {
    /// Seeded convolutional stub run on the clip itself.
    Stub(StubEncoderParams),
    /// Precomputed features stored as one TNSR blob with branch dims.
    File(PathBuf),
}

/// Produce frame features conforming to `shape.branch_dims(B)`.
pub fn provider_encode(
    clip: &Tensor,
    provider: &FrameFeatureProvider,
    shape: &PipelineShape,
) -> Result<Tensor> {
    let [b, _, t, _, _] = dims5(clip, "provider_encode input")?;
    let expected = shape.branch_dims(b);
    match provider {
        FrameFeatureProvider::Stub(p) => {
            let frames = clip_to_frames(clip)?;
            let x = p.stem.apply(&frames)?.map(relu);
            let x = p.block.apply(&x)?;
            let x = p.proj.apply(&x)?;
            let out = frames_to_clip(&x, b, t)?;
            if out.dims() != expected {
                return Err(Error::Shape(format!(
                    "stub encoder produced {:?}, pipeline expects {:?}",
                    out.dims(),
                    expected
                )));
            }
            Ok(out)
        }
        FrameFeatureProvider::File(path) => {
            let t = Tensor::load(path)?;
            if t.dims() != expected {
                return Err(Error::Shape(format!(
                    "embedding file {:?} has dims {:?}, pipeline expects {:?}",
                    path,
                    t.dims(),
                    expected
                )));
            }
            t.with_roles(&bcthw())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn res2d_zero_input_zero_bias_gives_zero() {
        let mut rng = Rng::new(1);
        let params = Res2dParams::seeded(1, 16, &mut rng).zero_bias();
        let x = Tensor::zeros(&[2, 1, 16, 16], &bchw()).unwrap();
        let y = res2d_forward(&x, &params).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn res2d_desk_shape() {
        let mut rng = Rng::new(2);
        let params = Res2dParams::seeded(1, 16, &mut rng);
        let x = Tensor::zeros(&[3, 1, 64, 64], &bchw()).unwrap();
        let y = res2d_forward(&x, &params).unwrap();
        assert_eq!(y.dims(), &[3, 16, 8, 8]);
    }

    #[test]
    fn res2d_rejects_indivisible_input() {
        let mut rng = Rng::new(2);
        let params = Res2dParams::seeded(1, 16, &mut rng);
        let x = Tensor::zeros(&[1, 1, 50, 64], &bchw()).unwrap();
        assert!(res2d_forward(&x, &params).is_err());
    }

    #[test]
    fn res2d_seeded_twice_is_bitwise_identical() {
        let x = Tensor::seeded_uniform(&[1, 1, 16, 16], &bchw(), -1.0, 1.0, &mut Rng::new(5))
            .unwrap();
        let a = res2d_forward(&x, &Res2dParams::seeded(1, 16, &mut Rng::new(7))).unwrap();
        let b = res2d_forward(&x, &Res2dParams::seeded(1, 16, &mut Rng::new(7))).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn residual_block_with_zero_conv_equals_relu_shortcut() {
        let mut rng = Rng::new(9);
        let mut block = ResBlockParams::seeded(4, 8, &mut rng).zero_bias();
        block.conv.weight = Tensor::zeros(block.conv.weight.dims(), &generic(4)).unwrap();
        let x = Tensor::seeded_uniform(&[1, 4, 8, 8], &bchw(), -1.0, 1.0, &mut rng).unwrap();
        let via_block = block.apply(&x).unwrap();
        let direct = block.shortcut.apply(&x).unwrap().map(relu);
        assert!(via_block.bitwise_eq(&direct));
    }

    #[test]
    fn temporal_t1_ignores_edge_taps() {
        let mut rng = Rng::new(11);
        let full = TemporalParams::seeded(8, TEMPORAL_GROUPS, &mut rng);
        // Zero the two edge taps; at T=1 they only ever see padding.
        let mut center_only = full.clone();
        {
            let w = center_only.weight.data_mut();
            for i in 0..w.len() {
                if i % 3 != 1 {
                    w[i] = 0.0;
                }
            }
        }
        let x = Tensor::seeded_uniform(&[2, 8, 1, 3, 3], &bcthw(), -1.0, 1.0, &mut rng).unwrap();
        let a = temporal_forward(&x, &full).unwrap();
        let b = temporal_forward(&x, &center_only).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn temporal_preserves_shape() {
        let mut rng = Rng::new(12);
        let params = TemporalParams::seeded(16, TEMPORAL_GROUPS, &mut rng);
        let x = Tensor::zeros(&[2, 16, 8, 8, 8], &bcthw()).unwrap();
        let y = temporal_forward(&x, &params).unwrap();
        assert_eq!(y.dims(), x.dims());
    }

    #[test]
    fn backbone_desk_shape_and_zero_prop() {
        let mut rng = Rng::new(13);
        let params = RstnParams::seeded(1, 16, &mut rng).zero_bias();
        let x = Tensor::zeros(&[2, 1, 8, 64, 64], &bcthw()).unwrap();
        let y = backbone_forward(&x, &params).unwrap();
        assert_eq!(y.dims(), &[2, 16, 8, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backbone_is_batch_equivariant() {
        let mut rng = Rng::new(14);
        let params = RstnParams::seeded(1, 16, &mut rng);
        let a = Tensor::seeded_uniform(&[1, 1, 4, 16, 16], &bcthw(), -1.0, 1.0, &mut rng)
            .unwrap();
        let b = Tensor::seeded_uniform(&[1, 1, 4, 16, 16], &bcthw(), -1.0, 1.0, &mut rng)
            .unwrap();
        let ab = crate::ops::concat(&[&a, &b], 0).unwrap();
        let ba = crate::ops::concat(&[&b, &a], 0).unwrap();
        let y_ab = backbone_forward(&ab, &params).unwrap();
        let y_ba = backbone_forward(&ba, &params).unwrap();
        let swapped = crate::ops::concat(
            &[
                &crate::ops::split(&y_ba, 0, 2).unwrap()[1],
                &crate::ops::split(&y_ba, 0, 2).unwrap()[0],
            ],
            0,
        )
        .unwrap();
        assert!(y_ab.bitwise_eq(&swapped));
    }

    #[test]
    fn clip_frame_rearrangement_round_trips() {
        let mut rng = Rng::new(15);
        let clip =
            Tensor::seeded_uniform(&[2, 3, 4, 5, 6], &bcthw(), -1.0, 1.0, &mut rng).unwrap();
        let frames = clip_to_frames(&clip).unwrap();
        assert_eq!(frames.dims(), &[8, 3, 5, 6]);
        let back = frames_to_clip(&frames, 2, 4).unwrap();
        assert!(back.bitwise_eq(&clip));
    }

    #[test]
    fn stub_provider_is_deterministic_and_conforming() {
        let shape = PipelineShape::desk();
        let clip = Tensor::seeded_uniform(&[2, 1, 8, 64, 64], &bcthw(), 0.0, 1.0, &mut Rng::new(3))
            .unwrap();
        let p1 = FrameFeatureProvider::Stub(StubEncoderParams::seeded(1, 16, &mut Rng::new(21)));
        let p2 = FrameFeatureProvider::Stub(StubEncoderParams::seeded(1, 16, &mut Rng::new(21)));
        let a = provider_encode(&clip, &p1, &shape).unwrap();
        let b = provider_encode(&clip, &p2, &shape).unwrap();
        assert!(a.bitwise_eq(&b));
        assert_eq!(a.dims(), shape.branch_dims(2));
    }

    #[test]
    fn file_provider_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let shape = PipelineShape::desk();
        let clip = Tensor::zeros(&[1, 1, 8, 64, 64], &bcthw()).unwrap();

        let good = Tensor::seeded_uniform(
            &shape.branch_dims(1),
            &bcthw(),
            -1.0,
            1.0,
            &mut Rng::new(4),
        )
        .unwrap();
        let path = dir.path().join("emb.tnsr");
        good.save(&path).unwrap();
        let loaded =
            provider_encode(&clip, &FrameFeatureProvider::File(path.clone()), &shape).unwrap();
        assert!(loaded.bitwise_eq(&good));

        // Wrong T.
        let bad = Tensor::zeros(&[1, 16, 4, 8, 8], &bcthw()).unwrap();
        let bad_path = dir.path().join("bad.tnsr");
        bad.save(&bad_path).unwrap();
        assert!(provider_encode(&clip, &FrameFeatureProvider::File(bad_path), &shape).is_err());

        // Missing file.
        let missing = dir.path().join("missing.tnsr");
        assert!(provider_encode(&clip, &FrameFeatureProvider::File(missing), &shape).is_err());
    }
}
