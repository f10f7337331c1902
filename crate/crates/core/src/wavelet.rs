//! Haar wavelet frequency path.
//!
//! A single decomposition level correlates each channel with the four
//! orthonormal 2x2 Haar kernels at stride 2, splitting an image into a
//! low-frequency approximation (LL) and horizontal/vertical/diagonal detail
//! bands (LH, HL, HH), each at half resolution. The bank is orthonormal, so
//! reconstruction is its exact transpose and energy is conserved.
//!
//! The branch decomposes each frame `M` levels deep (always recursing on LL),
//! passes every level's stacked detail bands through one lightweight linear
//! 3x3 convolution, reassembles the processed bands with the running LL
//! estimate, and inverse-transforms back up to full resolution. With
//! identity-initialized detail convolutions the whole path is a perfect
//! reconstruction. The reconstructed frames are then encoded by an RSTN with
//! this branch's own weights.

use crate::backbone::{backbone_forward, Conv2dParams, RstnParams, SPATIAL_REDUCTION};
use crate::error::{Error, Result};
use crate::ops::{concat, dims5, split};
use crate::rng::Rng;
use crate::tensor::{chw, generic, Tensor};

/// The four fixed 2x2 analysis kernels, entries +-1/2.
#[derive(Debug, Clone, Copy)]
pub struct HaarFilters;

impl HaarFilters {
    pub const LL: [[f32; 2]; 2] = [[0.5, 0.5], [0.5, 0.5]];
    pub const LH: [[f32; 2]; 2] = [[0.5, -0.5], [0.5, -0.5]];
    pub const HL: [[f32; 2]; 2] = [[0.5, 0.5], [-0.5, -0.5]];
    pub const HH: [[f32; 2]; 2] = [[0.5, -0.5], [-0.5, 0.5]];

    pub fn all() -> [(&'static str, [[f32; 2]; 2]); 4] {
        [
            ("LL", Self::LL),
            ("LH", Self::LH),
            ("HL", Self::HL),
            ("HH", Self::HH),
        ]
    }
}

/// Detail bands of one decomposition level, each `(C, H/2^i, W/2^i)`.
#[derive(Debug, Clone)]
pub struct DetailBands {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Multi-level decomposition: `levels[0]` is the finest scale, `top_ll` is
/// the approximation retained at the deepest level.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    pub levels: Vec<DetailBands>,
    pub top_ll: Tensor,
}

impl WaveletPyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    let d = t.dims();
    if d.len() != 3 {
        return Err(Error::Shape(format!("{what}: expected (C, H, W), got {:?}", d)));
    }
    Ok([d[0], d[1], d[2]])
}

/// One analysis level: `(C, H, W)` with even `H`, `W` into four
/// `(C, H/2, W/2)` bands.
pub fn haar_decompose(x: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let [c, h, w] = dims3(x, "haar_decompose input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "haar_decompose: spatial extents must be even, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let data = x.data();
    let n = c * ho * wo;
    let (mut ll, mut lh, mut hl, mut hh) =
        (vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]);
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let base = ci * h * w + 2 * oy * w + 2 * ox;
                let a = data[base] as f64;
                let b = data[base + 1] as f64;
                let cc = data[base + w] as f64;
                let d = data[base + w + 1] as f64;
                let o = (ci * ho + oy) * wo + ox;
                ll[o] = (0.5 * (a + b + cc + d)) as f32;
                lh[o] = (0.5 * (a - b + cc - d)) as f32;
                hl[o] = (0.5 * (a + b - cc - d)) as f32;
                hh[o] = (0.5 * (a - b - cc + d)) as f32;
            }
        }
    }
    let dims = [c, ho, wo];
    Ok((
        Tensor::from_vec(ll, &dims, &chw())?,
        Tensor::from_vec(lh, &dims, &chw())?,
        Tensor::from_vec(hl, &dims, &chw())?,
        Tensor::from_vec(hh, &dims, &chw())?,
    ))
}

/// Exact inverse of [`haar_decompose`]: the transpose of the orthonormal
/// analysis bank, realized as a stride-2 transposed convolution.
pub fn haar_reconstruct(
    ll: &Tensor,
    lh: &Tensor,
    hl: &Tensor,
    hh: &Tensor,
) -> Result<Tensor> {
    let [c, ho, wo] = dims3(ll, "haar_reconstruct LL band")?;
    for (name, band) in [("LH", lh), ("HL", hl), ("HH", hh)] {
        if band.dims() != ll.dims() {
            return Err(Error::Shape(format!(
                "haar_reconstruct: {name} dims {:?} != LL dims {:?}",
                band.dims(),
                ll.dims()
            )));
        }
    }
    let (h, w) = (ho * 2, wo * 2);
    let mut out = vec![0.0f32; c * h * w];
    let (dll, dlh, dhl, dhh) = (ll.data(), lh.data(), hl.data(), hh.data());
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = (ci * ho + oy) * wo + ox;
                let (l, x, y, z) = (
                    dll[o] as f64,
                    dlh[o] as f64,
                    dhl[o] as f64,
                    dhh[o] as f64,
                );
                let base = ci * h * w + 2 * oy * w + 2 * ox;
                out[base] = (0.5 * (l + x + y + z)) as f32;
                out[base + 1] = (0.5 * (l - x + y - z)) as f32;
                out[base + w] = (0.5 * (l + x - y - z)) as f32;
                out[base + w + 1] = (0.5 * (l - x - y + z)) as f32;
            }
        }
    }
    Tensor::from_vec(out, &[c, h, w], &chw())
}

/// Recursively decompose the LL band `m` times. `m = 0` yields an empty
/// pyramid whose `top_ll` is the input itself.
pub fn multilevel_decompose(x: &Tensor, m: usize) -> Result<WaveletPyramid> {
    let [_, h, w] = dims3(x, "multilevel_decompose input")?;
    let factor = 1usize << m;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "multilevel_decompose: {h}x{w} not divisible by 2^{m}"
        )));
    }
    let mut levels = Vec::with_capacity(m);
    let mut current = x.clone();
    for _ in 0..m {
        let (ll, lh, hl, hh) = haar_decompose(&current)?;
        levels.push(DetailBands { lh, hl, hh });
        current = ll;
    }
    Ok(WaveletPyramid {
        levels,
        top_ll: current,
    })
}

/// One level's high-frequency convolution: 3x3, same padding, linear, over
/// the channel-stacked `(LH, HL, HH)` bands.
#[derive(Debug, Clone)]
pub struct HfConvParams {
    pub conv: Conv2dParams,
}

impl HfConvParams {
    pub fn seeded(band_channels: usize, rng: &mut Rng) -> Self {
        HfConvParams {
            conv: Conv2dParams::seeded(3 * band_channels, 3 * band_channels, 3, 1, 1, rng),
        }
    }

    /// Center-tap identity with zero bias: output equals input bands.
    pub fn identity(band_channels: usize) -> Self {
        let c = 3 * band_channels;
        let mut weight = Tensor::zeros(&[c, c, 3, 3], &generic(4)).expect("positive dims");
        for ch in 0..c {
            weight.data_mut()[((ch * c + ch) * 3 + 1) * 3 + 1] = 1.0;
        }
        HfConvParams {
            conv: Conv2dParams {
                weight,
                bias: vec![0.0; c],
                stride: 1,
                pad: 1,
            },
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.conv = self.conv.zero_bias();
        self
    }
}

/// Convolve one level's detail bands jointly: stack as `(3C, h, w)` in the
/// order LH, HL, HH, apply the 3x3 conv, split back into three bands.
pub fn hf_conv(
    bands: &DetailBands,
    params: &HfConvParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [c, h, w] = dims3(&bands.lh, "hf_conv LH band")?;
    let stacked = concat(&[&bands.lh, &bands.hl, &bands.hh], 0)?;
    let batched = stacked.reshape(&[1, 3 * c, h, w], &crate::tensor::bchw())?;
    let out = params.conv.apply(&batched)?;
    let out3 = out.reshape(&[3 * c, h, w], &chw())?;
    let mut parts = split(&out3, 0, 3)?;
    let hh = parts.pop().expect("three parts");
    let hl = parts.pop().expect("three parts");
    let lh = parts.pop().expect("three parts");
    Ok((lh, hl, hh))
}

/// Frequency-branch parameters: one hf conv per level plus the RSTN tail.
#[derive(Debug, Clone)]
pub struct WtcrParams {
    pub levels: usize,
    pub hf: Vec<HfConvParams>,
    pub rstn: RstnParams,
}

/// Desk-scale default decomposition depth.
pub const DEFAULT_LEVELS: usize = 2;

impl WtcrParams {
    pub fn seeded(c_in: usize, c_f: usize, levels: usize, rng: &mut Rng) -> Self {
        WtcrParams {
            levels,
            hf: (0..levels).map(|_| HfConvParams::seeded(c_in, rng)).collect(),
            rstn: RstnParams::seeded(c_in, c_f, rng),
        }
    }

    /// Identity detail convolutions (perfect-reconstruction mode) with a
    /// seeded RSTN.
    pub fn identity_hf(c_in: usize, c_f: usize, levels: usize, rng: &mut Rng) -> Self {
        WtcrParams {
            levels,
            hf: (0..levels).map(|_| HfConvParams::identity(c_in)).collect(),
            rstn: RstnParams::seeded(c_in, c_f, rng),
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.hf = self.hf.into_iter().map(HfConvParams::zero_bias).collect();
        self.rstn = self.rstn.zero_bias();
        self
    }
}

/// Collapse a pyramid back to full resolution, passing each level's detail
/// bands through its hf conv before the inverse transform.
pub fn wtcr_reconstruct(pyramid: &WaveletPyramid, params: &WtcrParams) -> Result<Tensor> {
    if pyramid.depth() != params.levels {
        return Err(Error::Precondition(format!(
            "pyramid depth {} != configured levels {}",
            pyramid.depth(),
            params.levels
        )));
    }
    let mut current = pyramid.top_ll.clone();
    for (bands, hf) in pyramid.levels.iter().zip(&params.hf).rev() {
        let (lh, hl, hh) = hf_conv(bands, hf)?;
        current = haar_reconstruct(&current, &lh, &hl, &hh)?;
    }
    Ok(current)
}

fn extract_frame(clip: &Tensor, b: usize, t: usize) -> Tensor {
    let d = clip.dims();
    let (c, tt, h, w) = (d[1], d[2], d[3], d[4]);
    let hw = h * w;
    let mut out = vec![0.0f32; c * hw];
    for ci in 0..c {
        let src = ((b * c + ci) * tt + t) * hw;
        out[ci * hw..(ci + 1) * hw].copy_from_slice(&clip.data()[src..src + hw]);
    }
    Tensor::from_vec(out, &[c, h, w], &chw()).expect("frame dims are positive")
}

fn insert_frame(clip: &mut Tensor, frame: &Tensor, b: usize, t: usize) {
    let d = clip.dims().to_vec();
    let (c, tt, h, w) = (d[1], d[2], d[3], d[4]);
    let hw = h * w;
    for ci in 0..c {
        let dst = ((b * c + ci) * tt + t) * hw;
        clip.data_mut()[dst..dst + hw].copy_from_slice(&frame.data()[ci * hw..(ci + 1) * hw]);
    }
}

/// Full frequency branch: per-frame decompose / process / reconstruct, then
/// the RSTN tail. Output conforms to the common branch shape.
pub fn wtcr_forward(clip: &Tensor, params: &WtcrParams) -> Result<Tensor> {
    let [b, _, t, h, w] = dims5(clip, "wtcr_forward input")?;
    let factor = 1usize << params.levels;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "wtcr_forward: {h}x{w} not divisible by 2^{}",
            params.levels
        )));
    }
    if h % SPATIAL_REDUCTION != 0 || w % SPATIAL_REDUCTION != 0 {
        return Err(Error::Shape(format!(
            "wtcr_forward: {h}x{w} not divisible by {SPATIAL_REDUCTION}"
        )));
    }
    let mut restored = clip.clone();
    for bi in 0..b {
        for ti in 0..t {
            let frame = extract_frame(clip, bi, ti);
            let pyramid = multilevel_decompose(&frame, params.levels)?;
            let rec = wtcr_reconstruct(&pyramid, params)?;
            insert_frame(&mut restored, &rec, bi, ti);
        }
    }
    backbone_forward(&restored, &params.rstn)
}
