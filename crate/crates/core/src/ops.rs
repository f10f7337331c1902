//! Shared numeric kernels: 2D/3D convolutions, pooling, activations, and
//! axis concatenation.
//!
//! Convention, used everywhere in this crate: convolutions are correlations
//! (no kernel flip), padding is zero-padding, and inner products accumulate in
//! f64 before rounding the result to f32.

use crate::error::{Error, Result};
use crate::tensor::{AxisRole, Tensor};

/// Logistic sigmoid, evaluated in f64 and rounded to f32.
pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

/// 2D correlation over a batch of images.
///
/// `input` is `(N, C_in, H, W)`, `weight` is `(C_out, C_in, KH, KW)`, `bias`
/// has length `C_out`. Output extent per spatial axis is
/// `(extent + 2*pad - k) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let [n, c_in, h, w] = dims4(input, "conv2d input")?;
    let [c_out, wc_in, kh, kw] = dims4(weight, "conv2d weight")?;
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv2d: input has {c_in} channels but weight expects {wc_in}"
        )));
    }
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "conv2d: bias length {} != out channels {c_out}",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
    }
    let h_out = out_extent(h, kh, stride, pad, "height")?;
    let w_out = out_extent(w, kw, stride, pad, "width")?;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; n * c_out * h_out * w_out];

    for b in 0..n {
        for oc in 0..c_out {
            let w_base = oc * c_in * kh * kw;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = bias[oc] as f64;
                    for ic in 0..c_in {
                        let x_base = (b * c_in + ic) * h * w;
                        let k_base = w_base + ic * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = x_base + iy as usize * w;
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[row + ix as usize] as f64
                                    * wt[k_base + ky * kw + kx] as f64;
                            }
                        }
                    }
                    out[((b * c_out + oc) * h_out + oy) * w_out + ox] = acc as f32;
                }
            }
        }
    }

    Tensor::from_vec(out, &[n, c_out, h_out, w_out], input.roles())
}

/// Pointwise channel projection of a `(B, C, T, H, W)` tensor: a `1x1x1`
/// convolution. `weight` is `(C_out, C_in)`.
pub fn conv1x1x1(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let [b, c_in, t, h, w] = dims5(input, "conv1x1x1 input")?;
    let wd = weight.dims();
    if wd.len() != 2 {
        return Err(Error::Shape("conv1x1x1: weight must be rank 2".into()));
    }
    let (c_out, wc_in) = (wd[0], wd[1]);
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv1x1x1: input has {c_in} channels but weight expects {wc_in}"
        )));
    }
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "conv1x1x1: bias length {} != out channels {c_out}",
            bias.len()
        )));
    }

    let spatial = t * h * w;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; b * c_out * spatial];
    for bi in 0..b {
        for oc in 0..c_out {
            for s in 0..spatial {
                let mut acc = bias[oc] as f64;
                for ic in 0..c_in {
                    acc += x[(bi * c_in + ic) * spatial + s] as f64
                        * wt[oc * c_in + ic] as f64;
                }
                out[(bi * c_out + oc) * spatial + s] = acc as f32;
            }
        }
    }
    Tensor::from_vec(out, &[b, c_out, t, h, w], input.roles())
}

/// Grouped temporal convolution with kernel `(KT, 1, 1)` and same padding
/// along time. `weight` is `(C, C/groups, KT)`; channel `o` reads only the
/// channels of its own group.
pub fn conv3d_temporal_grouped(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    groups: usize,
) -> Result<Tensor> {
    let [b, c, t, h, w] = dims5(input, "temporal conv input")?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!(
            "temporal conv: {c} channels not divisible into {groups} groups"
        )));
    }
    let cg = c / groups;
    let wd = weight.dims();
    if wd.len() != 3 || wd[0] != c || wd[1] != cg {
        return Err(Error::Shape(format!(
            "temporal conv: weight dims {:?}, expected [{c}, {cg}, kt]",
            wd
        )));
    }
    let kt = wd[2];
    if kt % 2 == 0 {
        return Err(Error::InvalidArgument(
            "temporal conv: kernel length must be odd for same padding".into(),
        ));
    }
    if bias.len() != c {
        return Err(Error::Shape(format!(
            "temporal conv: bias length {} != channels {c}",
            bias.len()
        )));
    }
    let half = (kt / 2) as isize;

    let x = input.data();
    let wt = weight.data();
    let hw = h * w;
    let mut out = vec![0.0f32; b * c * t * hw];
    for bi in 0..b {
        for oc in 0..c {
            let g = oc / cg;
            for ti in 0..t {
                for s in 0..hw {
                    let mut acc = bias[oc] as f64;
                    for icg in 0..cg {
                        let ic = g * cg + icg;
                        for dk in 0..kt {
                            let tt = ti as isize + dk as isize - half;
                            if tt < 0 || tt >= t as isize {
                                continue;
                            }
                            acc += x[((bi * c + ic) * t + tt as usize) * hw + s] as f64
                                * wt[(oc * cg + icg) * kt + dk] as f64;
                        }
                    }
                    out[((bi * c + oc) * t + ti) * hw + s] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec(out, &[b, c, t, h, w], input.roles())
}

/// Spatial 3D max pool with kernel `(1, 3, 3)`, stride 1, same padding:
/// shape-preserving; each element becomes the max over its in-bounds 3x3
/// spatial neighborhood.
pub fn maxpool3d_spatial(input: &Tensor) -> Result<Tensor> {
    let [b, c, t, h, w] = dims5(input, "maxpool input")?;
    let x = input.data();
    let mut out = vec![0.0f32; x.len()];
    for bct in 0..b * c * t {
        let base = bct * h * w;
        for y in 0..h {
            for xw in 0..w {
                let mut m = f32::NEG_INFINITY;
                for dy in -1isize..=1 {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -1isize..=1 {
                        let xx = xw as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        m = m.max(x[base + yy as usize * w + xx as usize]);
                    }
                }
                out[base + y * w + xw] = m;
            }
        }
    }
    Tensor::from_vec(out, &[b, c, t, h, w], input.roles())
}

/// Global average over `(T, H, W)` of a `(B, C, T, H, W)` tensor, yielding
/// `(B, C)`. Accumulates in f64.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let [b, c, t, h, w] = dims5(input, "global pool input")?;
    let spatial = t * h * w;
    let x = input.data();
    let mut out = vec![0.0f32; b * c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * spatial;
            let sum: f64 = x[base..base + spatial].iter().map(|&v| v as f64).sum();
            out[bi * c + ci] = (sum / spatial as f64) as f32;
        }
    }
    Tensor::from_vec(out, &[b, c], &[AxisRole::Batch, AxisRole::Channel])
}

/// Concatenate tensors along `axis`. All other extents must agree; roles are
/// taken from the first tensor.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let rank = first.dims().len();
    if axis >= rank {
        return Err(Error::Shape(format!("concat axis {axis} out of rank {rank}")));
    }
    let mut axis_total = 0;
    for t in tensors {
        if t.dims().len() != rank {
            return Err(Error::Shape("concat: rank mismatch".into()));
        }
        for (i, (&a, &b)) in first.dims().iter().zip(t.dims()).enumerate() {
            if i != axis && a != b {
                return Err(Error::Shape(format!(
                    "concat: extent mismatch on axis {i}: {a} vs {b}"
                )));
            }
        }
        axis_total += t.dims()[axis];
    }

    let outer: usize = first.dims()[..axis].iter().product();
    let inner: usize = first.dims()[axis + 1..].iter().product();
    let mut out_dims = first.dims().to_vec();
    out_dims[axis] = axis_total;

    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for t in tensors {
            let block = t.dims()[axis] * inner;
            let start = o * block;
            out.extend_from_slice(&t.data()[start..start + block]);
        }
    }
    Tensor::from_vec(out, &out_dims, first.roles())
}

/// Split a tensor into `parts` equal slabs along `axis`; inverse of [`concat`]
/// for equal-sized pieces.
pub fn split(t: &Tensor, axis: usize, parts: usize) -> Result<Vec<Tensor>> {
    let rank = t.dims().len();
    if axis >= rank {
        return Err(Error::Shape(format!("split axis {axis} out of rank {rank}")));
    }
    let extent = t.dims()[axis];
    if parts == 0 || extent % parts != 0 {
        return Err(Error::Shape(format!(
            "split: extent {extent} not divisible into {parts} parts"
        )));
    }
    let part_extent = extent / parts;
    let outer: usize = t.dims()[..axis].iter().product();
    let inner: usize = t.dims()[axis + 1..].iter().product();
    let mut part_dims = t.dims().to_vec();
    part_dims[axis] = part_extent;

    let block = part_extent * inner;
    let mut out = Vec::with_capacity(parts);
    for p in 0..parts {
        let mut data = Vec::with_capacity(outer * block);
        for o in 0..outer {
            let start = (o * parts + p) * block;
            data.extend_from_slice(&t.data()[start..start + block]);
        }
        out.push(Tensor::from_vec(data, &part_dims, t.roles())?);
    }
    Ok(out)
}

fn out_extent(extent: usize, k: usize, stride: usize, pad: usize, name: &str) -> Result<usize> {
    let padded = extent + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "conv2d: {name} {extent} smaller than kernel {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    let d = t.dims();
    if d.len() != 4 {
        return Err(Error::Shape(format!("{what}: expected rank 4, got {:?}", d)));
    }
    Ok([d[0], d[1], d[2], d[3]])
}

pub(crate) fn dims5(t: &Tensor, what: &str) -> Result<[usize; 5]> {
    let d = t.dims();
    if d.len() != 5 {
        return Err(Error::Shape(format!("{what}: expected rank 5, got {:?}", d)));
    }
    Ok([d[0], d[1], d[2], d[3], d[4]])
}
