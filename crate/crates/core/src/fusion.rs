//! Top-down pyramid fusion of the three branch features and the
//! classification head.
//!
//! All channel resizing is done by `1x1x1` projections that leave the
//! temporal and spatial extents untouched. The fusion graph, for branch
//! features `F1, F2, F3` of common shape `(B, C, T, H', W')`:
//!
//! ```text
//! F12 = concat(F1, F2)                 // 2C
//! A   = F12 + U1(F1)                   // 2C
//! B   = U2(A) + concat(F1, F2, F3)     // 3C
//! E1  = D1(B) + F12                    // 2C
//! E2  = D2(E1) + F1                    // C    <- fused output
//! ```
//!
//! The head lifts the fused map to `2C` channels, applies batch norm and
//! ReLU, averages over `(T, H', W')`, and maps the pooled vector to two
//! logits. Class index 1 is malignant.

use crate::error::{Error, Result};
use crate::nam::{batch_norm, BnMode, BnParams};
use crate::ops::{concat, conv1x1x1, global_avg_pool, relu};
use crate::rng::Rng;
use crate::tensor::{generic, AxisRole, Tensor};

/// One channel projection: `1x1x1` conv with bias.
#[derive(Debug, Clone)]
pub struct ProjParams {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl ProjParams {
    pub fn seeded(c_out: usize, c_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (c_in as f32).sqrt();
        let weight = Tensor::seeded_uniform(&[c_out, c_in], &generic(2), -bound, bound, rng)
            .expect("projection dims are positive");
        let bias = (0..c_out).map(|_| rng.uniform(-bound, bound)).collect();
        ProjParams { weight, bias }
    }

    /// Square identity projection with zero bias.
    pub fn identity(c: usize) -> Self {
        let mut weight = Tensor::zeros(&[c, c], &generic(2)).expect("positive dims");
        for i in 0..c {
            weight.data_mut()[i * c + i] = 1.0;
        }
        ProjParams {
            weight,
            bias: vec![0.0; c],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn zero_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }
}

/// Project the channel axis of a `(B, C, T, H, W)` tensor.
pub fn channel_project(x: &Tensor, proj: &ProjParams) -> Result<Tensor> {
    conv1x1x1(x, &proj.weight, &proj.bias)
}

/// Classification head parameters.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub conv: ProjParams,
    pub bn: BnParams,
    pub fc_weight: Tensor,
    pub fc_bias: Vec<f32>,
}

impl HeadParams {
    pub fn seeded(c_f: usize, rng: &mut Rng) -> Self {
        let lifted = 2 * c_f;
        let conv = ProjParams::seeded(lifted, c_f, rng);
        let bound = 1.0 / (lifted as f32).sqrt();
        let fc_weight = Tensor::seeded_uniform(&[2, lifted], &generic(2), -bound, bound, rng)
            .expect("fc dims are positive");
        let fc_bias = (0..2).map(|_| rng.uniform(-bound, bound)).collect();
        HeadParams {
            conv,
            bn: BnParams::identity(lifted),
            fc_weight,
            fc_bias,
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.conv = self.conv.zero_bias();
        self.fc_bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }
}

/// All fusion-stage parameters.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub u1: ProjParams,
    pub u2: ProjParams,
    pub d1: ProjParams,
    pub d2: ProjParams,
    pub head: HeadParams,
}

impl FusionParams {
    pub fn seeded(c_f: usize, rng: &mut Rng) -> Self {
        FusionParams {
            u1: ProjParams::seeded(2 * c_f, c_f, rng),
            u2: ProjParams::seeded(3 * c_f, 2 * c_f, rng),
            d1: ProjParams::seeded(2 * c_f, 3 * c_f, rng),
            d2: ProjParams::seeded(c_f, 2 * c_f, rng),
            head: HeadParams::seeded(c_f, rng),
        }
    }

    pub fn zero_bias(mut self) -> Self {
        self.u1 = self.u1.zero_bias();
        self.u2 = self.u2.zero_bias();
        self.d1 = self.d1.zero_bias();
        self.d2 = self.d2.zero_bias();
        self.head = self.head.zero_bias();
        self
    }
}

/// Fuse the three aligned branch features down to one `(B, C, T, H', W')`
/// map.
pub fn pyramid_fuse(
    f1: &Tensor,
    f2: &Tensor,
    f3: &Tensor,
    params: &FusionParams,
) -> Result<Tensor> {
    if f1.dims() != f2.dims() || f1.dims() != f3.dims() {
        return Err(Error::Shape(format!(
            "pyramid_fuse: branch dims disagree: {:?} / {:?} / {:?}",
            f1.dims(),
            f2.dims(),
            f3.dims()
        )));
    }
    let f12 = concat(&[f1, f2], 1)?;
    let a = f12.add(&channel_project(f1, &params.u1)?)?;
    let f123 = concat(&[f1, f2, f3], 1)?;
    let b = channel_project(&a, &params.u2)?.add(&f123)?;
    let e1 = channel_project(&b, &params.d1)?.add(&f12)?;
    channel_project(&e1, &params.d2)?.add(f1)
}

/// Head: lift channels, BN + ReLU, global average, linear map to two logits.
pub fn classify(fused: &Tensor, params: &HeadParams) -> Result<Tensor> {
    let x = channel_project(fused, &params.conv)?;
    let x = batch_norm(&x, &params.bn, BnMode::Inference)?.map(relu);
    let pooled = global_avg_pool(&x)?;
    dense(&pooled, &params.fc_weight, &params.fc_bias)
}

/// `(B, C_in) x (K, C_in)^T + bias -> (B, K)`, f64 accumulation.
fn dense(x: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let xd = x.dims();
    let wd = weight.dims();
    if xd.len() != 2 || wd.len() != 2 || xd[1] != wd[1] {
        return Err(Error::Shape(format!(
            "dense: incompatible dims {:?} x {:?}",
            xd, wd
        )));
    }
    if bias.len() != wd[0] {
        return Err(Error::Shape("dense: bias length mismatch".into()));
    }
    let (b, c) = (xd[0], xd[1]);
    let k = wd[0];
    let mut out = vec![0.0f32; b * k];
    for bi in 0..b {
        for ki in 0..k {
            let mut acc = bias[ki] as f64;
            for ci in 0..c {
                acc += x.data()[bi * c + ci] as f64 * weight.data()[ki * c + ci] as f64;
            }
            out[bi * k + ki] = acc as f32;
        }
    }
    Tensor::from_vec(out, &[b, k], &[AxisRole::Batch, AxisRole::Channel])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::bcthw;

    fn branch(seed: u64, dims: [usize; 5]) -> Tensor {
        Tensor::seeded_uniform(&dims, &bcthw(), -1.0, 1.0, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn identity_projection_is_identity() {
        let x = branch(1, [1, 4, 2, 3, 3]);
        let y = channel_project(&x, &ProjParams::identity(4)).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn projection_changes_only_channels() {
        let x = branch(2, [1, 16, 8, 8, 8]);
        let proj = ProjParams::seeded(32, 16, &mut Rng::new(5));
        let y = channel_project(&x, &proj).unwrap();
        assert_eq!(y.dims(), &[1, 32, 8, 8, 8]);
    }

    #[test]
    fn zero_weights_zero_bias_give_zero() {
        let x = branch(3, [1, 4, 2, 2, 2]);
        let proj = ProjParams {
            weight: Tensor::zeros(&[6, 4], &generic(2)).unwrap(),
            bias: vec![0.0; 6],
        };
        let y = channel_project(&x, &proj).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_zero_branches_zero_bias_is_zero() {
        let params = FusionParams::seeded(4, &mut Rng::new(6)).zero_bias();
        let z = Tensor::zeros(&[2, 4, 2, 2, 2], &bcthw()).unwrap();
        let fused = pyramid_fuse(&z, &z, &z, &params).unwrap();
        assert!(fused.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_output_matches_f1_dims() {
        let params = FusionParams::seeded(4, &mut Rng::new(7));
        let f1 = branch(10, [2, 4, 3, 2, 2]);
        let f2 = branch(11, [2, 4, 3, 2, 2]);
        let f3 = branch(12, [2, 4, 3, 2, 2]);
        let fused = pyramid_fuse(&f1, &f2, &f3, &params).unwrap();
        assert_eq!(fused.dims(), f1.dims());
    }

    #[test]
    fn fuse_rejects_mismatched_branches() {
        let params = FusionParams::seeded(4, &mut Rng::new(8));
        let f1 = branch(10, [2, 4, 3, 2, 2]);
        let f2 = branch(11, [2, 4, 3, 2, 2]);
        let f3 = branch(12, [2, 4, 2, 2, 2]);
        assert!(pyramid_fuse(&f1, &f2, &f3, &params).is_err());
    }

    #[test]
    fn fuse_is_linear_with_zero_biases() {
        let params = FusionParams::seeded(4, &mut Rng::new(9)).zero_bias();
        for seed in 0..10 {
            let f1 = branch(100 + seed, [1, 4, 2, 3, 3]);
            let f2 = branch(200 + seed, [1, 4, 2, 3, 3]);
            let f3 = branch(300 + seed, [1, 4, 2, 3, 3]);
            let base = pyramid_fuse(&f1, &f2, &f3, &params).unwrap();
            let scaled = pyramid_fuse(&f1.scale(2.0), &f2.scale(2.0), &f3.scale(2.0), &params)
                .unwrap();
            assert!(scaled.max_abs_diff(&base.scale(2.0)) <= 1e-5);
        }
    }

    #[test]
    fn fuse_with_identity_wiring_ignores_zeroed_side_branches() {
        // Square-ish check: with F2 = F3 = 0 and zero biases, the fused
        // output is a linear function of F1 alone.
        let params = FusionParams::seeded(4, &mut Rng::new(13)).zero_bias();
        let f1 = branch(40, [1, 4, 2, 2, 2]);
        let zero = Tensor::zeros(&[1, 4, 2, 2, 2], &bcthw()).unwrap();
        let a = pyramid_fuse(&f1, &zero, &zero, &params).unwrap();
        let b = pyramid_fuse(&f1, &zero.scale(0.0), &zero.scale(0.0), &params).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn classify_shape_and_batch_equivariance() {
        let params = HeadParams::seeded(4, &mut Rng::new(14));
        let x = branch(50, [1, 4, 2, 3, 3]);
        let pair = concat(&[&x, &x], 0).unwrap();
        let logits = classify(&pair, &params).unwrap();
        assert_eq!(logits.dims(), &[2, 2]);
        assert_eq!(logits.data()[0].to_bits(), logits.data()[2].to_bits());
        assert_eq!(logits.data()[1].to_bits(), logits.data()[3].to_bits());
    }

    #[test]
    fn classify_is_invariant_to_uniform_spatial_permutation() {
        let params = HeadParams::seeded(6, &mut Rng::new(15));
        let x = branch(51, [2, 6, 2, 4, 4]);
        let logits = classify(&x, &params).unwrap();

        // Permute the 16 spatial positions identically across (B, C, T).
        let mut perm: Vec<usize> = (0..16).collect();
        Rng::new(5).shuffle(&mut perm);
        let mut data = x.data().to_vec();
        for outer in 0..(2 * 6 * 2) {
            let base = outer * 16;
            let orig: Vec<f32> = data[base..base + 16].to_vec();
            for (i, &p) in perm.iter().enumerate() {
                data[base + i] = orig[p];
            }
        }
        let permuted = Tensor::from_vec(data, x.dims(), x.roles()).unwrap();
        let logits_p = classify(&permuted, &params).unwrap();
        assert!(logits_p.max_abs_diff(&logits) <= 1e-6);
    }
}
