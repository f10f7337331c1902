//! Full-model parameter bundle, forward pass, and weight persistence.
//!
//! A model is the union of the three branch parameter sets, the attention
//! parameters, and the fusion/head parameters, all derived deterministically
//! from one seed. On disk a model is a JSON manifest naming every weight blob
//! (stored in the TNSR format) plus the pipeline geometry needed to rebuild
//! the architecture around them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{
    backbone_forward, provider_encode, Conv2dParams, FrameFeatureProvider, PipelineShape,
    ResBlockParams, Res2dParams, RstnParams, StubEncoderParams, TemporalParams,
    TEMPORAL_GROUPS,
};
use crate::error::{Error, Result};
use crate::fusion::{classify, pyramid_fuse, FusionParams, HeadParams, ProjParams};
use crate::nam::{nam_forward, BnMode, BnParams, NamConfig};
use crate::ops::dims5;
use crate::rng::Rng;
use crate::tensor::{generic, Tensor};
use crate::wavelet::{wtcr_forward, HfConvParams, WtcrParams};

/// Stream indices for deriving per-component generators from the model seed.
mod streams {
    pub const BACKBONE: u64 = 1;
    pub const STUB: u64 = 2;
    pub const WTCR: u64 = 3;
    pub const FUSION: u64 = 4;
}

/// Every parameter of the three-branch classifier.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub shape: PipelineShape,
    pub levels: usize,
    pub backbone: RstnParams,
    pub stub: StubEncoderParams,
    pub nam_bn: BnParams,
    pub nam_cfg: NamConfig,
    pub wtcr: WtcrParams,
    pub fusion: FusionParams,
}

impl ModelParams {
    /// Deterministic initialization: each component draws from its own
    /// derived stream, so adding parameters to one component never shifts
    /// another's values.
    pub fn seeded(shape: PipelineShape, levels: usize, seed: u64) -> Result<Self> {
        shape.validate()?;
        if shape.h % (1 << levels) != 0 || shape.w % (1 << levels) != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} not divisible by 2^{levels}",
                shape.h, shape.w
            )));
        }
        Ok(ModelParams {
            shape,
            levels,
            backbone: RstnParams::seeded(
                shape.c_in,
                shape.c_f,
                &mut Rng::derive(seed, streams::BACKBONE),
            ),
            stub: StubEncoderParams::seeded(
                shape.c_in,
                shape.c_f,
                &mut Rng::derive(seed, streams::STUB),
            ),
            nam_bn: BnParams::identity(shape.c_f),
            nam_cfg: NamConfig::new(shape.c_f),
            wtcr: WtcrParams::seeded(
                shape.c_in,
                shape.c_f,
                levels,
                &mut Rng::derive(seed, streams::WTCR),
            ),
            fusion: FusionParams::seeded(shape.c_f, &mut Rng::derive(seed, streams::FUSION)),
        })
    }

    /// Provider backed by this model's own stub encoder weights.
    pub fn stub_provider(&self) -> FrameFeatureProvider {
        FrameFeatureProvider::Stub(self.stub.clone())
    }
}

/// Run the whole pipeline: three branches, fusion, classification head.
/// Returns `(B, 2)` logits; class index 1 is malignant.
pub fn forward(
    clip: &Tensor,
    params: &ModelParams,
    provider: &FrameFeatureProvider,
) -> Result<Tensor> {
    let [_, c_in, t, h, w] = dims5(clip, "forward input")?;
    let s = &params.shape;
    if c_in != s.c_in || t != s.t || h != s.h || w != s.w {
        return Err(Error::Shape(format!(
            "clip dims {:?} do not match pipeline (_, {}, {}, {}, {})",
            clip.dims(),
            s.c_in,
            s.t,
            s.h,
            s.w
        )));
    }
    let f1 = backbone_forward(clip, &params.backbone)?;
    let frame_features = provider_encode(clip, provider, s)?;
    let f2 = nam_forward(
        &frame_features,
        &params.nam_bn,
        &params.nam_cfg,
        BnMode::Inference,
    )?;
    let f3 = wtcr_forward(clip, &params.wtcr)?;
    let fused = pyramid_fuse(&f1, &f2, &f3, &params.fusion)?;
    classify(&fused, &params.fusion.head)
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeSpec {
    c_in: usize,
    t: usize,
    h: usize,
    w: usize,
    c_f: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    dims: Vec<usize>,
}

/// JSON manifest referencing every weight blob of a saved model.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelManifest {
    format: String,
    version: u32,
    shape: ShapeSpec,
    levels: usize,
    seed: Option<u64>,
    tensors: Vec<TensorEntry>,
}

const MANIFEST_FORMAT: &str = "trivid-model";
pub const MANIFEST_FILE: &str = "model.json";

fn vec_tensor(v: &[f32]) -> Tensor {
    Tensor::from_vec(v.to_vec(), &[v.len()], &generic(1)).expect("non-empty vector")
}

struct Registry {
    entries: Vec<(String, Tensor)>,
}

impl Registry {
    fn new() -> Self {
        Registry { entries: Vec::new() }
    }

    fn push(&mut self, name: &str, t: Tensor) {
        self.entries.push((name.to_string(), t));
    }

    fn push_conv(&mut self, prefix: &str, c: &Conv2dParams) {
        self.push(&format!("{prefix}.weight"), c.weight.clone());
        self.push(&format!("{prefix}.bias"), vec_tensor(&c.bias));
    }

    fn push_block(&mut self, prefix: &str, b: &ResBlockParams) {
        self.push_conv(&format!("{prefix}.conv"), &b.conv);
        self.push_conv(&format!("{prefix}.shortcut"), &b.shortcut);
    }

    fn push_rstn(&mut self, prefix: &str, r: &RstnParams) {
        self.push_conv(&format!("{prefix}.stem"), &r.res2d.stem);
        self.push_block(&format!("{prefix}.block_a"), &r.res2d.block_a);
        self.push_block(&format!("{prefix}.block_b"), &r.res2d.block_b);
        self.push(&format!("{prefix}.temporal.weight"), r.temporal.weight.clone());
        self.push(&format!("{prefix}.temporal.bias"), vec_tensor(&r.temporal.bias));
    }

    fn push_proj(&mut self, prefix: &str, p: &ProjParams) {
        self.push(&format!("{prefix}.weight"), p.weight.clone());
        self.push(&format!("{prefix}.bias"), vec_tensor(&p.bias));
    }

    fn push_bn(&mut self, prefix: &str, p: &BnParams) {
        self.push(&format!("{prefix}.gamma"), vec_tensor(&p.gamma));
        self.push(&format!("{prefix}.beta"), vec_tensor(&p.beta));
        self.push(&format!("{prefix}.mean"), vec_tensor(&p.running_mean));
        self.push(&format!("{prefix}.var"), vec_tensor(&p.running_var));
    }
}

struct Loader {
    tensors: HashMap<String, Tensor>,
}

impl Loader {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("manifest is missing tensor '{name}'")))
    }

    fn take_vec(&mut self, name: &str) -> Result<Vec<f32>> {
        let t = self.take(name)?;
        if t.dims().len() != 1 {
            return Err(Error::Format(format!("tensor '{name}' should be rank 1")));
        }
        Ok(t.data().to_vec())
    }

    fn take_conv(&mut self, prefix: &str, stride: usize, pad: usize) -> Result<Conv2dParams> {
        Ok(Conv2dParams {
            weight: self.take(&format!("{prefix}.weight"))?,
            bias: self.take_vec(&format!("{prefix}.bias"))?,
            stride,
            pad,
        })
    }

    fn take_block(&mut self, prefix: &str) -> Result<ResBlockParams> {
        Ok(ResBlockParams {
            conv: self.take_conv(&format!("{prefix}.conv"), 2, 1)?,
            shortcut: self.take_conv(&format!("{prefix}.shortcut"), 2, 0)?,
        })
    }

    fn take_rstn(&mut self, prefix: &str) -> Result<RstnParams> {
        Ok(RstnParams {
            res2d: Res2dParams {
                stem: self.take_conv(&format!("{prefix}.stem"), 2, 1)?,
                block_a: self.take_block(&format!("{prefix}.block_a"))?,
                block_b: self.take_block(&format!("{prefix}.block_b"))?,
            },
            temporal: TemporalParams {
                weight: self.take(&format!("{prefix}.temporal.weight"))?,
                bias: self.take_vec(&format!("{prefix}.temporal.bias"))?,
                groups: TEMPORAL_GROUPS,
            },
        })
    }

    fn take_proj(&mut self, prefix: &str) -> Result<ProjParams> {
        Ok(ProjParams {
            weight: self.take(&format!("{prefix}.weight"))?,
            bias: self.take_vec(&format!("{prefix}.bias"))?,
        })
    }

    fn take_bn(&mut self, prefix: &str, eps: f32) -> Result<BnParams> {
        Ok(BnParams {
            gamma: self.take_vec(&format!("{prefix}.gamma"))?,
            beta: self.take_vec(&format!("{prefix}.beta"))?,
            running_mean: self.take_vec(&format!("{prefix}.mean"))?,
            running_var: self.take_vec(&format!("{prefix}.var"))?,
            eps,
        })
    }
}

fn named_tensors(params: &ModelParams) -> Vec<(String, Tensor)> {
    let mut reg = Registry::new();
    reg.push_rstn("backbone", &params.backbone);
    reg.push_conv("stub.stem", &params.stub.stem);
    reg.push_block("stub.block", &params.stub.block);
    reg.push_conv("stub.proj", &params.stub.proj);
    reg.push_bn("nam.bn", &params.nam_bn);
    for (i, hf) in params.wtcr.hf.iter().enumerate() {
        reg.push_conv(&format!("wtcr.hf{i}"), &hf.conv);
    }
    reg.push_rstn("wtcr.rstn", &params.wtcr.rstn);
    reg.push_proj("fusion.u1", &params.fusion.u1);
    reg.push_proj("fusion.u2", &params.fusion.u2);
    reg.push_proj("fusion.d1", &params.fusion.d1);
    reg.push_proj("fusion.d2", &params.fusion.d2);
    reg.push_proj("fusion.head.conv", &params.fusion.head.conv);
    reg.push_bn("fusion.head.bn", &params.fusion.head.bn);
    reg.push("fusion.head.fc.weight", params.fusion.head.fc_weight.clone());
    reg.push("fusion.head.fc.bias", vec_tensor(&params.fusion.head.fc_bias));
    reg.entries
}

/// Write the manifest plus one TNSR blob per tensor into `dir`. Returns the
/// manifest path.
pub fn save_model(params: &ModelParams, dir: impl AsRef<Path>, seed: Option<u64>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, tensor) in named_tensors(params) {
        let file = format!("{}.tnsr", name.replace('.', "_"));
        tensor.save(dir.join(&file))?;
        entries.push(TensorEntry {
            name,
            file,
            dims: tensor.dims().to_vec(),
        });
    }
    let manifest = ModelManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: 1,
        shape: ShapeSpec {
            c_in: params.shape.c_in,
            t: params.shape.t,
            h: params.shape.h,
            w: params.shape.w,
            c_f: params.shape.c_f,
        },
        levels: params.levels,
        seed,
        tensors: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json)?;
    Ok(path)
}

/// Load a model saved by [`save_model`]. Every referenced blob must exist and
/// match the dims recorded in the manifest.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<ModelParams> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path)?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Format(format!(
            "unexpected manifest format '{}'",
            manifest.format
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut tensors = HashMap::new();
    for entry in &manifest.tensors {
        let t = Tensor::load(dir.join(&entry.file))?;
        if t.dims() != entry.dims.as_slice() {
            return Err(Error::Format(format!(
                "blob '{}' has dims {:?} but manifest records {:?}",
                entry.file,
                t.dims(),
                entry.dims
            )));
        }
        tensors.insert(entry.name.clone(), t);
    }
    let mut loader = Loader { tensors };

    let shape = PipelineShape {
        c_in: manifest.shape.c_in,
        t: manifest.shape.t,
        h: manifest.shape.h,
        w: manifest.shape.w,
        c_f: manifest.shape.c_f,
    };
    shape.validate()?;

    let backbone = loader.take_rstn("backbone")?;
    let stub = StubEncoderParams {
        stem: loader.take_conv("stub.stem", 2, 1)?,
        block: loader.take_block("stub.block")?,
        proj: loader.take_conv("stub.proj", 2, 0)?,
    };
    let nam_bn = loader.take_bn("nam.bn", crate::nam::DEFAULT_BN_EPS)?;
    let hf = (0..manifest.levels)
        .map(|i| {
            Ok(HfConvParams {
                conv: loader.take_conv(&format!("wtcr.hf{i}"), 1, 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wtcr = WtcrParams {
        levels: manifest.levels,
        hf,
        rstn: loader.take_rstn("wtcr.rstn")?,
    };
    let fusion = FusionParams {
        u1: loader.take_proj("fusion.u1")?,
        u2: loader.take_proj("fusion.u2")?,
        d1: loader.take_proj("fusion.d1")?,
        d2: loader.take_proj("fusion.d2")?,
        head: HeadParams {
            conv: loader.take_proj("fusion.head.conv")?,
            bn: loader.take_bn("fusion.head.bn", crate::nam::DEFAULT_BN_EPS)?,
            fc_weight: loader.take("fusion.head.fc.weight")?,
            fc_bias: loader.take_vec("fusion.head.fc.bias")?,
        },
    };

    Ok(ModelParams {
        shape,
        levels: manifest.levels,
        backbone,
        stub,
        nam_bn,
        nam_cfg: NamConfig::new(shape.c_f),
        wtcr,
        fusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::bcthw;

    fn desk_clip(b: usize, seed: u64) -> Tensor {
        Tensor::seeded_uniform(&[b, 1, 8, 64, 64], &bcthw(), 0.0, 1.0, &mut Rng::new(seed))
            .unwrap()
    }

    #[test]
    fn forward_desk_logits_shape_and_determinism() {
        let params = ModelParams::seeded(PipelineShape::desk(), 2, 7).unwrap();
        let clip = desk_clip(2, 100);
        let a = forward(&clip, &params, &params.stub_provider()).unwrap();
        let b = forward(&clip, &params, &params.stub_provider()).unwrap();
        assert_eq!(a.dims(), &[2, 2]);
        assert!(a.bitwise_eq(&b));
        assert!(a.all_finite());
    }

    #[test]
    fn forward_48x48_smaller_config() {
        let shape = PipelineShape {
            c_in: 1,
            t: 8,
            h: 48,
            w: 48,
            c_f: 16,
        };
        let params = ModelParams::seeded(shape, 2, 3).unwrap();
        let clip = Tensor::seeded_uniform(&[1, 1, 8, 48, 48], &bcthw(), 0.0, 1.0, &mut Rng::new(1))
            .unwrap();
        let logits = forward(&clip, &params, &params.stub_provider()).unwrap();
        assert_eq!(logits.dims(), &[1, 2]);
    }

    #[test]
    fn forward_rejects_indivisible_input() {
        let shape = PipelineShape {
            c_in: 1,
            t: 8,
            h: 50,
            w: 50,
            c_f: 16,
        };
        assert!(ModelParams::seeded(shape, 2, 3).is_err());
    }

    #[test]
    fn forward_rejects_mismatched_clip() {
        let params = ModelParams::seeded(PipelineShape::desk(), 2, 7).unwrap();
        let clip = Tensor::zeros(&[1, 1, 4, 64, 64], &bcthw()).unwrap();
        assert!(forward(&clip, &params, &params.stub_provider()).is_err());
    }

    #[test]
    fn save_load_round_trip_preserves_forward_bits() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::seeded(PipelineShape::desk(), 2, 42).unwrap();
        let manifest = save_model(&params, dir.path(), Some(42)).unwrap();
        let loaded = load_model(&manifest).unwrap();
        let clip = desk_clip(1, 5);
        let a = forward(&clip, &params, &params.stub_provider()).unwrap();
        let b = forward(&clip, &loaded, &loaded.stub_provider()).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn missing_blob_fails_load() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::seeded(PipelineShape::desk(), 2, 42).unwrap();
        let manifest = save_model(&params, dir.path(), None).unwrap();
        fs::remove_file(dir.path().join("fusion_u1_weight.tnsr")).unwrap();
        assert!(load_model(&manifest).is_err());
    }
}
