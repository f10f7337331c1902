//! End-to-end synthetic experiments shared by the CLI and the acceptance
//! suite.
//!
//! The texture-probe experiment measures whether pooled branch features
//! separate the two texture classes: generate the dataset, extract features
//! with a seeded (untrained) model, split at the patient level, standardize
//! by train-split statistics, train the logistic probe, and score the
//! held-out side. A label-shuffled variant serves as the null control.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_forward, provider_encode, PipelineShape};
use crate::error::{Error, Result};
use crate::evalkit::{holdout_split, MetricsReport};
use crate::fusion::pyramid_fuse;
use crate::model::ModelParams;
use crate::nam::{nam_forward, BnMode};
use crate::probe::{
    apply_standardizer, evaluate_probe, fit_standardizer, pool_features, train_logistic,
    ProbeParams,
};
use crate::rng::Rng;
use crate::synthgen::{gen_texture_dataset, TextureClip, TextureSpec};
use crate::tensor::{bcthw, generic, Tensor};
use crate::wavelet::{wtcr_forward, DEFAULT_LEVELS};

/// Which branch supplies the probe's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Wtcr,
    Backbone,
    Fused,
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wtcr" => Ok(FeatureSource::Wtcr),
            "backbone" => Ok(FeatureSource::Backbone),
            "fused" => Ok(FeatureSource::Fused),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature source '{other}' (expected wtcr, backbone, or fused)"
            ))),
        }
    }
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PROBE: u64 = 3;

/// Full configuration of the texture-probe experiment.
#[derive(Debug, Clone)]
pub struct TextureProbeConfig {
    pub spec: TextureSpec,
    pub feature_source: FeatureSource,
    pub model_seed: u64,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub probe: ProbeParams,
    pub shuffle_labels: bool,
}

impl TextureProbeConfig {
    /// The pinned experiment: WTCR features on the pinned texture dataset.
    pub fn pinned() -> Self {
        TextureProbeConfig {
            spec: TextureSpec::pinned(),
            feature_source: FeatureSource::Wtcr,
            model_seed: 7,
            split_seed: 42,
            test_fraction: 0.3,
            probe: ProbeParams::defaults(),
            shuffle_labels: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureProbeReport {
    pub feature_source: FeatureSource,
    pub shuffled_labels: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub train_metrics: MetricsReport,
    pub test_metrics: MetricsReport,
    pub test_balanced_accuracy: f64,
    /// Per-epoch training loss, entry 0 is the pre-training loss.
    pub losses: Vec<f64>,
    #[serde(skip_serializing, skip_deserializing)]
    pub trained: Option<TrainedProbe>,
}

/// Trained weights plus the standardizer needed to apply them.
#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub params: ProbeParams,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Pooled per-clip features from the chosen branch, one row per clip.
pub fn extract_features(
    clips: &[TextureClip],
    source: FeatureSource,
    model: &ModelParams,
) -> Result<Tensor> {
    if clips.is_empty() {
        return Err(Error::Precondition("no clips to featurize".into()));
    }
    let c_f = model.shape.c_f;
    let mut rows = Vec::with_capacity(clips.len() * c_f);
    for clip in clips {
        let d = clip.clip.dims();
        if d.len() != 4 {
            return Err(Error::Shape(format!(
                "dataset clip {} has dims {:?}, expected (C, T, H, W)",
                clip.video_id, d
            )));
        }
        let clip5 = clip
            .clip
            .reshape(&[1, d[0], d[1], d[2], d[3]], &bcthw())?;
        let branch = match source {
            FeatureSource::Wtcr => wtcr_forward(&clip5, &model.wtcr)?,
            FeatureSource::Backbone => backbone_forward(&clip5, &model.backbone)?,
            FeatureSource::Fused => {
                let f1 = backbone_forward(&clip5, &model.backbone)?;
                let frame_features =
                    provider_encode(&clip5, &model.stub_provider(), &model.shape)?;
                let f2 = nam_forward(
                    &frame_features,
                    &model.nam_bn,
                    &model.nam_cfg,
                    BnMode::Inference,
                )?;
                let f3 = wtcr_forward(&clip5, &model.wtcr)?;
                pyramid_fuse(&f1, &f2, &f3, &model.fusion)?
            }
        };
        let pooled = pool_features(&branch)?;
        rows.extend_from_slice(pooled.data());
    }
    Tensor::from_vec(rows, &[clips.len(), c_f], &generic(2))
}

fn gather_rows(features: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let d = features.dims();
    let dim = d[1];
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&features.data()[i * dim..(i + 1) * dim]);
    }
    Tensor::from_vec(out, &[idx.len(), dim], &generic(2))
}

/// Run the full texture-probe experiment.
pub fn run_texture_probe(cfg: &TextureProbeConfig) -> Result<TextureProbeReport> {
    let clips = gen_texture_dataset(&cfg.spec)?;

    let mut labels: Vec<u8> = clips.iter().map(|c| c.label).collect();
    if cfg.shuffle_labels {
        Rng::derive(cfg.split_seed, STREAM_SHUFFLE).shuffle(&mut labels);
    }

    let patients: Vec<(String, u8)> = clips
        .iter()
        .zip(&labels)
        .map(|(c, &l)| (c.patient_id.clone(), l))
        .collect();
    let (train_patients, test_patients) = holdout_split(
        &patients,
        cfg.test_fraction,
        &mut Rng::derive(cfg.split_seed, STREAM_SPLIT),
    )?;
    let train_set: HashSet<&str> = train_patients.iter().map(|s| s.as_str()).collect();
    let test_set: HashSet<&str> = test_patients.iter().map(|s| s.as_str()).collect();
    let train_idx: Vec<usize> = clips
        .iter()
        .enumerate()
        .filter(|(_, c)| train_set.contains(c.patient_id.as_str()))
        .map(|(i, _)| i)
        .collect();
    let test_idx: Vec<usize> = clips
        .iter()
        .enumerate()
        .filter(|(_, c)| test_set.contains(c.patient_id.as_str()))
        .map(|(i, _)| i)
        .collect();

    let shape = PipelineShape {
        c_in: cfg.spec.c_in,
        t: cfg.spec.t,
        h: cfg.spec.h,
        w: cfg.spec.w,
        ..PipelineShape::desk()
    };
    let model = ModelParams::seeded(shape, DEFAULT_LEVELS, cfg.model_seed)?;
    let features = extract_features(&clips, cfg.feature_source, &model)?;

    let train_features = gather_rows(&features, &train_idx)?;
    let test_features = gather_rows(&features, &test_idx)?;
    let train_labels: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
    let test_labels: Vec<u8> = test_idx.iter().map(|&i| labels[i]).collect();

    let (mean, std) = fit_standardizer(&train_features)?;
    let train_std = apply_standardizer(&train_features, &mean, &std)?;
    let test_std = apply_standardizer(&test_features, &mean, &std)?;

    let (trained, losses) = train_logistic(
        &train_std,
        &train_labels,
        cfg.probe.clone(),
        &mut Rng::derive(cfg.split_seed, STREAM_PROBE),
    )?;
    let train_metrics = evaluate_probe(&trained, &train_std, &train_labels)?;
    let test_metrics = evaluate_probe(&trained, &test_std, &test_labels)?;
    let balanced = test_metrics.balanced_accuracy();

    Ok(TextureProbeReport {
        feature_source: cfg.feature_source,
        shuffled_labels: cfg.shuffle_labels,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        train_metrics,
        test_metrics,
        test_balanced_accuracy: balanced,
        losses,
        trained: Some(TrainedProbe {
            params: trained,
            mean,
            std,
        }),
    })
}
