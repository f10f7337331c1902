//! Logistic-regression probe over pooled branch features.
//!
//! Full-batch gradient descent on the binary cross-entropy with L2 weight
//! decay (bias excluded from the penalty). The loss and gradient are
//! evaluated entirely in f64 — the per-example loss uses the stable form
//! `softplus(z) - y*z` — so the analytic gradient can be checked against
//! central finite differences to tight tolerances. Trained weights are
//! rounded to f32 at the end.

use crate::error::{Error, Result};
use crate::evalkit::{compute_metrics, MetricsReport, Prediction};
use crate::ops::global_avg_pool;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Probe weights plus training hyperparameters.
#[derive(Debug, Clone)]
pub struct ProbeParams {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub learning_rate: f32,
    pub epochs: usize,
    pub l2: f32,
}

pub const DEFAULT_LEARNING_RATE: f32 = 0.1;
pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_L2: f32 = 1e-4;

impl ProbeParams {
    /// Default hyperparameters with empty weights; [`train_logistic`] draws
    /// the initial weights from its rng.
    pub fn defaults() -> Self {
        ProbeParams {
            weights: Vec::new(),
            bias: 0.0,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            l2: DEFAULT_L2,
        }
    }
}

/// Global average over `(T, H', W')`: `(B, C, T, H', W')` to `(B, C)`.
pub fn pool_features(branch_output: &Tensor) -> Result<Tensor> {
    global_avg_pool(branch_output)
}

fn check_features(features: &Tensor, labels: &[u8]) -> Result<(usize, usize)> {
    let d = features.dims();
    if d.len() != 2 {
        return Err(Error::Shape(format!(
            "probe features must be (N, D), got {:?}",
            d
        )));
    }
    if d[0] != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} labels",
            d[0],
            labels.len()
        )));
    }
    Ok((d[0], d[1]))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Regularized mean cross-entropy at `(w, b)`, in f64.
pub fn logistic_loss(features: &Tensor, labels: &[u8], w: &[f64], b: f64, l2: f64) -> f64 {
    let (n, d) = (features.dims()[0], features.dims()[1]);
    assert_eq!(w.len(), d, "weight dimension mismatch");
    let x = features.data();
    let mut total = 0.0f64;
    for i in 0..n {
        let mut z = b;
        for j in 0..d {
            z += w[j] * x[i * d + j] as f64;
        }
        total += softplus(z) - labels[i] as f64 * z;
    }
    let penalty = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    total / n as f64 + penalty
}

/// Analytic gradient of [`logistic_loss`] with respect to `(w, b)`.
pub fn logistic_gradient(
    features: &Tensor,
    labels: &[u8],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let (n, d) = (features.dims()[0], features.dims()[1]);
    assert_eq!(w.len(), d, "weight dimension mismatch");
    let x = features.data();
    let mut grad_w = vec![0.0f64; d];
    let mut grad_b = 0.0f64;
    for i in 0..n {
        let mut z = b;
        for j in 0..d {
            z += w[j] * x[i * d + j] as f64;
        }
        let residual = 1.0 / (1.0 + (-z).exp()) - labels[i] as f64;
        for j in 0..d {
            grad_w[j] += residual * x[i * d + j] as f64;
        }
        grad_b += residual;
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..d {
        grad_w[j] = grad_w[j] * inv_n + l2 * w[j];
    }
    (grad_w, grad_b * inv_n)
}

/// Full-batch gradient descent. Initial weights are drawn uniformly from
/// `[-0.01, 0.01)` unless `params.weights` already has the right dimension
/// (warm start). Returns the trained parameters and the per-epoch loss
/// trace (including the initial loss at entry 0).
pub fn train_logistic(
    features: &Tensor,
    labels: &[u8],
    params: ProbeParams,
    rng: &mut Rng,
) -> Result<(ProbeParams, Vec<f64>)> {
    let (n, d) = check_features(features, labels)?;
    if n < 2 {
        return Err(Error::Precondition("probe needs at least 2 examples".into()));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::Precondition(
            "probe training needs both classes present".into(),
        ));
    }

    let mut w: Vec<f64> = if params.weights.len() == d {
        params.weights.iter().map(|&v| v as f64).collect()
    } else if params.weights.is_empty() {
        (0..d).map(|_| rng.uniform(-0.01, 0.01) as f64).collect()
    } else {
        return Err(Error::Shape(format!(
            "warm-start weights have dim {}, features have {d}",
            params.weights.len()
        )));
    };
    let mut b = params.bias as f64;
    let lr = params.learning_rate as f64;
    let l2 = params.l2 as f64;

    let mut losses = Vec::with_capacity(params.epochs + 1);
    losses.push(logistic_loss(features, labels, &w, b, l2));
    for _ in 0..params.epochs {
        let (gw, gb) = logistic_gradient(features, labels, &w, b, l2);
        for j in 0..d {
            w[j] -= lr * gw[j];
        }
        b -= lr * gb;
        let loss = logistic_loss(features, labels, &w, b, l2);
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(
                "probe training diverged to a non-finite loss".into(),
            ));
        }
        losses.push(loss);
    }

    Ok((
        ProbeParams {
            weights: w.iter().map(|&v| v as f32).collect(),
            bias: b as f32,
            ..params
        },
        losses,
    ))
}

/// Sigmoid scores of the probe on `features`.
pub fn probe_scores(params: &ProbeParams, features: &Tensor) -> Result<Vec<f64>> {
    let d = features.dims();
    if d.len() != 2 || d[1] != params.weights.len() {
        return Err(Error::Shape(format!(
            "probe of dim {} applied to features {:?}",
            params.weights.len(),
            d
        )));
    }
    let x = features.data();
    Ok((0..d[0])
        .map(|i| {
            let mut z = params.bias as f64;
            for j in 0..d[1] {
                z += params.weights[j] as f64 * x[i * d[1] + j] as f64;
            }
            1.0 / (1.0 + (-z).exp())
        })
        .collect())
}

/// Score the probe with the standard metric set at threshold 0.5.
pub fn evaluate_probe(
    params: &ProbeParams,
    features: &Tensor,
    labels: &[u8],
) -> Result<MetricsReport> {
    check_features(features, labels)?;
    let scores = probe_scores(params, features)?;
    let preds: Vec<Prediction> = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &label))| Prediction {
            video_id: format!("ex{i}"),
            patient_id: format!("ex{i}"),
            label,
            score,
        })
        .collect();
    compute_metrics(&preds, 0.5)
}

/// Per-dimension mean and standard deviation of a feature matrix.
pub fn fit_standardizer(features: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = features.dims();
    if d.len() != 2 {
        return Err(Error::Shape("standardizer needs (N, D) features".into()));
    }
    let (n, dim) = (d[0], d[1]);
    let x = features.data();
    let mut mean = vec![0.0f64; dim];
    let mut std = vec![0.0f64; dim];
    for j in 0..dim {
        let mut sum = 0.0f64;
        for i in 0..n {
            sum += x[i * dim + j] as f64;
        }
        mean[j] = sum / n as f64;
        let mut sq = 0.0f64;
        for i in 0..n {
            let v = x[i * dim + j] as f64 - mean[j];
            sq += v * v;
        }
        let s = (sq / n as f64).sqrt();
        std[j] = if s > 0.0 { s } else { 1.0 };
    }
    Ok((mean, std))
}

/// Apply a fitted standardizer to a feature matrix.
pub fn apply_standardizer(features: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let d = features.dims();
    if d.len() != 2 || d[1] != mean.len() || d[1] != std.len() {
        return Err(Error::Shape("standardizer dimension mismatch".into()));
    }
    let (n, dim) = (d[0], d[1]);
    let mut out = vec![0.0f32; n * dim];
    for i in 0..n {
        for j in 0..dim {
            out[i * dim + j] =
                ((features.data()[i * dim + j] as f64 - mean[j]) / std[j]) as f32;
        }
    }
    Tensor::from_vec(out, d, features.roles())
}

/// On-disk probe description referencing the weight blob.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeManifest {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub weights_file: String,
    pub bias: f32,
    pub learning_rate: f32,
    pub epochs: usize,
    pub l2: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardizer_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardizer_std: Option<Vec<f64>>,
}

const PROBE_FORMAT: &str = "trivid-probe";
pub const PROBE_MANIFEST_FILE: &str = "probe.json";

/// Write the weight blob plus manifest into `dir`; returns the manifest path.
pub fn save_probe(
    params: &ProbeParams,
    dir: impl AsRef<std::path::Path>,
    feature_source: Option<String>,
    standardizer: Option<(&[f64], &[f64])>,
) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let weights_file = "probe_weights.tnsr".to_string();
    let weights = Tensor::from_vec(
        params.weights.clone(),
        &[params.weights.len().max(1)],
        &crate::tensor::generic(1),
    )?;
    weights.save(dir.join(&weights_file))?;
    let manifest = ProbeManifest {
        format: PROBE_FORMAT.to_string(),
        version: 1,
        dim: params.weights.len(),
        weights_file,
        bias: params.bias,
        learning_rate: params.learning_rate,
        epochs: params.epochs,
        l2: params.l2,
        feature_source,
        standardizer_mean: standardizer.map(|(m, _)| m.to_vec()),
        standardizer_std: standardizer.map(|(_, s)| s.to_vec()),
    };
    let path = dir.join(PROBE_MANIFEST_FILE);
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?,
    )?;
    Ok(path)
}

/// Load a probe saved by [`save_probe`].
pub fn load_probe(
    manifest_path: impl AsRef<std::path::Path>,
) -> Result<(ProbeParams, ProbeManifest)> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: ProbeManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    if manifest.format != PROBE_FORMAT {
        return Err(Error::Format(format!(
            "unexpected probe format '{}'",
            manifest.format
        )));
    }
    let dir = manifest_path
        .parent()
        .unwrap_or_else(|| std::path::Path::new("."));
    let weights = Tensor::load(dir.join(&manifest.weights_file))?;
    if weights.len() != manifest.dim {
        return Err(Error::Format(format!(
            "weight blob has {} entries, manifest records {}",
            weights.len(),
            manifest.dim
        )));
    }
    Ok((
        ProbeParams {
            weights: weights.data().to_vec(),
            bias: manifest.bias,
            learning_rate: manifest.learning_rate,
            epochs: manifest.epochs,
            l2: manifest.l2,
        },
        manifest,
    ))
}

/// Training log as JSON Lines: `{"epoch": i, "loss": v}` per entry, epoch 0
/// being the pre-training loss.
pub fn write_training_log(path: impl AsRef<std::path::Path>, losses: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(w, "{{\"epoch\":{epoch},\"loss\":{loss}}}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{bcthw, generic};

    fn feat(rows: Vec<Vec<f32>>) -> Tensor {
        let n = rows.len();
        let d = rows[0].len();
        Tensor::from_vec(rows.into_iter().flatten().collect(), &[n, d], &generic(2)).unwrap()
    }

    #[test]
    fn pooling_constants_and_symmetry() {
        let x = Tensor::from_vec(vec![0.5; 2 * 3 * 4], &[1, 1, 2, 3, 4], &bcthw()).unwrap();
        let pooled = pool_features(&x).unwrap();
        assert_eq!(pooled.dims(), &[1, 1]);
        assert!((pooled.data()[0] - 0.5).abs() < 1e-7);

        let zero = Tensor::zeros(&[2, 3, 1, 2, 2], &bcthw()).unwrap();
        assert!(pool_features(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separable_1d_reaches_perfect_training_accuracy() {
        let features = feat((0..20).map(|i| vec![if i < 10 { -1.0 } else { 1.0 }]).collect());
        let labels: Vec<u8> = (0..20).map(|i| if i < 10 { 0 } else { 1 }).collect();
        let (trained, losses) =
            train_logistic(&features, &labels, ProbeParams::defaults(), &mut Rng::new(1))
                .unwrap();
        let report = evaluate_probe(&trained, &features, &labels).unwrap();
        assert_eq!(report.acc, 1.0);
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(trained.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn loss_is_non_increasing_on_random_fixture() {
        let mut rng = Rng::new(2);
        let features = Tensor::seeded_uniform(&[40, 5], &generic(2), -1.0, 1.0, &mut rng).unwrap();
        let labels: Vec<u8> = (0..40).map(|_| rng.below(2) as u8).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            return;
        }
        let (_, losses) =
            train_logistic(&features, &labels, ProbeParams::defaults(), &mut rng).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn shuffled_labels_score_near_chance() {
        // Null control: features carry signal for the TRUE labels, but we
        // train and evaluate against shuffled ones.
        let mut rng = Rng::new(3);
        let n = 200;
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as u8;
            let center = if y == 1 { 1.0 } else { -1.0 };
            rows.push(vec![center + rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 1.0)]);
            labels.push(y);
        }
        rng.shuffle(&mut labels);
        let features = feat(rows);
        let (trained, _) =
            train_logistic(&features, &labels, ProbeParams::defaults(), &mut rng).unwrap();
        let report = evaluate_probe(&trained, &features, &labels).unwrap();
        assert!(
            (0.35..=0.65).contains(&report.acc),
            "shuffled-label accuracy {}",
            report.acc
        );
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = Rng::new(4);
        for _ in 0..5 {
            let n = 10 + rng.below(20) as usize;
            let d = 2 + rng.below(6) as usize;
            let features =
                Tensor::seeded_uniform(&[n, d], &generic(2), -2.0, 2.0, &mut rng).unwrap();
            let labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0) as f64).collect();
            let b = rng.uniform(-1.0, 1.0) as f64;
            let l2 = 1e-4;

            let (gw, gb) = logistic_gradient(&features, &labels, &w, b, l2);
            let h = 1e-3;
            for j in 0..d {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (logistic_loss(&features, &labels, &wp, b, l2)
                    - logistic_loss(&features, &labels, &wm, b, l2))
                    / (2.0 * h);
                let rel = (gw[j] - fd).abs() / gw[j].abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4, "dim {j}: analytic {} vs fd {fd}", gw[j]);
            }
            let fd_b = (logistic_loss(&features, &labels, &w, b + h, l2)
                - logistic_loss(&features, &labels, &w, b - h, l2))
                / (2.0 * h);
            let rel = (gb - fd_b).abs() / gb.abs().max(fd_b.abs()).max(1e-8);
            assert!(rel <= 1e-4);
        }
    }

    #[test]
    fn zero_probe_scores_half_and_auc_half() {
        let features = feat(vec![vec![1.0, -2.0], vec![-3.0, 0.5], vec![2.0, 2.0]]);
        let labels = vec![1, 0, 1];
        let params = ProbeParams {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            ..ProbeParams::defaults()
        };
        let scores = probe_scores(&params, &features).unwrap();
        assert!(scores.iter().all(|&s| s == 0.5));
        let report = evaluate_probe(&params, &features, &labels).unwrap();
        assert_eq!(report.auc, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let features = feat(vec![vec![1.0], vec![2.0]]);
        assert!(train_logistic(&features, &[1, 1], ProbeParams::defaults(), &mut Rng::new(1))
            .is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let features = feat(vec![vec![0.3, 1.0], vec![-0.5, 0.2], vec![0.9, -1.0]]);
        let labels = vec![1, 0, 1];
        let params = ProbeParams {
            weights: vec![0.4, -0.2],
            bias: 0.1,
            ..ProbeParams::defaults()
        };
        let a = evaluate_probe(&params, &features, &labels).unwrap();
        let b = evaluate_probe(&params, &features, &labels).unwrap();
        assert_eq!(a.acc, b.acc);
        assert_eq!(a.auc, b.auc);
    }

    #[test]
    fn probe_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = ProbeParams {
            weights: vec![0.5, -1.25, 2.0],
            bias: 0.75,
            ..ProbeParams::defaults()
        };
        let mean = vec![1.0, 2.0, 3.0];
        let std = vec![0.5, 0.5, 0.5];
        let path = save_probe(
            &params,
            dir.path(),
            Some("wtcr".into()),
            Some((&mean, &std)),
        )
        .unwrap();
        let (back, manifest) = load_probe(&path).unwrap();
        assert_eq!(back.weights, params.weights);
        assert_eq!(back.bias, params.bias);
        assert_eq!(manifest.standardizer_mean.unwrap(), mean);
        assert_eq!(manifest.feature_source.as_deref(), Some("wtcr"));
    }

    #[test]
    fn training_log_is_valid_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_training_log(&path, &[0.7, 0.6, 0.55]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let v: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(v["epoch"], 2);
        assert!((v["loss"].as_f64().unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let features = feat(vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 50.0]]);
        let (mean, std) = fit_standardizer(&features).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-9);
        let z = apply_standardizer(&features, &mean, &std).unwrap();
        let (m2, s2) = fit_standardizer(&z).unwrap();
        assert!(m2.iter().all(|&m| m.abs() < 1e-6));
        assert!(s2.iter().all(|&s| (s - 1.0).abs() < 1e-5));
    }
}
