//! Evaluation protocol: six classification metrics, bootstrap confidence
//! intervals, patient-level splits, and clip-to-video aggregation.
//!
//! Confusion-matrix metrics are computed at a fixed threshold (predicted
//! positive iff score >= threshold). AUC is the Mann-Whitney rank statistic:
//! the fraction of (positive, negative) pairs ordered correctly, ties counted
//! as 1/2. Ratios with a zero denominator are reported as 0 and listed in the
//! report's `undefined` field so tables stay printable.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One video-level prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub patient_id: String,
    /// 0 = benign, 1 = malignant.
    pub label: u8,
    /// Malignant probability in `[0, 1]`.
    pub score: f64,
}

/// One clip-level prediction as written by the forward pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub video_id: String,
    pub clip_index: usize,
    pub logits: [f32; 2],
    pub prob_malignant: f64,
}

/// Malignant probability from two-class logits: softmax component 1.
pub fn malignant_probability(logit_benign: f32, logit_malignant: f32) -> f64 {
    1.0 / (1.0 + ((logit_benign as f64) - (logit_malignant as f64)).exp())
}

/// The six metrics plus confusion counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1: f64,
    pub auc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.sensitivity + self.specificity)
    }
}

/// Mean clip probability as the video score.
pub fn aggregate_clips(
    video_id: &str,
    patient_id: &str,
    label: u8,
    clip_probs: &[f64],
) -> Result<Prediction> {
    if clip_probs.is_empty() {
        return Err(Error::Precondition(format!(
            "video {video_id}: no clip probabilities to aggregate"
        )));
    }
    let score = clip_probs.iter().sum::<f64>() / clip_probs.len() as f64;
    Ok(Prediction {
        video_id: video_id.to_string(),
        patient_id: patient_id.to_string(),
        label,
        score,
    })
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion matrix at `threshold` plus the six metrics.
pub fn compute_metrics(preds: &[Prediction], threshold: f64) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::Precondition("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for p in preds {
        let positive = p.score >= threshold;
        match (p.label, positive) {
            (1, true) => tp += 1,
            (1, false) => fn_ += 1,
            (0, true) => fp += 1,
            (0, false) => tn += 1,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "video {}: label must be 0 or 1",
                    p.video_id
                )))
            }
        }
    }
    let mut undefined = Vec::new();
    let acc = ratio(tp + tn, tp + fp + tn + fn_, "acc", &mut undefined);
    let precision = ratio(tp, tp + fp, "precision", &mut undefined);
    let sensitivity = ratio(tp, tp + fn_, "sensitivity", &mut undefined);
    let specificity = ratio(tn, tn + fp, "specificity", &mut undefined);
    let f1 = if precision + sensitivity == 0.0 {
        undefined.push("f1".to_string());
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    let auc = match auc_rank(preds) {
        Some(v) => v,
        None => {
            undefined.push("auc".to_string());
            0.0
        }
    };
    Ok(MetricsReport {
        acc,
        f1,
        auc,
        precision,
        sensitivity,
        specificity,
        tp,
        fp,
        tn,
        fn_,
        undefined,
    })
}

/// Rank-based AUC with average ranks for ties; `None` when a class is absent.
fn auc_rank(preds: &[Prediction]) -> Option<f64> {
    let n_pos = preds.iter().filter(|p| p.label == 1).count();
    let n_neg = preds.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut indexed: Vec<(f64, u8)> = preds.iter().map(|p| (p.score, p.label)).collect();
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < indexed.len() {
        let mut j = i;
        while j < indexed.len() && indexed[j].0 == indexed[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &indexed[i..j] {
            if item.1 == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Per-metric bootstrap summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiEntry {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub n_resamples: usize,
    pub level: f64,
    pub acc: CiEntry,
    pub f1: CiEntry,
    pub auc: CiEntry,
    pub precision: CiEntry,
    pub sensitivity: CiEntry,
    pub specificity: CiEntry,
}

/// Percentile bootstrap over videos: resample predictions with replacement
/// `n` times, report per-metric mean over resamples and the central
/// `level` interval (linear-interpolation quantiles).
pub fn bootstrap_ci(
    preds: &[Prediction],
    n: usize,
    level: f64,
    threshold: f64,
    rng: &mut Rng,
) -> Result<BootstrapCi> {
    if preds.len() < 2 {
        return Err(Error::Precondition(
            "bootstrap requires at least 2 predictions".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap needs n >= 1".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }
    let m = preds.len();
    let mut samples: [Vec<f64>; 6] = Default::default();
    let mut resample = Vec::with_capacity(m);
    for _ in 0..n {
        resample.clear();
        for _ in 0..m {
            resample.push(preds[rng.below(m as u64) as usize].clone());
        }
        let r = compute_metrics(&resample, threshold)?;
        for (slot, v) in samples.iter_mut().zip([
            r.acc,
            r.f1,
            r.auc,
            r.precision,
            r.sensitivity,
            r.specificity,
        ]) {
            slot.push(v);
        }
    }
    let alpha = (1.0 - level) / 2.0;
    let mut entries = samples.iter_mut().map(|values| {
        values.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let lower = quantile(values, alpha);
        let upper = quantile(values, 1.0 - alpha);
        CiEntry {
            mean,
            lower,
            upper,
            half_width: (upper - lower) / 2.0,
        }
    });
    Ok(BootstrapCi {
        n_resamples: n,
        level,
        acc: entries.next().expect("six metrics"),
        f1: entries.next().expect("six metrics"),
        auc: entries.next().expect("six metrics"),
        precision: entries.next().expect("six metrics"),
        sensitivity: entries.next().expect("six metrics"),
        specificity: entries.next().expect("six metrics"),
    })
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Patient-level k-fold partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Vec<String>>,
}

impl FoldAssignment {
    /// Map from patient id to fold index.
    pub fn fold_of(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (i, fold) in self.folds.iter().enumerate() {
            for p in fold {
                map.insert(p.as_str(), i);
            }
        }
        map
    }
}

/// Stratified patient-level k-fold split. Each class is shuffled and dealt
/// round-robin; the second class starts dealing where the first left off so
/// fold sizes stay within one patient of each other, and per-fold class
/// counts stay within one of each other.
pub fn kfold_split(
    patients: &[(String, u8)],
    k: usize,
    rng: &mut Rng,
) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if patients.len() < k {
        return Err(Error::Precondition(format!(
            "{} patients cannot fill {k} folds",
            patients.len()
        )));
    }
    let unique: HashSet<&str> = patients.iter().map(|(p, _)| p.as_str()).collect();
    if unique.len() != patients.len() {
        return Err(Error::InvalidArgument("duplicate patient ids".into()));
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (pid, label) in patients {
        if *label > 1 {
            return Err(Error::InvalidArgument(format!(
                "patient {pid}: label must be 0 or 1"
            )));
        }
        by_class[*label as usize].push(pid.as_str());
    }
    let mut folds = vec![Vec::new(); k];
    let mut next_fold = 0usize;
    for class in &mut by_class {
        rng.shuffle(class);
        for pid in class.iter() {
            folds[next_fold].push(pid.to_string());
            next_fold = (next_fold + 1) % k;
        }
    }
    Ok(FoldAssignment { folds })
}

/// Stratified patient-level holdout: roughly `test_fraction` of each class
/// goes to the test side, at least one patient per class on each side.
pub fn holdout_split(
    patients: &[(String, u8)],
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "test fraction must be in (0, 1)".into(),
        ));
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (pid, label) in patients {
        by_class[(*label).min(1) as usize].push(pid.as_str());
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in &mut by_class {
        if class.is_empty() {
            continue;
        }
        if class.len() < 2 {
            return Err(Error::Precondition(
                "holdout split needs at least 2 patients per present class".into(),
            ));
        }
        rng.shuffle(class);
        let n_test = ((class.len() as f64 * test_fraction).round() as usize)
            .clamp(1, class.len() - 1);
        for (i, pid) in class.iter().enumerate() {
            if i < n_test {
                test.push(pid.to_string());
            } else {
                train.push(pid.to_string());
            }
        }
    }
    Ok((train, test))
}

/// Epoch index sequence with an exact 1:1 class ratio: every majority item
/// once, every minority item once plus uniform redraws up to the majority
/// count, shuffled.
pub fn balanced_pairs(labels: &[u8], rng: &mut Rng) -> Result<Vec<usize>> {
    let pos: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| i)
        .collect();
    let neg: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 0)
        .map(|(i, _)| i)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Precondition(
            "balanced sampling needs both classes present".into(),
        ));
    }
    let target = pos.len().max(neg.len());
    let mut out = Vec::with_capacity(2 * target);
    for class in [&pos, &neg] {
        out.extend_from_slice(class);
        for _ in class.len()..target {
            out.push(class[rng.below(class.len() as u64) as usize]);
        }
    }
    rng.shuffle(&mut out);
    Ok(out)
}

/// Read the clip-prediction JSON-Lines format.
pub fn read_clip_predictions(path: impl AsRef<Path>) -> Result<Vec<ClipPrediction>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: ClipPrediction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_clip_predictions(
    path: impl AsRef<Path>,
    preds: &[ClipPrediction],
) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
