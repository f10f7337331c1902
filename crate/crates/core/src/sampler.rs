//! Heuristic clip sampling over variable-length videos.
//!
//! A video of `L` frames is covered by `N` clips of `T` frames each, taken at
//! a fixed stride of `t` frames with cyclic wrap-around:
//! `frame(i, j) = (s_i + j*t) mod L`. The start points `s_i` are chosen by one
//! of three rules depending on how `L` compares to the clip footprint
//! `(T-1)*t`:
//!
//! * long videos (`L >= N + (T-1)*t`): the usable start range is divided into
//!   `N` strata of width `delta = floor((L - (T-1)*t) / N)` and each start is
//!   drawn from its own stratum, giving full coverage with no overlap and no
//!   wrap;
//! * medium videos (`(T-1)*t <= L < N + (T-1)*t`): the first `L - (T-1)*t`
//!   starts are the exhaustive prefix `0, 1, 2, ...`; the rest are drawn
//!   uniformly from the tail `[L-(T-1)*t, L-1]`;
//! * short videos (`L < (T-1)*t`): every start is uniform over `[0, L-1]` and
//!   every clip wraps.
//!
//! All indices are 0-based. Stratum draws use the half-open range
//! `{0, ..., delta-1}` so starts are strictly increasing and strata stay
//! disjoint.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Clip sampling configuration: `N` clips per video, `T` frames per clip,
/// stride `t` frames between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(rename = "N")]
    pub clips_per_video: usize,
    #[serde(rename = "T")]
    pub clip_len: usize,
    #[serde(rename = "t")]
    pub stride: usize,
}

impl SamplerConfig {
    pub fn new(clips_per_video: usize, clip_len: usize, stride: usize) -> Result<Self> {
        if clips_per_video == 0 || clip_len == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "sampler config requires N, T, t all >= 1".into(),
            ));
        }
        Ok(SamplerConfig {
            clips_per_video,
            clip_len,
            stride,
        })
    }

    /// Frame span of one clip before wrap: `(T - 1) * t`.
    pub fn footprint(&self) -> usize {
        (self.clip_len - 1) * self.stride
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.clips_per_video, self.clip_len, self.stride).map(|_| ())
    }
}

/// Per-video metadata: frame count, ownership, label, and lesion-relevant
/// frame annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub patient_id: String,
    /// 0 = benign, 1 = malignant.
    pub label: u8,
    pub num_frames: usize,
    /// Sorted, deduplicated frame indices in `[0, num_frames)`.
    pub lesion_frames: Vec<usize>,
}

impl VideoMeta {
    pub fn validate(&mut self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "video {}: num_frames must be >= 1",
                self.video_id
            )));
        }
        if self.label > 1 {
            return Err(Error::InvalidArgument(format!(
                "video {}: label must be 0 or 1, got {}",
                self.video_id, self.label
            )));
        }
        self.lesion_frames.sort_unstable();
        self.lesion_frames.dedup();
        if let Some(&last) = self.lesion_frames.last() {
            if last >= self.num_frames {
                return Err(Error::InvalidArgument(format!(
                    "video {}: lesion frame {} outside [0, {})",
                    self.video_id, last, self.num_frames
                )));
            }
        }
        Ok(())
    }
}

/// Video-length regime selecting the start-point rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VideoCase {
    Long,
    Medium,
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Heuristic,
    Random,
}

/// The sampled clips for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPlan {
    pub video_id: String,
    pub strategy: Strategy,
    pub case: VideoCase,
    pub starts: Vec<usize>,
    pub frames: Vec<Vec<usize>>,
    pub config: SamplerConfig,
}

/// The `T` frame indices of the clip starting at `s`, with cyclic wrap.
pub fn clip_frames(s: usize, cfg: &SamplerConfig, num_frames: usize) -> Result<Vec<usize>> {
    cfg.validate()?;
    if s >= num_frames {
        return Err(Error::Precondition(format!(
            "clip start {s} outside [0, {num_frames})"
        )));
    }
    Ok((0..cfg.clip_len)
        .map(|j| (s + j * cfg.stride) % num_frames)
        .collect())
}

/// Length regime of a video under `cfg`.
pub fn case_of(num_frames: usize, cfg: &SamplerConfig) -> VideoCase {
    let footprint = cfg.footprint();
    if num_frames >= cfg.clips_per_video + footprint {
        VideoCase::Long
    } else if num_frames >= footprint {
        VideoCase::Medium
    } else {
        VideoCase::Short
    }
}

/// Stratum width `delta` for long videos. Errors outside the long case.
pub fn stratum_width(num_frames: usize, cfg: &SamplerConfig) -> Result<usize> {
    cfg.validate()?;
    if case_of(num_frames, cfg) != VideoCase::Long {
        return Err(Error::Precondition(format!(
            "stratum_width requires a long video; L={num_frames} is {:?}",
            case_of(num_frames, cfg)
        )));
    }
    Ok((num_frames - cfg.footprint()) / cfg.clips_per_video)
}

/// Heuristic start points for all `N` clips of a video.
pub fn plan_starts(num_frames: usize, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    cfg.validate()?;
    if num_frames == 0 {
        return Err(Error::InvalidArgument("num_frames must be >= 1".into()));
    }
    let n = cfg.clips_per_video;
    match case_of(num_frames, cfg) {
        VideoCase::Long => {
            let delta = stratum_width(num_frames, cfg)?;
            Ok((0..n)
                .map(|i| i * delta + rng.below(delta as u64) as usize)
                .collect())
        }
        VideoCase::Medium => {
            let span = num_frames - cfg.footprint();
            let mut starts: Vec<usize> = (0..span.min(n)).collect();
            while starts.len() < n {
                starts.push(rng.int_range(span as i64, num_frames as i64 - 1) as usize);
            }
            Ok(starts)
        }
        VideoCase::Short => Ok((0..n)
            .map(|_| rng.below(num_frames as u64) as usize)
            .collect()),
    }
}

/// Build the full clip plan for one video under the given strategy.
pub fn sample_clips(
    meta: &VideoMeta,
    cfg: &SamplerConfig,
    strategy: Strategy,
    rng: &mut Rng,
) -> Result<ClipPlan> {
    cfg.validate()?;
    let starts = match strategy {
        Strategy::Heuristic => plan_starts(meta.num_frames, cfg, rng)?,
        Strategy::Random => (0..cfg.clips_per_video)
            .map(|_| rng.below(meta.num_frames as u64) as usize)
            .collect(),
    };
    let frames = starts
        .iter()
        .map(|&s| clip_frames(s, cfg, meta.num_frames))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipPlan {
        video_id: meta.video_id.clone(),
        strategy,
        case: case_of(meta.num_frames, cfg),
        starts,
        frames,
        config: *cfg,
    })
}

/// Lesion-coverage statistics over a batch of clip plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageStats {
    pub total_clips: usize,
    /// `histogram[k]` = number of clips containing exactly `k` lesion frames.
    pub histogram: Vec<usize>,
    /// Fraction of clips with zero lesion frames.
    pub background_fraction: f64,
    /// Fraction of clips with more than 3 lesion frames.
    pub gt3_fraction: f64,
}

/// Count lesion-relevant frames per clip across `plans`, looking annotations
/// up in `metas`. A frame counts if it is an exact member of the video's
/// lesion set.
pub fn coverage_report(plans: &[ClipPlan], metas: &[VideoMeta]) -> Result<CoverageStats> {
    let by_id: HashMap<&str, &VideoMeta> =
        metas.iter().map(|m| (m.video_id.as_str(), m)).collect();

    let max_len = plans
        .iter()
        .flat_map(|p| p.frames.iter().map(|f| f.len()))
        .max()
        .unwrap_or(0);
    let mut histogram = vec![0usize; max_len + 1];
    let mut total = 0usize;

    for plan in plans {
        let meta = by_id
            .get(plan.video_id.as_str())
            .ok_or_else(|| Error::UnknownVideo(plan.video_id.clone()))?;
        let lesions: HashSet<usize> = meta.lesion_frames.iter().copied().collect();
        for clip in &plan.frames {
            let count = clip.iter().filter(|f| lesions.contains(f)).count();
            histogram[count] += 1;
            total += 1;
        }
    }

    let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    let background = frac(histogram.first().copied().unwrap_or(0));
    let gt3: usize = histogram.iter().skip(4).sum();
    Ok(CoverageStats {
        total_clips: total,
        histogram,
        background_fraction: background,
        gt3_fraction: frac(gt3),
    })
}

/// Read the JSON-Lines annotation format: one `VideoMeta` object per line.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<VideoMeta>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut meta: VideoMeta = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        meta.validate().map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(meta);
    }
    Ok(out)
}

pub fn write_annotations(path: impl AsRef<Path>, metas: &[VideoMeta]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for m in metas {
        serde_json::to_writer(&mut w, m).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a JSON-Lines clip-plan file.
pub fn read_plans(path: impl AsRef<Path>) -> Result<Vec<ClipPlan>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let plan: ClipPlan = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(plan);
    }
    Ok(out)
}

pub fn write_plans(path: impl AsRef<Path>, plans: &[ClipPlan]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for p in plans {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, t_len: usize, stride: usize) -> SamplerConfig {
        SamplerConfig::new(n, t_len, stride).unwrap()
    }

    fn meta(id: &str, frames: usize, lesions: Vec<usize>) -> VideoMeta {
        let mut m = VideoMeta {
            video_id: id.into(),
            patient_id: format!("p-{id}"),
            label: 1,
            num_frames: frames,
            lesion_frames: lesions,
        };
        m.validate().unwrap();
        m
    }

    #[test]
    fn clip_frames_direct() {
        let c = cfg(4, 8, 8);
        assert_eq!(
            clip_frames(0, &c, 1000).unwrap(),
            vec![0, 8, 16, 24, 32, 40, 48, 56]
        );
    }

    #[test]
    fn clip_frames_wraps_cyclically() {
        let c = cfg(4, 8, 8);
        assert_eq!(
            clip_frames(60, &c, 64).unwrap(),
            vec![60, 4, 12, 20, 28, 36, 44, 52]
        );
    }

    #[test]
    fn clip_frames_single_frame_clip() {
        let c = cfg(1, 1, 3);
        assert_eq!(clip_frames(5, &c, 10).unwrap(), vec![5]);
    }

    #[test]
    fn clip_frames_start_out_of_range() {
        let c = cfg(4, 8, 8);
        assert!(clip_frames(64, &c, 64).is_err());
    }

    #[test]
    fn clip_frames_always_in_range_with_exact_length() {
        let mut rng = Rng::new(17);
        for _ in 0..500 {
            let c = cfg(
                1 + rng.below(6) as usize,
                1 + rng.below(12) as usize,
                1 + rng.below(12) as usize,
            );
            let num_frames = 1 + rng.below(300) as usize;
            let s = rng.below(num_frames as u64) as usize;
            let frames = clip_frames(s, &c, num_frames).unwrap();
            assert_eq!(frames.len(), c.clip_len);
            assert!(frames.iter().all(|&f| f < num_frames));
        }
    }

    #[test]
    fn case_boundaries() {
        let c = cfg(4, 8, 8);
        assert_eq!(case_of(60, &c), VideoCase::Long); // 60 = 4 + 56
        assert_eq!(case_of(59, &c), VideoCase::Medium);
        assert_eq!(case_of(56, &c), VideoCase::Medium);
        assert_eq!(case_of(55, &c), VideoCase::Short);
    }

    #[test]
    fn stratum_width_values() {
        let c = cfg(4, 8, 8);
        assert_eq!(stratum_width(200, &c).unwrap(), 36);
        assert_eq!(stratum_width(60, &c).unwrap(), 1);
        assert!(stratum_width(59, &c).is_err());
    }

    #[test]
    fn long_starts_lie_in_their_strata() {
        let c = cfg(4, 8, 8);
        for seed in 0..200 {
            let starts = plan_starts(200, &c, &mut Rng::new(seed)).unwrap();
            for (i, &s) in starts.iter().enumerate() {
                assert!(s >= i * 36 && s < (i + 1) * 36, "start {s} outside stratum {i}");
            }
            assert!(starts.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn long_clips_never_wrap() {
        let mut rng = Rng::new(99);
        for _ in 0..300 {
            let c = cfg(
                1 + rng.below(6) as usize,
                2 + rng.below(8) as usize,
                1 + rng.below(10) as usize,
            );
            let min_long = c.clips_per_video + c.footprint();
            let num_frames = min_long + rng.below(200) as usize;
            let plan_rng = &mut Rng::new(rng.next_u64());
            let starts = plan_starts(num_frames, &c, plan_rng).unwrap();
            for &s in &starts {
                let frames = clip_frames(s, &c, num_frames).unwrap();
                assert!(
                    frames.windows(2).all(|w| w[0] < w[1]),
                    "wrap in long case: {frames:?}"
                );
            }
        }
    }

    #[test]
    fn medium_prefix_is_exhaustive() {
        let c = cfg(4, 8, 8);
        // L=58: span = 2, first two starts are exactly {0, 1}.
        for seed in 0..100 {
            let starts = plan_starts(58, &c, &mut Rng::new(seed)).unwrap();
            assert_eq!(&starts[..2], &[0, 1]);
            assert!(starts[2..].iter().all(|&s| (2..=57).contains(&s)));
        }
    }

    #[test]
    fn short_starts_cover_valid_range_only() {
        let c = cfg(3, 8, 8);
        for seed in 0..100 {
            let starts = plan_starts(10, &c, &mut Rng::new(seed)).unwrap();
            assert_eq!(starts.len(), 3);
            assert!(starts.iter().all(|&s| s < 10));
        }
    }

    #[test]
    fn sample_clips_is_deterministic() {
        let c = cfg(4, 8, 8);
        let m = meta("v0", 200, vec![10, 11, 12]);
        let a = sample_clips(&m, &c, Strategy::Heuristic, &mut Rng::new(1)).unwrap();
        let b = sample_clips(&m, &c, Strategy::Heuristic, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_clips_indices_in_range() {
        let c = cfg(4, 8, 8);
        let m = meta("v0", 200, vec![]);
        for strategy in [Strategy::Heuristic, Strategy::Random] {
            let plan = sample_clips(&m, &c, strategy, &mut Rng::new(5)).unwrap();
            assert_eq!(plan.frames.iter().flatten().count(), 32);
            assert!(plan.frames.iter().flatten().all(|&f| f < 200));
        }
    }

    #[test]
    fn short_videos_always_wrap() {
        let c = cfg(4, 8, 8);
        let m = meta("v0", 40, vec![]);
        for seed in 0..50 {
            for strategy in [Strategy::Heuristic, Strategy::Random] {
                let plan = sample_clips(&m, &c, strategy, &mut Rng::new(seed)).unwrap();
                assert_eq!(plan.case, VideoCase::Short);
                for clip in &plan.frames {
                    assert!(
                        clip.windows(2).any(|w| w[1] < w[0]),
                        "expected a wrap in {clip:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn coverage_saturated_clip() {
        let c = cfg(1, 8, 1);
        let m = meta("v0", 100, (0..100).collect());
        let plan = sample_clips(&m, &c, Strategy::Heuristic, &mut Rng::new(0)).unwrap();
        let stats = coverage_report(&[plan], &[m]).unwrap();
        assert_eq!(stats.histogram[8], 1);
        assert_eq!(stats.background_fraction, 0.0);
        assert_eq!(stats.gt3_fraction, 1.0);
    }

    #[test]
    fn coverage_no_lesions() {
        let c = cfg(2, 8, 8);
        let m = meta("v0", 200, vec![]);
        let plan = sample_clips(&m, &c, Strategy::Heuristic, &mut Rng::new(0)).unwrap();
        let stats = coverage_report(&[plan], &[m]).unwrap();
        assert_eq!(stats.background_fraction, 1.0);
        assert_eq!(stats.gt3_fraction, 0.0);
    }

    #[test]
    fn coverage_unknown_video_rejected() {
        let c = cfg(1, 8, 8);
        let m = meta("v0", 200, vec![]);
        let mut plan = sample_clips(&m, &c, Strategy::Heuristic, &mut Rng::new(0)).unwrap();
        plan.video_id = "missing".into();
        assert!(matches!(
            coverage_report(&[plan], &[m]),
            Err(Error::UnknownVideo(_))
        ));
    }

    #[test]
    fn coverage_is_monotone_in_lesion_set() {
        let c = cfg(4, 8, 8);
        let mut rng = Rng::new(123);
        for _ in 0..50 {
            let num_frames = 60 + rng.below(200) as usize;
            let small: Vec<usize> = (0..num_frames)
                .filter(|_| rng.below(4) == 0)
                .collect();
            let mut large = small.clone();
            large.extend((0..num_frames).filter(|_| rng.below(4) == 0));
            let m_small = meta("v", num_frames, small);
            let m_large = meta("v", num_frames, large);
            let plan =
                sample_clips(&m_small, &c, Strategy::Heuristic, &mut Rng::new(7)).unwrap();
            let s_small = coverage_report(std::slice::from_ref(&plan), &[m_small]).unwrap();
            let s_large = coverage_report(&[plan], &[m_large]).unwrap();
            assert!(s_large.background_fraction <= s_small.background_fraction);
            assert!(s_large.gt3_fraction >= s_small.gt3_fraction);
        }
    }

    #[test]
    fn annotation_round_trip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        let metas = vec![meta("v0", 120, vec![5, 6]), meta("v1", 80, vec![])];
        write_annotations(&path, &metas).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].video_id, "v0");

        // Corrupt the second line; the error must carry line number 2.
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        std::fs::write(&path, format!("{}\n{{broken\n", lines[0])).unwrap();
        match read_annotations(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error with line, got {other:?}"),
        }
    }

    #[test]
    fn plan_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plans.jsonl");
        let c = cfg(2, 4, 3);
        let m = meta("v0", 50, vec![1]);
        let plan = sample_clips(&m, &c, Strategy::Random, &mut Rng::new(3)).unwrap();
        write_plans(&path, std::slice::from_ref(&plan)).unwrap();
        let back = read_plans(&path).unwrap();
        assert_eq!(back, vec![plan]);
        // The serialized config uses the wire names N/T/t.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"N\":2") && text.contains("\"T\":4") && text.contains("\"t\":3"));
    }
}
