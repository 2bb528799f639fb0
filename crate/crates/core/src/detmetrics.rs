//! Detection accuracy: IoU, greedy matching, average precision, mean AP,
//! miss rate, log-average miss rate, and directory-level evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{self, AnnotationError, BoundingBox, Detection, Extents};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground-truth positives; average precision is undefined")]
    NoGroundTruth,
    #[error("cannot average an empty list of APs")]
    EmptyApList,
    #[error("miss rate undefined: TP + FN == 0")]
    ZeroDenominator,
    #[error("prediction files without ground truth: {}", .0.join(", "))]
    UnpairedStems(Vec<String>),
    #[error("no ground-truth label files in {}", .0.display())]
    NoFrames(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Intersection over union with inclusive pixel areas.
pub fn iou(a: &Extents, b: &Extents) -> f64 {
    let ix0 = a.x_min.max(b.x_min);
    let iy0 = a.y_min.max(b.y_min);
    let ix1 = a.x_max.min(b.x_max);
    let iy1 = a.y_max.min(b.y_max);
    if ix0 > ix1 || iy0 > iy1 {
        return 0.0;
    }
    let inter = (u64::from(ix1 - ix0) + 1) * (u64::from(iy1 - iy0) + 1);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Outcome of matching one image's predictions (single class) against its
/// ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(confidence, is_tp)` in rank order.
    pub ranked: Vec<(f64, bool)>,
    /// Ground-truth positives.
    pub num_gt: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.ranked.iter().filter(|(_, hit)| *hit).count()
    }

    pub fn fp(&self) -> usize {
        self.ranked.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.num_gt - self.tp()
    }

    /// Builds a result directly from rank-ordered TP flags.
    pub fn from_flags(flags: &[bool], num_gt: usize) -> Self {
        let n = flags.len();
        Self {
            ranked: flags
                .iter()
                .enumerate()
                .map(|(i, &hit)| ((n - i) as f64 / n as f64, hit))
                .collect(),
            num_gt,
        }
    }
}

/// Greedy matching at `threshold` (IoU >= threshold is a hit).
///
/// Predictions are ranked by confidence, ties keeping input order. Each one
/// claims the still-unclaimed ground truth with the highest IoU at or above
/// the threshold, lowest index on equal IoU. A prediction that finds nothing
/// to claim, including a duplicate of an already claimed box, is a false
/// positive.
pub fn match_detections(preds: &[Detection], gts: &[BoundingBox], threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut claimed = vec![false; gts.len()];
    let ranked = order
        .into_iter()
        .map(|i| {
            let p = &preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] {
                    continue;
                }
                let v = iou(&p.bbox.extents, &gt.extents);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                claimed[g] = true;
            }
            (p.confidence, best.is_some())
        })
        .collect();
    MatchResult {
        ranked,
        num_gt: gts.len(),
    }
}

/// How the precision sum runs over ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Precision summed at the ranks of true positives only; bounded by 1.
    #[default]
    TpRanks,
    /// Precision summed over every rank; can exceed 1. Kept for comparison.
    AllRanks,
}

/// Exact AP as a ratio: `(1/G) * sum(TP_seen(i) / i)` over the ranks
/// selected by `mode`.
pub fn average_precision_exact(m: &MatchResult, mode: ApMode) -> Result<BigRational, MetricsError> {
    if m.num_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut seen = 0u64;
    let mut sum = BigRational::zero();
    for (i, &(_, hit)) in m.ranked.iter().enumerate() {
        if hit {
            seen += 1;
        }
        if hit || mode == ApMode::AllRanks {
            sum += BigRational::new(BigInt::from(seen), BigInt::from(i as u64 + 1));
        }
    }
    Ok(sum / BigInt::from(m.num_gt))
}

pub fn average_precision(m: &MatchResult) -> Result<f64, MetricsError> {
    average_precision_with(m, ApMode::TpRanks)
}

pub fn average_precision_with(m: &MatchResult, mode: ApMode) -> Result<f64, MetricsError> {
    Ok(average_precision_exact(m, mode)?
        .to_f64()
        .expect("AP is a finite ratio"))
}

/// Arithmetic mean.
pub fn mean_ap(aps: &[f64]) -> Result<f64, MetricsError> {
    if aps.is_empty() {
        return Err(MetricsError::EmptyApList);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// `FN / (TP + FN)`.
pub fn miss_rate(tp: usize, fn_count: usize) -> Result<f64, MetricsError> {
    let total = tp + fn_count;
    if total == 0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(fn_count as f64 / total as f64)
}

pub fn match_miss_rate(m: &MatchResult) -> Result<f64, MetricsError> {
    miss_rate(m.tp(), m.fn_count())
}

/// Nine FPPI reference points, log-spaced over `[1e-2, 1e0]`.
pub fn lamr_reference_points() -> [f64; 9] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 0.25 * i as f64))
}

/// Miss rates below this are clamped before taking logs.
pub const LAMR_FLOOR: f64 = 1e-10;

/// Log-average miss rate over a dataset of `num_images` frames.
///
/// The confidence threshold sweeps from above the highest score downward;
/// each distinct score yields one operating point `(FP / num_images,
/// 1 - TP / G)`, starting from `(0, 1)` when nothing is accepted. At each
/// reference FPPI the miss rate of the last operating point not exceeding it
/// is taken, and the result is the geometric mean of those nine values
/// (floored at [`LAMR_FLOOR`]). Without ground truth there is nothing to
/// miss and the result is 0.0.
pub fn log_average_miss_rate(matches: &[MatchResult], num_images: usize) -> f64 {
    let num_gt: usize = matches.iter().map(|m| m.num_gt).sum();
    if num_gt == 0 || num_images == 0 {
        return 0.0;
    }
    let mut all: Vec<(f64, bool)> = matches.iter().flat_map(|m| m.ranked.iter().copied()).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0f64, 1.0f64)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let score = all[i].0;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / num_images as f64, 1.0 - tp as f64 / num_gt as f64));
    }

    let refs = lamr_reference_points();
    let log_sum: f64 = refs
        .iter()
        .map(|&r| {
            let mr = points
                .iter()
                .rev()
                .find(|(fppi, _)| *fppi <= r)
                .map(|&(_, mr)| mr)
                .expect("the (0, 1) point is always below every reference");
            mr.max(LAMR_FLOOR).ln()
        })
        .sum();
    (log_sum / refs.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// Mean of per-frame AP over frames holding this class's ground truth.
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub miss_rate: f64,
    pub lamr: f64,
    /// Frames contributing an AP value.
    pub frames_with_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassReport>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub lamr: f64,
    pub frames: usize,
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
    /// Ground-truth stems that had no prediction file.
    pub missing_predictions: Vec<String>,
}

/// Ground truth and predictions for one frame.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub gts: Vec<BoundingBox>,
    pub preds: Vec<Detection>,
}

/// Scores a set of frames. Frame order does not affect the result.
///
/// Every (frame, class) pair with ground truth contributes one AP value;
/// a class's AP is the mean over its frames and mAP is the mean over
/// classes. With a single class this is the plain per-frame mean.
pub fn evaluate_frames(frames: &[Frame], threshold: f64, mode: ApMode) -> EvalReport {
    let classes: BTreeSet<&str> = frames
        .iter()
        .flat_map(|f| {
            f.gts
                .iter()
                .map(|b| b.class_name.as_str())
                .chain(f.preds.iter().map(|d| d.bbox.class_name.as_str()))
        })
        .collect();

    let mut per_class = BTreeMap::new();
    for class in classes {
        let matches: Vec<MatchResult> = frames
            .iter()
            .map(|f| {
                let gts: Vec<BoundingBox> =
                    f.gts.iter().filter(|b| b.class_name == class).cloned().collect();
                let preds: Vec<Detection> = f
                    .preds
                    .iter()
                    .filter(|d| d.bbox.class_name == class)
                    .cloned()
                    .collect();
                match_detections(&preds, &gts, threshold)
            })
            .collect();
        let aps: Vec<f64> = matches
            .iter()
            .filter_map(|m| average_precision_with(m, mode).ok())
            .collect();
        let tp: usize = matches.iter().map(MatchResult::tp).sum();
        let fp: usize = matches.iter().map(MatchResult::fp).sum();
        let fn_count: usize = matches.iter().map(MatchResult::fn_count).sum();
        per_class.insert(
            class.to_string(),
            ClassReport {
                ap: mean_ap(&aps).unwrap_or(0.0),
                tp,
                fp,
                fn_count,
                miss_rate: miss_rate(tp, fn_count).unwrap_or(0.0),
                lamr: log_average_miss_rate(&matches, frames.len()),
                frames_with_gt: aps.len(),
            },
        );
    }

    let scored: Vec<&ClassReport> = per_class.values().filter(|c| c.frames_with_gt > 0).collect();
    let map = mean_ap(&scored.iter().map(|c| c.ap).collect::<Vec<_>>()).unwrap_or(0.0);
    let lamr = mean_ap(&scored.iter().map(|c| c.lamr).collect::<Vec<_>>()).unwrap_or(0.0);
    EvalReport {
        per_class,
        map,
        lamr,
        frames: frames.len(),
        iou_threshold: threshold,
        ap_mode: mode,
        missing_predictions: Vec::new(),
    }
}

fn txt_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, MetricsError> {
    let rd = fs::read_dir(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for entry in rd {
        let path = entry
            .map_err(|source| MetricsError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs `<stem>.txt` label files in `gt_dir` with prediction files of the
/// same stem in `pred_dir` and scores them.
///
/// A missing prediction file means the detector produced nothing for that
/// frame; it is logged and its ground truth counts as missed. A prediction
/// file with no ground-truth partner is an error.
pub fn evaluate_dirs(
    gt_dir: impl AsRef<Path>,
    pred_dir: impl AsRef<Path>,
    threshold: f64,
    mode: ApMode,
) -> Result<EvalReport, MetricsError> {
    let gt_dir = gt_dir.as_ref();
    let gts = txt_stems(gt_dir)?;
    let preds = txt_stems(pred_dir.as_ref())?;

    let orphans: Vec<String> = preds.keys().filter(|s| !gts.contains_key(*s)).cloned().collect();
    if !orphans.is_empty() {
        return Err(MetricsError::UnpairedStems(orphans));
    }
    if gts.is_empty() {
        return Err(MetricsError::NoFrames(gt_dir.to_path_buf()));
    }

    let mut frames = Vec::with_capacity(gts.len());
    let mut missing = Vec::new();
    for (stem, gt_path) in &gts {
        let gts = annotations::parse_label(gt_path)?;
        let preds = match preds.get(stem) {
            Some(p) => annotations::parse_prediction(p)?,
            None => {
                log::warn!("no prediction file for {stem}; counting its ground truth as missed");
                missing.push(stem.clone());
                Vec::new()
            }
        };
        frames.push(Frame { gts, preds });
    }
    let mut report = evaluate_frames(&frames, threshold, mode);
    report.missing_predictions = missing;
    Ok(report)
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).expect("report always serializes");
    fs::write(path, text + "\n").map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}
