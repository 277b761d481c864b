//! OKS-based evaluation in the style of the COCO keypoint benchmark.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::PoseAnnotation;
use crate::pipeline::{FusedPose, KeypointSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("ground truth has no labeled keypoints")]
    NoLabeledKeypoints,
    #[error("expected {expected} keypoints, got {got}")]
    KeypointCount { expected: usize, got: usize },
    #[error("result refers to unknown image {0}")]
    UnknownImage(u64),
    #[error("no ground-truth instance with labeled keypoints")]
    NoGroundTruth,
    #[error("invalid OKS parameters: {0}")]
    BadParams(String),
}

/// Per-keypoint falloff constants of the COCO keypoint evaluation.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
];

/// `k` holds the constants of `exp(-d^2 / (2 s^2 k^2))`; `s^2` is the
/// ground-truth box area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OksParams {
    pub k: Vec<f64>,
}

impl Default for OksParams {
    fn default() -> Self {
        Self::coco()
    }
}

impl OksParams {
    /// COCO defines `k_i = 2 sigma_i`.
    pub fn coco() -> Self {
        Self {
            k: COCO_SIGMAS.iter().map(|s| 2.0 * s).collect(),
        }
    }

    pub fn new(k: Vec<f64>) -> Result<Self, MetricsError> {
        let p = Self { k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.k.is_empty() {
            return Err(MetricsError::BadParams("no constants".into()));
        }
        if let Some(v) = self.k.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(MetricsError::BadParams(format!("constant {v} must be positive")));
        }
        Ok(())
    }

    pub fn num_keypoints(&self) -> usize {
        self.k.len()
    }
}

/// Object keypoint similarity of predicted points against one annotation.
pub fn oks(pred: &[[f64; 2]], gt: &PoseAnnotation, params: &OksParams) -> Result<f64, MetricsError> {
    let k = params.num_keypoints();
    if pred.len() != k {
        return Err(MetricsError::KeypointCount { expected: k, got: pred.len() });
    }
    if gt.num_keypoints() != k {
        return Err(MetricsError::KeypointCount { expected: k, got: gt.num_keypoints() });
    }
    // the epsilon keeps zero-area annotations defined, as in the COCO tooling
    let s2 = gt.bbox.area() + f64::EPSILON;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..k {
        if !gt.is_labeled(i) {
            continue;
        }
        let dx = pred[i][0] - gt.keypoints[i][0];
        let dy = pred[i][1] - gt.keypoints[i][1];
        let ki = params.k[i];
        sum += (-(dx * dx + dy * dy) / (2.0 * s2 * ki * ki)).exp();
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoLabeledKeypoints);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub annotation: PoseAnnotation,
}

/// One scored pose prediction; `keypoints` rows are `(x, y, conf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseResult {
    pub image_id: u64,
    pub keypoints: Vec<[f64; 3]>,
    pub score: f64,
}

impl PoseResult {
    pub fn from_fused(image_id: u64, pose: &FusedPose) -> Self {
        Self {
            image_id,
            keypoints: pose.keypoints.iter().map(|k| [k.x, k.y, k.conf]).collect(),
            score: pose.score,
        }
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.keypoints.iter().map(|r| [r[0], r[1]]).collect()
    }
}

pub const RECALL_POINTS: usize = 101;

pub fn oks_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub threshold: f64,
    /// Interpolated precision at recall `i / 100`.
    pub precision: Vec<f64>,
    pub ap: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub num_ground_truth: usize,
    pub num_results: usize,
    pub curves: Vec<PrCurve>,
}

impl EvalSummary {
    /// Precision-recall table with header `threshold,recall,precision`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,recall,precision\n");
        for c in &self.curves {
            for (i, p) in c.precision.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", c.threshold, i as f64 / 100.0, p));
            }
        }
        out
    }
}

/// Per-image scoring state: labeled ground truths and the top detections.
struct ImageEval {
    /// `oks[d][g]` for detections in score order.
    oks: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

fn group_ground_truth(gts: &[GroundTruth], k: usize) -> Result<BTreeMap<u64, Vec<&PoseAnnotation>>, MetricsError> {
    let mut by_image: BTreeMap<u64, Vec<&PoseAnnotation>> = BTreeMap::new();
    for g in gts {
        if g.annotation.num_keypoints() != k {
            return Err(MetricsError::KeypointCount {
                expected: k,
                got: g.annotation.num_keypoints(),
            });
        }
        let entry = by_image.entry(g.image_id).or_default();
        if g.annotation.labeled_count() > 0 {
            entry.push(&g.annotation);
        }
    }
    Ok(by_image)
}

/// Results of one image sorted by score (descending, stable) and truncated.
fn top_results<'a>(results: &[&'a PoseResult], max_dets: Option<usize>) -> Vec<&'a PoseResult> {
    let mut sorted = results.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    if let Some(m) = max_dets {
        sorted.truncate(m);
    }
    sorted
}

fn group_results<'a>(results: &'a [PoseResult], images: &BTreeMap<u64, Vec<&PoseAnnotation>>, k: usize) -> Result<BTreeMap<u64, Vec<&'a PoseResult>>, MetricsError> {
    let mut by_image: BTreeMap<u64, Vec<&PoseResult>> = BTreeMap::new();
    for r in results {
        if !images.contains_key(&r.image_id) {
            return Err(MetricsError::UnknownImage(r.image_id));
        }
        if r.keypoints.len() != k {
            return Err(MetricsError::KeypointCount { expected: k, got: r.keypoints.len() });
        }
        by_image.entry(r.image_id).or_default().push(r);
    }
    Ok(by_image)
}

/// COCO-style AP/AR over OKS thresholds 0.50:0.05:0.95 with 101-point
/// interpolation. Each detection, in score order, is matched to the unmatched
/// ground truth of highest OKS at or above the threshold (ties to the first).
/// Annotations without labeled keypoints are left out of the evaluation.
pub fn evaluate_ap(results: &[PoseResult], gts: &[GroundTruth], params: &OksParams, max_dets: Option<usize>) -> Result<EvalSummary, MetricsError> {
    params.validate()?;
    let k = params.num_keypoints();
    let images = group_ground_truth(gts, k)?;
    let per_image_results = group_results(results, &images, k)?;
    let num_gt: usize = images.values().map(Vec::len).sum();
    if num_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut evals = Vec::with_capacity(images.len());
    let mut num_results = 0;
    for (id, anns) in &images {
        let dets = top_results(per_image_results.get(id).map_or(&[][..], Vec::as_slice), max_dets);
        num_results += dets.len();
        let mut table = Vec::with_capacity(dets.len());
        for d in &dets {
            let pts = d.points();
            let row = anns.iter().map(|g| oks(&pts, g, params)).collect::<Result<Vec<_>, _>>()?;
            table.push(row);
        }
        evals.push(ImageEval {
            oks: table,
            scores: dets.iter().map(|d| d.score).collect(),
        });
    }

    let mut curves = Vec::new();
    for t in oks_thresholds() {
        // (score, matched) for every detection in image-id then rank order
        let mut marks: Vec<(f64, bool)> = Vec::with_capacity(num_results);
        for ev in &evals {
            let n_gt = ev.oks.first().map_or(0, Vec::len);
            let mut taken = vec![false; n_gt];
            for (d, row) in ev.oks.iter().enumerate() {
                let mut best: Option<usize> = None;
                for (g, &o) in row.iter().enumerate() {
                    if taken[g] || o < t {
                        continue;
                    }
                    if best.is_none_or(|b| o > row[b]) {
                        best = Some(g);
                    }
                }
                if let Some(g) = best {
                    taken[g] = true;
                }
                marks.push((ev.scores[d], best.is_some()));
            }
        }
        // stable: equal scores keep image-id then rank order
        marks.sort_by(|a, b| b.0.total_cmp(&a.0));
        curves.push(interpolate(&marks, num_gt, t));
    }
    let ap = curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64;
    let ar = curves.iter().map(|c| c.recall).sum::<f64>() / curves.len() as f64;
    Ok(EvalSummary {
        ap,
        ap50: curves[0].ap,
        ap75: curves[5].ap,
        ar,
        num_ground_truth: num_gt,
        num_results,
        curves,
    })
}

fn interpolate(marks: &[(f64, bool)], num_gt: usize, threshold: f64) -> PrCurve {
    let mut recall = Vec::with_capacity(marks.len());
    let mut precision = Vec::with_capacity(marks.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, hit) in marks {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let q: Vec<f64> = (0..RECALL_POINTS)
        .map(|i| {
            let r = i as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    PrCurve {
        threshold,
        ap: q.iter().sum::<f64>() / RECALL_POINTS as f64,
        recall: recall.last().copied().unwrap_or(0.0),
        precision: q,
    }
}

/// Fused keypoint objects of type k over labeled keypoints of type k; `None`
/// where no keypoint of that type is labeled.
pub fn fusion_rates(fused: &[FusedPose], annotations: &[PoseAnnotation], num_keypoints: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; num_keypoints];
    let mut labeled = vec![0usize; num_keypoints];
    for p in fused {
        for (k, slot) in p.keypoints.iter().enumerate().take(num_keypoints) {
            if slot.source == KeypointSource::KeypointObject {
                hits[k] += 1;
            }
        }
    }
    for a in annotations {
        for (k, n) in labeled.iter_mut().enumerate() {
            if a.is_labeled(k) {
                *n += 1;
            }
        }
    }
    hits.iter()
        .zip(&labeled)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageDelta {
    pub image_id: u64,
    pub delta: f64,
}

fn max_oks_sum(dets: &[&PoseResult], anns: &[&PoseAnnotation], params: &OksParams) -> Result<f64, MetricsError> {
    let pts: Vec<Vec<[f64; 2]>> = dets.iter().map(|d| d.points()).collect();
    let mut total = 0.0;
    for g in anns {
        let mut best: f64 = 0.0;
        for p in &pts {
            best = best.max(oks(p, g, params)?);
        }
        total += best;
    }
    Ok(total)
}

/// Per image, the sum over ground truths of the best OKS under `a` minus the
/// same sum under `b`, each using the `top_n` highest-scoring results.
pub fn delta_oks(a: &[PoseResult], b: &[PoseResult], gts: &[GroundTruth], params: &OksParams, top_n: usize) -> Result<Vec<ImageDelta>, MetricsError> {
    params.validate()?;
    let k = params.num_keypoints();
    let images = group_ground_truth(gts, k)?;
    let ra = group_results(a, &images, k)?;
    let rb = group_results(b, &images, k)?;
    let ids: BTreeSet<u64> = images.keys().copied().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let anns = &images[&id];
        let da = top_results(ra.get(&id).map_or(&[][..], Vec::as_slice), Some(top_n));
        let db = top_results(rb.get(&id).map_or(&[][..], Vec::as_slice), Some(top_n));
        out.push(ImageDelta {
            image_id: id,
            delta: max_oks_sum(&da, anns, params)? - max_oks_sum(&db, anns, params)?,
        });
    }
    Ok(out)
}
