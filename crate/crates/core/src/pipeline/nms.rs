use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::codec::Detection;
use crate::geometry::{ciou_unchecked, iou_unchecked, BBox};

/// Overlap measure used for suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    #[default]
    Ciou,
    Iou,
}

impl Overlap {
    pub fn measure(self, a: &BBox, b: &BBox) -> f64 {
        match self {
            Self::Ciou => ciou_unchecked(a, b),
            Self::Iou => iou_unchecked(a, b),
        }
    }
}

/// Indices into `dets` ordered by confidence, descending, ties by index.
pub fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy suppression; returns kept indices in confidence order. With
/// `per_class` set, only detections of the same class suppress each other.
pub fn nms_indices(dets: &[Detection], threshold: f64, per_class: bool, overlap: Overlap) -> Result<Vec<usize>, PipelineError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PipelineError::Threshold(threshold));
    }
    for d in dets {
        d.bbox.validate().map_err(|_| PipelineError::InvalidBox)?;
    }
    let mut kept: Vec<usize> = Vec::new();
    for idx in confidence_order(dets) {
        let cand = &dets[idx];
        let suppressed = kept.iter().any(|&k| {
            let other = &dets[k];
            (!per_class || other.class_index == cand.class_index) && overlap.measure(&other.bbox, &cand.bbox) > threshold
        });
        if !suppressed {
            kept.push(idx);
        }
    }
    Ok(kept)
}

/// Non-maximum suppression over one detection set.
pub fn nms(dets: &[Detection], threshold: f64, per_class: bool, overlap: Overlap) -> Result<Vec<Detection>, PipelineError> {
    Ok(nms_indices(dets, threshold, per_class, overlap)?
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}
