use serde::{Deserialize, Serialize};

use super::{nms::confidence_order, PipelineError};
use crate::codec::{Detection, ObjectKind};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointSource {
    PoseObject,
    KeypointObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedKeypoint {
    pub x: f64,
    pub y: f64,
    /// Zero unless a keypoint object was fused into this slot.
    pub conf: f64,
    pub source: KeypointSource,
}

/// A final human pose prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPose {
    pub keypoints: Vec<FusedKeypoint>,
    /// Pose-object confidence `p_o * max(c)`.
    pub score: f64,
    pub bbox: BBox,
}

impl FusedPose {
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.keypoints.iter().map(|k| [k.x, k.y]).collect()
    }

    pub fn fused_count(&self) -> usize {
        self.keypoints
            .iter()
            .filter(|k| k.source == KeypointSource::KeypointObject)
            .count()
    }
}

/// Keypoint-object fusion. Every pose keeps its pose-object keypoints at
/// confidence 0; each keypoint object (highest confidence first) is matched to
/// the nearest pose among those scoring above `min_pose_conf`, measured at its
/// own keypoint type, and replaces that slot when closer than `max_distance`
/// and more confident than what the slot holds.
pub fn fuse(poses: &[Detection], keypoint_objects: &[Detection], max_distance: f64, min_pose_conf: f64) -> Result<Vec<FusedPose>, PipelineError> {
    if poses.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(poses.len());
    for p in poses {
        if p.kind != ObjectKind::Pose {
            return Err(PipelineError::WrongKind);
        }
        let kps = p.keypoints.as_ref().ok_or(PipelineError::MissingKeypoints)?;
        out.push(FusedPose {
            keypoints: kps
                .iter()
                .map(|z| FusedKeypoint {
                    x: z[0],
                    y: z[1],
                    conf: 0.0,
                    source: KeypointSource::PoseObject,
                })
                .collect(),
            score: p.confidence,
            bbox: p.bbox,
        });
    }
    let eligible: Vec<usize> = (0..out.len()).filter(|&i| out[i].score > min_pose_conf).collect();
    if eligible.is_empty() || keypoint_objects.is_empty() {
        return Ok(out);
    }
    for idx in confidence_order(keypoint_objects) {
        let kp = &keypoint_objects[idx];
        let k = kp.keypoint_index().ok_or(PipelineError::WrongKind)?;
        let c = kp.confidence;
        let (bx, by) = (kp.bbox.cx, kp.bbox.cy);
        let mut best: Option<(usize, f64)> = None;
        for &i in &eligible {
            let slot = out[i].keypoints.get(k).ok_or(PipelineError::MissingKeypoints)?;
            let d = (slot.x - bx).hypot(slot.y - by);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (m, d) = best.expect("eligible is non-empty");
        let slot = &mut out[m].keypoints[k];
        if d < max_distance && slot.conf < c {
            *slot = FusedKeypoint {
                x: bx,
                y: by,
                conf: c,
                source: KeypointSource::KeypointObject,
            };
        }
    }
    Ok(out)
}
