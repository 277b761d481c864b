//! Inference post-processing: decode, NMS on each object set, then fusion.

mod fuse;
mod nms;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_grids, AnchorSet, CodecError, GridSet};

pub use fuse::{fuse, FusedKeypoint, FusedPose, KeypointSource};
pub use nms::{confidence_order, nms, nms_indices, Overlap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("invalid inference config: {0}")]
    Config(String),
    #[error("detection box is not finite or has negative size")]
    InvalidBox,
    #[error("pose detection carries no keypoints")]
    MissingKeypoints,
    #[error("detection of the wrong kind for this stage")]
    WrongKind,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Inference thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub tau_cp: f64,
    pub tau_ck: f64,
    pub tau_bp: f64,
    pub tau_bk: f64,
    /// Fusion distance, pixels.
    pub tau_fd: f64,
    pub tau_fc: f64,
    #[serde(default)]
    pub overlap: Overlap,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            tau_cp: 0.001,
            tau_ck: 0.2,
            tau_bp: 0.65,
            tau_bk: 0.25,
            tau_fd: 50.0,
            tau_fc: 0.3,
            overlap: Overlap::Ciou,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("tau_cp", self.tau_cp),
            ("tau_ck", self.tau_ck),
            ("tau_bp", self.tau_bp),
            ("tau_bk", self.tau_bk),
            ("tau_fc", self.tau_fc),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.tau_fd >= 0.0) {
            return Err(PipelineError::Config(format!("tau_fd = {} must be non-negative", self.tau_fd)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageTimings {
    pub decode: Duration,
    pub nms: Duration,
    pub fuse: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub pose_candidates: usize,
    pub keypoint_candidates: usize,
    pub poses_after_nms: usize,
    pub keypoints_after_nms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub poses: Vec<FusedPose>,
    pub counts: StageCounts,
    pub timings: StageTimings,
}

/// Decode, suppress and fuse one image's raw grids.
pub fn run_pipeline(grids: &GridSet, anchors: &AnchorSet, cfg: &InferenceConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let dets = decode_grids(grids, anchors, cfg.tau_cp, cfg.tau_ck)?;
    let t_decode = Instant::now();
    let poses = nms(&dets.poses, cfg.tau_bp, false, cfg.overlap)?;
    let kps = nms(&dets.keypoints, cfg.tau_bk, true, cfg.overlap)?;
    let t_nms = Instant::now();
    let fused = fuse(&poses, &kps, cfg.tau_fd, cfg.tau_fc)?;
    let end = Instant::now();
    Ok(PipelineOutput {
        counts: StageCounts {
            pose_candidates: dets.poses.len(),
            keypoint_candidates: dets.keypoints.len(),
            poses_after_nms: poses.len(),
            keypoints_after_nms: kps.len(),
        },
        poses: fused,
        timings: StageTimings {
            decode: t_decode - start,
            nms: t_nms - t_decode,
            fuse: end - t_nms,
            total: end - start,
        },
    })
}
