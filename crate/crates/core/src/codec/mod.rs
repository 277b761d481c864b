//! Mapping between annotated scenes and the dense output grids.
//!
//! Channel layout of one cell-anchor (`N_o = 3K + 6` floats):
//! `[objectness, tx, ty, tw, th, class_1 .. class_{K+1}, vx_1, vy_1, .., vx_K, vy_K]`.
//! Class 1 is the person (pose object); class `k + 1` is keypoint object `k`.
//!
//! Cell index `i` runs along x (columns) and `j` along y (rows); tensors are
//! stored row-major as `(row = j, col = i, anchor, channel)`.

mod anchors;
mod assign;
mod decode;
mod grid;
mod inverse;

pub use anchors::{build_anchor_set, Anchor, AnchorLevel, AnchorSet, DEFAULT_STRIDES};
pub use assign::{
    anchor_ratio, assign_objects, assign_targets, candidate_cells, objects_from_annotations,
    write_targets, AssignConfig, AssignmentRecord, CellTarget, Claim, Collision, TargetObject,
};
pub use decode::{
    decode_cell, decode_grids, to_image_coords, DecodedCell, Detection, Detections, ObjectKind,
};
pub use grid::{CellKind, Channels, Grid, GridSet, MaskGrid, Slot, TargetGrids, TargetMask};
pub use inverse::{
    encode_inverse, encode_with_styles, InverseConfig, InverseReport, ObjectReport, ObjectStyle,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("anchor set is empty")]
    EmptyAnchors,
    #[error("stride {0} has no anchors")]
    EmptyLevel(u32),
    #[error("anchor dimensions must be finite and positive, got ({0}, {1})")]
    BadAnchor(f64, f64),
    #[error("every stride must have the same number of anchors")]
    RaggedAnchors,
    #[error("strides must be positive and strictly ascending")]
    BadStrides,
    #[error("image size {height}x{width} is not divisible by stride {stride}")]
    IndivisibleImage { height: u32, width: u32, stride: u32 },
    #[error("expected {expected} keypoints, annotation has {got}")]
    KeypointCount { expected: usize, got: usize },
    #[error("annotation {index}: {reason}")]
    BadAnnotation { index: usize, reason: String },
    #[error("grid channel count {got} does not match 3K+6 = {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("grid geometry does not match the anchor set: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in grid")]
    NonFinite,
}

/// A ground-truth person: extent box, `K` keypoints and visibility flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseAnnotation {
    pub bbox: BBox,
    pub keypoints: Vec<[f64; 2]>,
    /// COCO flags: 0 unlabeled, 1 labeled but occluded, 2 visible.
    pub visibility: Vec<u8>,
}

impl PoseAnnotation {
    pub fn num_keypoints(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_labeled(&self, k: usize) -> bool {
        self.visibility[k] > 0
    }

    pub fn labeled_count(&self) -> usize {
        self.visibility.iter().filter(|&&v| v > 0).count()
    }

    pub fn validate(&self, num_keypoints: usize, height: u32, width: u32) -> Result<(), String> {
        if self.keypoints.len() != num_keypoints || self.visibility.len() != num_keypoints {
            return Err(format!(
                "expected {num_keypoints} keypoints, got {} coordinates and {} flags",
                self.keypoints.len(),
                self.visibility.len()
            ));
        }
        self.bbox.validate().map_err(|e| e.to_string())?;
        if self.bbox.w > f64::from(width) || self.bbox.h > f64::from(height) {
            return Err("box larger than image".into());
        }
        if self.bbox.cx < 0.0
            || self.bbox.cy < 0.0
            || self.bbox.cx > f64::from(width)
            || self.bbox.cy > f64::from(height)
        {
            return Err("box center outside image".into());
        }
        for (k, (p, &v)) in self.keypoints.iter().zip(&self.visibility).enumerate() {
            if v > 2 {
                return Err(format!("keypoint {k} has visibility flag {v}"));
            }
            if v > 0 {
                let inside = p[0].is_finite()
                    && p[1].is_finite()
                    && (0.0..=f64::from(width)).contains(&p[0])
                    && (0.0..=f64::from(height)).contains(&p[1]);
                if !inside {
                    return Err(format!("labeled keypoint {k} lies outside the image"));
                }
            }
        }
        Ok(())
    }
}
