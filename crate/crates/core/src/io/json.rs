//! COCO-style annotation and result records.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::codec::PoseAnnotation;
use crate::geometry::BBox;
use crate::metrics::{GroundTruth, PoseResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JsonError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

/// `{"image_id", "box": [cx, cy, w, h], "keypoints": [x, y, v, ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub keypoints: Vec<f64>,
}

/// `{"image_id", "keypoints": [x, y, conf, ...], "score"}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: u64,
    pub keypoints: Vec<f64>,
    pub score: f64,
}

impl AnnotationRecord {
    pub fn from_ground_truth(g: &GroundTruth) -> Self {
        let a = &g.annotation;
        Self {
            image_id: g.image_id,
            bbox: a.bbox.as_array(),
            keypoints: a
                .keypoints
                .iter()
                .zip(&a.visibility)
                .flat_map(|(p, &v)| [p[0], p[1], f64::from(v)])
                .collect(),
        }
    }

    pub fn to_ground_truth(&self, num_keypoints: usize) -> Result<GroundTruth, String> {
        if self.keypoints.len() != 3 * num_keypoints {
            return Err(format!("keypoints has {} values, expected {}", self.keypoints.len(), 3 * num_keypoints));
        }
        let bbox = BBox::from_array(self.bbox);
        bbox.validate().map_err(|e| e.to_string())?;
        let mut keypoints = Vec::with_capacity(num_keypoints);
        let mut visibility = Vec::with_capacity(num_keypoints);
        for (k, row) in self.keypoints.chunks_exact(3).enumerate() {
            let v = row[2];
            if !(v == 0.0 || v == 1.0 || v == 2.0) {
                return Err(format!("keypoint {k} has visibility {v}"));
            }
            if !(row[0].is_finite() && row[1].is_finite()) {
                return Err(format!("keypoint {k} is not finite"));
            }
            keypoints.push([row[0], row[1]]);
            visibility.push(v as u8);
        }
        Ok(GroundTruth {
            image_id: self.image_id,
            annotation: PoseAnnotation { bbox, keypoints, visibility },
        })
    }
}

impl ResultRecord {
    pub fn from_result(r: &PoseResult) -> Self {
        Self {
            image_id: r.image_id,
            keypoints: r.keypoints.iter().flatten().copied().collect(),
            score: r.score,
        }
    }

    pub fn to_result(&self, num_keypoints: usize) -> Result<PoseResult, String> {
        if self.keypoints.len() != 3 * num_keypoints {
            return Err(format!("keypoints has {} values, expected {}", self.keypoints.len(), 3 * num_keypoints));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if !self.keypoints.iter().all(|v| v.is_finite()) {
            return Err("non-finite keypoint value".into());
        }
        Ok(PoseResult {
            image_id: self.image_id,
            keypoints: self.keypoints.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect(),
            score: self.score,
        })
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("records serialize")
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T, JsonError> {
    serde_json::from_str(text).map_err(|e| JsonError::Parse(e.to_string()))
}

pub fn parse_annotations(text: &str, num_keypoints: usize) -> Result<Vec<GroundTruth>, JsonError> {
    let records: Vec<AnnotationRecord> = parse(text)?;
    records
        .iter()
        .enumerate()
        .map(|(index, r)| r.to_ground_truth(num_keypoints).map_err(|reason| JsonError::Invalid { index, reason }))
        .collect()
}

pub fn parse_results(text: &str, num_keypoints: usize) -> Result<Vec<PoseResult>, JsonError> {
    let records: Vec<ResultRecord> = parse(text)?;
    records
        .iter()
        .enumerate()
        .map(|(index, r)| r.to_result(num_keypoints).map_err(|reason| JsonError::Invalid { index, reason }))
        .collect()
}

pub fn annotations_json(gts: &[GroundTruth]) -> String {
    to_json(&gts.iter().map(AnnotationRecord::from_ground_truth).collect::<Vec<_>>())
}

pub fn results_json(results: &[PoseResult]) -> String {
    to_json(&results.iter().map(ResultRecord::from_result).collect::<Vec<_>>())
}

fn read(path: &Path) -> Result<String, JsonError> {
    std::fs::read_to_string(path).map_err(|e| JsonError::Io(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), JsonError> {
    std::fs::write(path, text).map_err(|e| JsonError::Io(format!("{}: {e}", path.display())))
}

pub fn read_annotations(path: &Path, num_keypoints: usize) -> Result<Vec<GroundTruth>, JsonError> {
    parse_annotations(&read(path)?, num_keypoints)
}

pub fn read_results(path: &Path, num_keypoints: usize) -> Result<Vec<PoseResult>, JsonError> {
    parse_results(&read(path)?, num_keypoints)
}
