//! Synthetic scenes, a simulated network and straight-line oracles.

mod noise;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, PoseAnnotation};
use crate::geometry::{iou, BBox};

pub use noise::{simulate_network, NoiseModel, SimulatedOutput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("template does not fit the image: {0}")]
    Infeasible(String),
    #[error("could not place person {0} without exceeding the overlap limit")]
    Placement(usize),
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("oracle input of size {size} exceeds the cap of {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("bad template asset: {0}")]
    Template(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

const TEMPLATE_V1: &str = include_str!("../../assets/pose_template_v1.json");

/// Keypoint layout of a person in body-height units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTemplate {
    pub version: u32,
    #[serde(default)]
    pub description: String,
    pub names: Vec<String>,
    /// `(x from midline, y from head top)`.
    pub points: Vec<[f64; 2]>,
    /// Limb list as keypoint index pairs.
    pub skeleton: Vec<[usize; 2]>,
    /// Box padding on every side, in body heights.
    pub margin: f64,
}

impl PoseTemplate {
    pub fn coco_v1() -> Self {
        Self::from_json(TEMPLATE_V1).expect("bundled template is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let t: Self = serde_json::from_str(text).map_err(|e| SynthError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let k = self.points.len();
        if k == 0 || self.names.len() != k {
            return Err(SynthError::Template("names and points must be non-empty and of equal length".into()));
        }
        if self.skeleton.iter().any(|e| e[0] >= k || e[1] >= k) {
            return Err(SynthError::Template("skeleton refers to a missing keypoint".into()));
        }
        if !self.points.iter().flatten().all(|v| v.is_finite()) || !(self.margin >= 0.0) {
            return Err(SynthError::Template("non-finite point or negative margin".into()));
        }
        Ok(())
    }

    pub fn num_keypoints(&self) -> usize {
        self.points.len()
    }

    /// Padded extent `(width, height)` at unit body height.
    pub fn extent(&self) -> (f64, f64) {
        let (x0, x1, y0, y1) = bounds(&self.points);
        (x1 - x0 + 2.0 * self.margin, y1 - y0 + 2.0 * self.margin)
    }
}

fn bounds(points: &[[f64; 2]]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), p| (x0.min(p[0]), x1.max(p[0]), y0.min(p[1]), y1.max(p[1])),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: u32,
    pub width: u32,
    pub min_persons: usize,
    pub max_persons: usize,
    /// Body height range, px.
    pub min_scale: f64,
    pub max_scale: f64,
    pub occlusion_prob: f64,
    /// Per-keypoint positional jitter in body heights.
    pub pose_jitter: f64,
    /// Largest IoU allowed between two person boxes.
    pub max_overlap_iou: f64,
    pub seed: u64,
    pub template: PoseTemplate,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 1280,
            width: 1280,
            min_persons: 1,
            max_persons: 10,
            min_scale: 120.0,
            max_scale: 480.0,
            occlusion_prob: 0.1,
            pose_jitter: 0.015,
            max_overlap_iou: 0.3,
            seed: 0,
            template: PoseTemplate::coco_v1(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.template.validate()?;
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.height == 0 || self.width == 0 {
            return bad("image dimensions must be positive");
        }
        if self.min_persons > self.max_persons {
            return bad("min_persons exceeds max_persons");
        }
        if !(self.min_scale > 0.0 && self.min_scale <= self.max_scale && self.max_scale.is_finite()) {
            return bad("scale range must satisfy 0 < min <= max");
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return bad("occlusion_prob outside [0, 1]");
        }
        if !(self.pose_jitter >= 0.0 && self.pose_jitter.is_finite()) {
            return bad("pose_jitter must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.max_overlap_iou) {
            return bad("max_overlap_iou outside [0, 1]");
        }
        let (ew, eh) = self.template.extent();
        let slack = 1.0 + 8.0 * self.pose_jitter;
        let (bw, bh) = (ew * self.max_scale * slack, eh * self.max_scale * slack);
        if bw > f64::from(self.width) || bh > f64::from(self.height) {
            return Err(SynthError::Infeasible(format!(
                "a {:.0}x{:.0} px person does not fit a {}x{} image",
                bw, bh, self.width, self.height
            )));
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Draws one person's keypoints at the origin-relative layout.
fn draw_person(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, f64) {
    let scale = rng.random_range(cfg.min_scale..=cfg.max_scale);
    let flip = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
    let jitter = Normal::new(0.0, cfg.pose_jitter * scale).expect("validated sigma");
    let pts = cfg
        .template
        .points
        .iter()
        .map(|p| [flip * p[0] * scale + jitter.sample(rng), p[1] * scale + jitter.sample(rng)])
        .collect();
    (pts, scale)
}

/// Seeded scene of non-overlapping persons built from the template.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Vec<PoseAnnotation>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.random_range(cfg.min_persons..=cfg.max_persons);
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let mut out: Vec<PoseAnnotation> = Vec::with_capacity(count);
    for person in 0..count {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (pts, scale) = draw_person(cfg, &mut rng);
            let (x0, x1, y0, y1) = bounds(&pts);
            let m = cfg.template.margin * scale;
            let (bw, bh) = (x1 - x0 + 2.0 * m, y1 - y0 + 2.0 * m);
            if bw > w || bh > h {
                continue;
            }
            let left = rng.random_range(0.0..=(w - bw));
            let top = rng.random_range(0.0..=(h - bh));
            let (dx, dy) = (left + m - x0, top + m - y0);
            let bbox = BBox::new(left + bw / 2.0, top + bh / 2.0, bw, bh);
            let clear = out
                .iter()
                .all(|a| iou(&a.bbox, &bbox).is_ok_and(|v| v <= cfg.max_overlap_iou));
            if !clear {
                continue;
            }
            let keypoints: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
            placed = Some((bbox, keypoints));
            break;
        }
        let (bbox, mut keypoints) = placed.ok_or(SynthError::Placement(person))?;
        let visibility: Vec<u8> = (0..keypoints.len())
            .map(|_| if rng.random_bool(cfg.occlusion_prob) { 0 } else { 2 })
            .collect();
        for (p, &v) in keypoints.iter_mut().zip(&visibility) {
            if v == 0 {
                *p = [0.0, 0.0];
            }
        }
        out.push(PoseAnnotation { bbox, keypoints, visibility });
    }
    Ok(out)
}
