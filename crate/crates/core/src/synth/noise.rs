use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::codec::{
    assign_objects, encode_with_styles, objects_from_annotations, AnchorSet, AssignConfig, AssignmentRecord, GridSet, InverseConfig,
    InverseReport, ObjectStyle, PoseAnnotation, TargetObject,
};
use crate::geometry::BBox;
use crate::math::logit;

/// Parametric stand-in for network error. Coordinate noise is applied to the
/// targets before inverse encoding; confidences are set per object through
/// the objectness logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Jitter of pose-object keypoints, px.
    pub pose_sigma: f64,
    /// Jitter of keypoint-object centers per keypoint type, px.
    pub local_sigma: Vec<f64>,
    /// Objectness probability of pose objects; `None` saturates.
    pub pose_confidence: Option<f64>,
    /// Objectness probability per keypoint type; `None` saturates.
    pub keypoint_confidence: Option<Vec<f64>>,
    /// Standard deviation of the per-object objectness logit noise.
    pub confidence_jitter: f64,
    /// Chance, per real object, of adding a spurious keypoint object.
    pub false_positive_rate: f64,
    /// Chance of dropping each real object.
    pub false_negative_rate: f64,
    pub seed: u64,
}

/// Face keypoints are the most confidently localized, hips the least.
pub const ASYMMETRIC_KEYPOINT_CONFIDENCE: [f64; 17] = [
    0.85, 0.85, 0.85, 0.8, 0.8, 0.7, 0.7, 0.6, 0.6, 0.55, 0.55, 0.3, 0.3, 0.5, 0.5, 0.5, 0.5,
];

impl NoiseModel {
    pub fn exact(num_keypoints: usize) -> Self {
        Self {
            pose_sigma: 0.0,
            local_sigma: vec![0.0; num_keypoints],
            pose_confidence: None,
            keypoint_confidence: None,
            confidence_jitter: 0.0,
            false_positive_rate: 0.0,
            false_negative_rate: 0.0,
            seed: 0,
        }
    }

    /// Coarse pose-object keypoints and precise keypoint objects.
    pub fn asymmetric(pose_sigma: f64, local_sigma: f64, seed: u64) -> Self {
        Self {
            pose_sigma,
            local_sigma: vec![local_sigma; 17],
            pose_confidence: Some(0.9),
            keypoint_confidence: Some(ASYMMETRIC_KEYPOINT_CONFIDENCE.to_vec()),
            confidence_jitter: 0.5,
            false_positive_rate: 0.0,
            false_negative_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self, num_keypoints: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Noise(m));
        let sigma_ok = |s: f64| s >= 0.0 && s.is_finite();
        if !sigma_ok(self.pose_sigma) || !sigma_ok(self.confidence_jitter) || !self.local_sigma.iter().all(|&s| sigma_ok(s)) {
            return bad("standard deviations must be finite and non-negative".into());
        }
        if self.local_sigma.len() != num_keypoints {
            return bad(format!("{} local sigmas for {num_keypoints} keypoints", self.local_sigma.len()));
        }
        for (name, r) in [("false_positive_rate", self.false_positive_rate), ("false_negative_rate", self.false_negative_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} = {r} outside [0, 1]"));
            }
        }
        let prob_ok = |p: f64| p > 0.0 && p < 1.0;
        if self.pose_confidence.is_some_and(|p| !prob_ok(p)) {
            return bad("pose_confidence must lie in (0, 1)".into());
        }
        if let Some(c) = &self.keypoint_confidence {
            if c.len() != num_keypoints || !c.iter().all(|&p| prob_ok(p)) {
                return bad("keypoint_confidence needs one value in (0, 1) per keypoint".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedOutput {
    pub grids: GridSet,
    /// Assignment of the perturbed objects; spurious objects carry an
    /// annotation index equal to the number of annotations.
    pub record: AssignmentRecord,
    pub report: InverseReport,
    pub dropped: usize,
    pub spurious: usize,
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

/// Raw grids a network with the given error profile would emit for a scene.
pub fn simulate_network(annotations: &[PoseAnnotation], anchors: &AnchorSet, config: &AssignConfig, noise: &NoiseModel) -> Result<SimulatedOutput, SynthError> {
    noise.validate(config.num_keypoints)?;
    let inverse = InverseConfig::default();
    let sat = inverse.saturation;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let source = objects_from_annotations(annotations, config)?;

    let mut objects: Vec<TargetObject> = Vec::with_capacity(source.len());
    let mut dropped = 0;
    for obj in &source {
        if noise.false_negative_rate > 0.0 && rng.random_bool(noise.false_negative_rate) {
            dropped += 1;
            continue;
        }
        let mut obj = obj.clone();
        if obj.is_pose() {
            if noise.pose_sigma > 0.0 {
                let n = normal(noise.pose_sigma);
                for p in obj.keypoints.iter_mut().flatten() {
                    p[0] += n.sample(&mut rng);
                    p[1] += n.sample(&mut rng);
                }
            }
        } else {
            let sigma = noise.local_sigma[obj.class_index - 2];
            if sigma > 0.0 {
                let n = normal(sigma);
                obj.bbox = obj.bbox.translate(n.sample(&mut rng), n.sample(&mut rng));
            }
        }
        objects.push(obj);
    }

    let mut spurious = 0;
    if noise.false_positive_rate > 0.0 {
        let (w, h) = (f64::from(config.width), f64::from(config.height));
        for _ in 0..source.len() {
            if rng.random_bool(noise.false_positive_rate) {
                let k = rng.random_range(0..config.num_keypoints);
                let (x, y) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                objects.push(TargetObject {
                    annotation: annotations.len(),
                    class_index: k + 2,
                    bbox: BBox::square(x, y, config.keypoint_box_size),
                    keypoints: Vec::new(),
                });
                spurious += 1;
            }
        }
    }

    let jitter = (noise.confidence_jitter > 0.0).then(|| normal(noise.confidence_jitter));
    let styles: Vec<ObjectStyle> = objects
        .iter()
        .map(|obj| {
            let p = if obj.is_pose() {
                noise.pose_confidence
            } else {
                noise.keypoint_confidence.as_ref().map(|c| c[obj.class_index - 2])
            };
            let objectness_logit = match p {
                Some(p) => logit(p).expect("validated probability") + jitter.map_or(0.0, |n| n.sample(&mut rng)),
                None => sat,
            };
            ObjectStyle {
                objectness_logit,
                class_logit: sat,
            }
        })
        .collect();

    let record = assign_objects(objects, anchors, config)?;
    let (grids, report) = encode_with_styles(&record, anchors, &inverse, |i, _| styles[i])?;
    Ok(SimulatedOutput {
        grids,
        record,
        report,
        dropped,
        spurious,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{assign_targets, encode_inverse};
    use crate::synth::{generate_scene, SceneConfig};

    fn scene(seed: u64) -> Vec<PoseAnnotation> {
        generate_scene(&SceneConfig { seed, ..SceneConfig::default() }).unwrap()
    }

    #[test]
    fn zero_noise_equals_inverse_encoding() {
        let anchors = AnchorSet::default();
        let cfg = AssignConfig::default();
        let anns = scene(3);
        let sim = simulate_network(&anns, &anchors, &cfg, &NoiseModel::exact(17)).unwrap();
        let (_, record) = assign_targets(&anns, &anchors, &cfg).unwrap();
        let (grids, report) = encode_inverse(&record, &anchors, &InverseConfig::default()).unwrap();
        assert_eq!(sim.grids, grids);
        assert_eq!(sim.report, report);
    }

    #[test]
    fn noise_is_seeded() {
        let anchors = AnchorSet::default();
        let cfg = AssignConfig::default();
        let anns = scene(4);
        let mut noise = NoiseModel::asymmetric(8.0, 1.0, 11);
        noise.false_positive_rate = 0.1;
        noise.false_negative_rate = 0.1;
        let a = simulate_network(&anns, &anchors, &cfg, &noise).unwrap();
        let b = simulate_network(&anns, &anchors, &cfg, &noise).unwrap();
        assert_eq!(a, b);
        noise.seed = 12;
        let c = simulate_network(&anns, &anchors, &cfg, &noise).unwrap();
        assert_ne!(a.grids, c.grids);
    }

    #[test]
    fn full_false_negative_rate_drops_everything() {
        let anchors = AnchorSet::default();
        let cfg = AssignConfig::default();
        let anns = scene(5);
        let noise = NoiseModel { false_negative_rate: 1.0, ..NoiseModel::exact(17) };
        let sim = simulate_network(&anns, &anchors, &cfg, &noise).unwrap();
        assert!(sim.record.assigned.is_empty());
        assert_eq!(sim.dropped, sim.record.objects.len() + sim.dropped);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let anchors = AnchorSet::default();
        let cfg = AssignConfig::default();
        let mut noise = NoiseModel::exact(17);
        noise.pose_sigma = -1.0;
        assert!(simulate_network(&[], &anchors, &cfg, &noise).is_err());
        let noise = NoiseModel { pose_confidence: Some(1.0), ..NoiseModel::exact(17) };
        assert!(simulate_network(&[], &anchors, &cfg, &noise).is_err());
        assert!(simulate_network(&[], &anchors, &cfg, &NoiseModel::exact(14)).is_err());
    }
}
