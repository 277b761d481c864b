#![allow(dead_code)]

use kapao::codec::{AnchorSet, CellKind, Detection, GridSet, ObjectKind, PoseAnnotation, Slot, TargetGrids, TargetObject};
use kapao::geometry::BBox;
use kapao::metrics::{GroundTruth, PoseResult};
use kapao::synth::oracle::oracle_ciou;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const K: usize = 17;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bce(x: f64, y: f64) -> f64 {
    -(y * sig(x).ln() + (1.0 - y) * (1.0 - sig(x)).ln())
}

/// `[L_obj, L_box, L_cls, L_kps]` recomputed cell by cell with plain
/// sequential sums and the textbook BCE.
pub fn oracle_loss(pred: &GridSet, target: &TargetGrids, anchors: &AnchorSet, omega: &[f64]) -> [f64; 4] {
    let k = pred.num_keypoints;
    let mut out = [0.0; 4];
    for (level, g) in pred.grids.iter().enumerate() {
        let s = f64::from(g.stride);
        let t = &target.grids.grids[level].data;
        let mask = &target.mask.grids[level];
        let c = g.channels;
        let (mut obj, mut bx, mut cls, mut kps) = (0.0, 0.0, 0.0, 0.0);
        let (mut n_all, mut n_assigned, mut n_pose) = (0usize, 0usize, 0usize);
        for cell in 0..g.rows * g.cols * g.num_anchors {
            n_all += 1;
            let p = |ch: usize| f64::from(g.data[cell * c + ch]);
            let y = |ch: usize| f64::from(t[cell * c + ch]);
            if mask.kind[cell] == CellKind::Empty {
                obj += bce(p(0), 0.0);
                continue;
            }
            n_assigned += 1;
            let a = anchors.anchor(level, cell % g.num_anchors);
            let (aw, ah) = (a.w / s, a.h / s);
            let pb = BBox::new(
                2.0 * sig(p(1)) - 0.5,
                2.0 * sig(p(2)) - 0.5,
                aw * (2.0 * sig(p(3))).powi(2),
                ah * (2.0 * sig(p(4))).powi(2),
            );
            let tb = BBox::new(y(1), y(2), y(3), y(4));
            let ciou = oracle_ciou(&pb, &tb);
            obj += bce(p(0), ciou.clamp(0.0, 1.0));
            bx += 1.0 - ciou;
            let mut cell_cls = 0.0;
            for ch in 5..5 + k + 1 {
                cell_cls += bce(p(ch), y(ch));
            }
            cls += cell_cls / (k + 1) as f64;
            if mask.kind[cell] == CellKind::Pose {
                n_pose += 1;
                let mut cell_kps = 0.0;
                for kp in 0..k {
                    if mask.keypoints[cell] >> kp & 1 == 0 {
                        continue;
                    }
                    let (cx, cy) = (6 + k + 2 * kp, 7 + k + 2 * kp);
                    let dx = aw * (4.0 * sig(p(cx)) - 2.0) - y(cx);
                    let dy = ah * (4.0 * sig(p(cy)) - 2.0) - y(cy);
                    cell_kps += (dx * dx + dy * dy).sqrt();
                }
                kps += cell_kps;
            }
        }
        out[0] += omega[level] * obj / n_all as f64;
        if n_assigned > 0 {
            out[1] += bx / n_assigned as f64;
            out[2] += cls / n_assigned as f64;
        }
        if n_pose > 0 {
            out[3] += kps / n_pose as f64;
        }
    }
    out
}

/// Fills every logit with an independent draw from `[-spread, spread]`.
pub fn random_logits(shape: &GridSet, spread: f64, r: &mut ChaCha8Rng) -> GridSet {
    let mut g = shape.clone();
    for grid in &mut g.grids {
        for v in &mut grid.data {
            *v = r.random_range(-spread..spread) as f32;
        }
    }
    g
}

/// Confidence on a coarse lattice so that ties are common.
fn coarse_conf(r: &mut ChaCha8Rng, steps: u32) -> f64 {
    f64::from(r.random_range(1..=steps)) / f64::from(steps)
}

fn origin() -> Slot {
    Slot { level: 0, i: 0, j: 0, anchor: 0 }
}

pub fn detection(class_index: usize, bbox: BBox, confidence: f64, keypoints: Option<Vec<[f64; 2]>>) -> Detection {
    Detection {
        kind: if class_index == 1 { ObjectKind::Pose } else { ObjectKind::Keypoint },
        class_index,
        bbox,
        objectness: confidence,
        class_score: 1.0,
        confidence,
        keypoints,
        stride: 8,
        origin: origin(),
    }
}

/// Clustered boxes over a few classes, with duplicated boxes and tied scores.
pub fn random_nms_instance(r: &mut ChaCha8Rng, max_n: usize) -> Vec<Detection> {
    let n = r.random_range(0..=max_n);
    let centers: Vec<(f64, f64)> = (0..r.random_range(1..=12))
        .map(|_| (r.random_range(0.0..256.0), r.random_range(0.0..256.0)))
        .collect();
    let mut out: Vec<Detection> = Vec::with_capacity(n);
    while out.len() < n {
        if !out.is_empty() && r.random_bool(0.05) {
            let mut d = out[r.random_range(0..out.len())].clone();
            d.confidence = coarse_conf(r, 20);
            out.push(d);
            continue;
        }
        let (cx, cy) = centers[r.random_range(0..centers.len())];
        let b = BBox::new(
            cx + r.random_range(-20.0..20.0),
            cy + r.random_range(-20.0..20.0),
            r.random_range(2.0..80.0),
            r.random_range(2.0..80.0),
        );
        out.push(detection(r.random_range(1..=4), b, coarse_conf(r, 20), None));
    }
    out
}

pub fn random_pose_keypoints(r: &mut ChaCha8Rng, cx: f64, cy: f64) -> Vec<[f64; 2]> {
    (0..K)
        .map(|_| [cx + r.random_range(-60.0..60.0), cy + r.random_range(-120.0..120.0)])
        .collect()
}

/// Poses and keypoint objects scattered around them.
pub fn random_fuse_instance(r: &mut ChaCha8Rng, max_total: usize) -> (Vec<Detection>, Vec<Detection>) {
    let np = r.random_range(0..=20);
    let mut poses: Vec<Detection> = Vec::with_capacity(np);
    for _ in 0..np {
        if !poses.is_empty() && r.random_bool(0.1) {
            let mut d = poses[r.random_range(0..poses.len())].clone();
            d.confidence = coarse_conf(r, 10);
            poses.push(d);
            continue;
        }
        let (cx, cy) = (r.random_range(0.0..640.0), r.random_range(0.0..640.0));
        let kps = random_pose_keypoints(r, cx, cy);
        poses.push(detection(1, BBox::new(cx, cy, 120.0, 240.0), coarse_conf(r, 10), Some(kps)));
    }
    let nk = r.random_range(0..=max_total - np);
    let mut kps = Vec::with_capacity(nk);
    for _ in 0..nk {
        let k = r.random_range(0..K);
        let (x, y) = if !poses.is_empty() && r.random_bool(0.8) {
            let p = &poses[r.random_range(0..poses.len())];
            let z = p.keypoints.as_ref().unwrap()[k];
            (z[0] + r.random_range(-40.0..40.0), z[1] + r.random_range(-40.0..40.0))
        } else {
            (r.random_range(0.0..640.0), r.random_range(0.0..640.0))
        };
        kps.push(detection(k + 2, BBox::square(x, y, 64.0), coarse_conf(r, 25), None));
    }
    (poses, kps)
}

/// Objects in a `side`-pixel image. Half the centers sit on a 2 px lattice
/// so that in-cell fractions of exactly 0, 0.25, 0.5 and 0.75 occur.
pub fn random_objects(r: &mut ChaCha8Rng, side: f64, max_n: usize) -> Vec<TargetObject> {
    let n = r.random_range(0..=max_n);
    (0..n)
        .map(|index| {
            let coord = |r: &mut ChaCha8Rng| {
                if r.random_bool(0.5) {
                    2.0 * f64::from(r.random_range(0..=(side as u32 / 2)))
                } else {
                    r.random_range(0.0..=side)
                }
            };
            let (cx, cy) = (coord(r), coord(r));
            let (w, h) = if r.random_bool(0.3) {
                (64.0, 64.0)
            } else {
                (2f64.powf(r.random_range(1.0..8.5)), 2f64.powf(r.random_range(1.0..8.5)))
            };
            let pose = r.random_bool(0.3);
            TargetObject {
                annotation: index,
                class_index: if pose { 1 } else { r.random_range(2..=K + 1) },
                bbox: BBox::new(cx, cy, w, h),
                keypoints: if pose { vec![None; K] } else { Vec::new() },
            }
        })
        .collect()
}

pub fn random_annotation(r: &mut ChaCha8Rng) -> PoseAnnotation {
    let (cx, cy) = (r.random_range(100.0..540.0), r.random_range(100.0..540.0));
    let (w, h) = (r.random_range(20.0..200.0), r.random_range(40.0..300.0));
    let keypoints = (0..K)
        .map(|_| [cx + r.random_range(-w / 2.0..w / 2.0), cy + r.random_range(-h / 2.0..h / 2.0)])
        .collect();
    let visibility = (0..K).map(|_| if r.random_bool(0.2) { 0 } else { r.random_range(1..=2) }).collect();
    PoseAnnotation {
        bbox: BBox::new(cx, cy, w, h),
        keypoints,
        visibility,
    }
}

/// Ground truths over a few images and results that are noisy copies of them
/// plus clutter. At least one ground truth has a labeled keypoint.
pub fn random_ap_instance(r: &mut ChaCha8Rng) -> (Vec<PoseResult>, Vec<GroundTruth>) {
    let images = r.random_range(1..=5u64);
    let mut gts = Vec::new();
    let mut results = Vec::new();
    for image_id in 0..images {
        for _ in 0..r.random_range(1..=8) {
            let a = random_annotation(r);
            if r.random_bool(0.85) {
                let sigma = r.random_range(0.0..0.15) * a.bbox.w.min(a.bbox.h);
                let copies = if r.random_bool(0.1) { 2 } else { 1 };
                for _ in 0..copies {
                    results.push(PoseResult {
                        image_id,
                        keypoints: a
                            .keypoints
                            .iter()
                            .map(|p| [p[0] + r.random_range(-sigma..=sigma), p[1] + r.random_range(-sigma..=sigma), 1.0])
                            .collect(),
                        score: coarse_conf(r, 10),
                    });
                }
            }
            gts.push(GroundTruth { image_id, annotation: a });
        }
        for _ in 0..r.random_range(0..=4) {
            let a = random_annotation(r);
            results.push(PoseResult {
                image_id,
                keypoints: a.keypoints.iter().map(|p| [p[0], p[1], 0.5]).collect(),
                score: coarse_conf(r, 10),
            });
        }
    }
    if !gts.iter().any(|g| g.annotation.labeled_count() > 0) {
        let mut a = random_annotation(r);
        a.visibility[0] = 2;
        gts.push(GroundTruth { image_id: 0, annotation: a });
    }
    (results, gts)
}
