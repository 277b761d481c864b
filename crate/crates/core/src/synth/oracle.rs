//! Brute-force reference implementations. They share types with the
//! production code but none of its logic, and favor explicit loops over
//! speed. Inputs are capped at [`ORACLE_CAP`] items.

use std::f64::consts::PI;

use super::SynthError;
use crate::codec::{AnchorSet, AssignConfig, Detection, PoseAnnotation, Slot, TargetObject};
use crate::geometry::BBox;
use crate::metrics::{GroundTruth, OksParams, PoseResult};
use crate::pipeline::{FusedKeypoint, FusedPose, KeypointSource, Overlap};

pub const ORACLE_CAP: usize = 500;

fn check_cap(size: usize) -> Result<(), SynthError> {
    if size > ORACLE_CAP {
        Err(SynthError::CapExceeded { size, cap: ORACLE_CAP })
    } else {
        Ok(())
    }
}

/// IoU from corner coordinates. Areas use the same corner spans as the
/// intersection so identical boxes score exactly 1.
pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let (al, ar, at, ab) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0, a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bl, br, bt, bb) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0, b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let mut iw = ar.min(br) - al.max(bl);
    if iw < 0.0 {
        iw = 0.0;
    }
    let mut ih = ab.min(bb) - at.max(bt);
    if ih < 0.0 {
        ih = 0.0;
    }
    let inter = iw * ih;
    let union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn aspect_angle(w: f64, h: f64) -> f64 {
    if h > 0.0 {
        (w / h).atan()
    } else if w > 0.0 {
        PI / 2.0
    } else {
        0.0
    }
}

/// CIoU from corner coordinates.
pub fn oracle_ciou(a: &BBox, b: &BBox) -> f64 {
    let iou = oracle_iou(a, b);
    let left = (a.cx - a.w / 2.0).min(b.cx - b.w / 2.0);
    let right = (a.cx + a.w / 2.0).max(b.cx + b.w / 2.0);
    let top = (a.cy - a.h / 2.0).min(b.cy - b.h / 2.0);
    let bottom = (a.cy + a.h / 2.0).max(b.cy + b.h / 2.0);
    let c2 = (right - left).powi(2) + (bottom - top).powi(2);
    let rho2 = (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2);
    let penalty = if c2 > 0.0 { rho2 / c2 } else { 0.0 };
    let diff = aspect_angle(b.w, b.h) - aspect_angle(a.w, a.h);
    let v = 4.0 / (PI * PI) * diff * diff;
    let alpha = if v > 0.0 { v / (1.0 - iou + v) } else { 0.0 };
    iou - penalty - alpha * v
}

/// True when `a` comes before `b` in confidence-descending, index-ascending order.
fn ranks_before(conf: &[f64], a: usize, b: usize) -> bool {
    conf[a] > conf[b] || (conf[a] == conf[b] && a < b)
}

/// Order by selection: repeatedly take the best remaining index.
fn selection_order(conf: &[f64]) -> Vec<usize> {
    let mut used = vec![false; conf.len()];
    let mut order = Vec::with_capacity(conf.len());
    for _ in 0..conf.len() {
        let mut best: Option<usize> = None;
        for i in 0..conf.len() {
            if !used[i] && best.is_none_or(|b| ranks_before(conf, i, b)) {
                best = Some(i);
            }
        }
        let b = best.expect("an unused index remains");
        used[b] = true;
        order.push(b);
    }
    order
}

/// Kept indices, in confidence order.
pub fn oracle_nms(dets: &[Detection], threshold: f64, per_class: bool, overlap: Overlap) -> Result<Vec<usize>, SynthError> {
    check_cap(dets.len())?;
    let conf: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    let order = selection_order(&conf);
    let mut alive = vec![true; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if per_class && dets[j].class_index != dets[i].class_index {
                continue;
            }
            let o = match overlap {
                Overlap::Ciou => oracle_ciou(&dets[i].bbox, &dets[j].bbox),
                Overlap::Iou => oracle_iou(&dets[i].bbox, &dets[j].bbox),
            };
            if o > threshold {
                alive[j] = false;
            }
        }
    }
    Ok(kept)
}

/// Keypoint-object fusion re-evaluated with explicit loops. Poses must carry
/// keypoints; keypoint objects have class `k + 2`.
pub fn oracle_fuse(poses: &[Detection], kps: &[Detection], max_distance: f64, min_pose_conf: f64) -> Result<Vec<FusedPose>, SynthError> {
    check_cap(poses.len() + kps.len())?;
    let mut table: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut from_obj: Vec<Vec<bool>> = Vec::new();
    for p in poses {
        let pts = p.keypoints.clone().unwrap_or_default();
        let mut rows = Vec::new();
        let mut flags = Vec::new();
        for z in &pts {
            rows.push([z[0], z[1], 0.0]);
            flags.push(false);
        }
        table.push(rows);
        from_obj.push(flags);
    }
    let conf: Vec<f64> = kps.iter().map(|d| d.confidence).collect();
    for &o in &selection_order(&conf) {
        let k = kps[o].class_index - 2;
        let ck = kps[o].confidence;
        let (x, y) = (kps[o].bbox.cx, kps[o].bbox.cy);
        let mut m: Option<usize> = None;
        let mut dm = f64::INFINITY;
        for i in 0..poses.len() {
            if !(poses[i].confidence > min_pose_conf) {
                continue;
            }
            let dx = table[i][k][0] - x;
            let dy = table[i][k][1] - y;
            let d = (dx * dx + dy * dy).sqrt();
            if m.is_none() || d < dm {
                m = Some(i);
                dm = d;
            }
        }
        if let Some(m) = m {
            if dm < max_distance && table[m][k][2] < ck {
                table[m][k] = [x, y, ck];
                from_obj[m][k] = true;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..poses.len() {
        let mut keypoints = Vec::new();
        for k in 0..table[i].len() {
            keypoints.push(FusedKeypoint {
                x: table[i][k][0],
                y: table[i][k][1],
                conf: table[i][k][2],
                source: if from_obj[i][k] {
                    KeypointSource::KeypointObject
                } else {
                    KeypointSource::PoseObject
                },
            });
        }
        out.push(FusedPose {
            keypoints,
            score: poses[i].confidence,
            bbox: poses[i].bbox,
        });
    }
    Ok(out)
}

/// Whether a center at grid coordinate `g` makes cell `c` of an axis with
/// `n` cells responsible, as the containing cell (`Some(true)`) or as the
/// neighbor on the nearer side (`Some(false)`).
fn axis_role(g: f64, c: usize, n: usize) -> Option<bool> {
    // containing cell: [c, c + 1), with a center on the far edge kept in the last cell
    let mut home = n - 1;
    for cell in 0..n {
        if g < (cell + 1) as f64 {
            home = cell;
            break;
        }
    }
    if c == home {
        return Some(true);
    }
    let t = g - c as f64;
    // offsets in [1, 1.5) reach back one cell, offsets in [-0.5, 0) forward one
    if (1.0..1.5).contains(&t) && c + 1 == home {
        return Some(false);
    }
    if (-0.5..0.0).contains(&t) && c == home + 1 {
        return Some(false);
    }
    None
}

/// Final owner of every claimed slot, sorted by slot. Each slot is tested
/// against every object; the last object in order wins.
pub fn oracle_assign(objects: &[TargetObject], anchors: &AnchorSet, cfg: &AssignConfig) -> Result<Vec<(Slot, usize)>, SynthError> {
    check_cap(objects.len())?;
    let mut out = Vec::new();
    for (level, lv) in anchors.levels().iter().enumerate() {
        let s = f64::from(lv.stride);
        let rows = (cfg.height / lv.stride) as usize;
        let cols = (cfg.width / lv.stride) as usize;
        for i in 0..cols {
            for j in 0..rows {
                for (a, anchor) in lv.anchors.iter().enumerate() {
                    let mut owner = None;
                    for (n, obj) in objects.iter().enumerate() {
                        let b = &obj.bbox;
                        let r = [b.w / anchor.w, anchor.w / b.w, b.h / anchor.h, anchor.h / b.h];
                        let mut worst = 0.0f64;
                        for x in r {
                            if x.is_nan() || x > worst {
                                worst = if x.is_nan() { f64::INFINITY } else { x };
                            }
                        }
                        if !(worst < cfg.anchor_tolerance) {
                            continue;
                        }
                        let (gx, gy) = ((b.cx / s).max(0.0), (b.cy / s).max(0.0));
                        let rx = axis_role(gx, i, cols);
                        let ry = axis_role(gy, j, rows);
                        let claims = matches!((rx, ry), (Some(true), Some(_)) | (Some(_), Some(true)));
                        if claims {
                            owner = Some(n);
                        }
                    }
                    if let Some(n) = owner {
                        out.push((Slot { level, i, j, anchor: a }, n));
                    }
                }
            }
        }
    }
    out.sort_by_key(|&(slot, _)| slot);
    Ok(out)
}

fn oracle_oks(pred: &[[f64; 3]], gt: &PoseAnnotation, k: &[f64]) -> f64 {
    let area = gt.bbox.w * gt.bbox.h + f64::EPSILON;
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..k.len() {
        if gt.visibility[i] == 0 {
            continue;
        }
        let d2 = (pred[i][0] - gt.keypoints[i][0]).powi(2) + (pred[i][1] - gt.keypoints[i][1]).powi(2);
        total += (-d2 / (k[i] * k[i]) / area / 2.0).exp();
        count += 1.0;
    }
    total / count
}

/// `(AP, AR)` averaged over OKS thresholds 0.50:0.05:0.95. Interpolated
/// precision at recall r is the best precision at any rank reaching r.
pub fn oracle_ap(results: &[PoseResult], gts: &[GroundTruth], params: &OksParams, max_dets: Option<usize>) -> Result<(f64, f64), SynthError> {
    check_cap(results.len())?;
    check_cap(gts.len())?;
    let mut images: Vec<u64> = gts.iter().map(|g| g.image_id).collect();
    images.sort_unstable();
    images.dedup();
    let total_gt = gts.iter().filter(|g| g.annotation.visibility.iter().any(|&v| v > 0)).count();

    let mut ap_sum = 0.0;
    let mut ar_sum = 0.0;
    for step in 0..10 {
        let t = f64::from(50 + 5 * step) / 100.0;
        // (score, image position, rank, matched)
        let mut marks: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (pos, &id) in images.iter().enumerate() {
            let truth: Vec<&PoseAnnotation> = gts
                .iter()
                .filter(|g| g.image_id == id && g.annotation.visibility.iter().any(|&v| v > 0))
                .map(|g| &g.annotation)
                .collect();
            let mine: Vec<&PoseResult> = results.iter().filter(|r| r.image_id == id).collect();
            let scores: Vec<f64> = mine.iter().map(|r| r.score).collect();
            let mut order = selection_order(&scores);
            if let Some(m) = max_dets {
                order.truncate(m);
            }
            let mut taken = vec![false; truth.len()];
            for (rank, &d) in order.iter().enumerate() {
                let mut pick: Option<usize> = None;
                let mut pick_oks = 0.0;
                for g in 0..truth.len() {
                    if taken[g] {
                        continue;
                    }
                    let o = oracle_oks(&mine[d].keypoints, truth[g], &params.k);
                    if o >= t && (pick.is_none() || o > pick_oks) {
                        pick = Some(g);
                        pick_oks = o;
                    }
                }
                if let Some(g) = pick {
                    taken[g] = true;
                }
                marks.push((mine[d].score, pos, rank, pick.is_some()));
            }
        }
        let mut sorted = Vec::new();
        let mut used = vec![false; marks.len()];
        for _ in 0..marks.len() {
            let mut best: Option<usize> = None;
            for i in 0..marks.len() {
                if used[i] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (x, y) = (marks[i], marks[b]);
                        x.0 > y.0 || (x.0 == y.0 && (x.1, x.2) < (y.1, y.2))
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            let b = best.expect("an unused mark remains");
            used[b] = true;
            sorted.push(marks[b].3);
        }
        let mut recall = Vec::new();
        let mut precision = Vec::new();
        let mut tp = 0.0;
        for (n, &hit) in sorted.iter().enumerate() {
            if hit {
                tp += 1.0;
            }
            recall.push(tp / total_gt as f64);
            precision.push(tp / (n + 1) as f64);
        }
        let mut area = 0.0;
        for r in 0..101 {
            let level = r as f64 / 100.0;
            let mut best = 0.0f64;
            for n in 0..sorted.len() {
                if recall[n] >= level && precision[n] > best {
                    best = precision[n];
                }
            }
            area += best;
        }
        ap_sum += area / 101.0;
        ar_sum += recall.last().copied().unwrap_or(0.0);
    }
    Ok((ap_sum / 10.0, ar_sum / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{ObjectKind, Slot};

    fn det(class_index: usize, x: f64, conf: f64) -> Detection {
        Detection {
            kind: if class_index == 1 { ObjectKind::Pose } else { ObjectKind::Keypoint },
            class_index,
            bbox: BBox::new(x, 50.0, 40.0, 40.0),
            objectness: conf,
            class_score: 1.0,
            confidence: conf,
            keypoints: (class_index == 1).then(|| vec![[x, 50.0]; 17]),
            stride: 8,
            origin: Slot { level: 0, i: 0, j: 0, anchor: 0 },
        }
    }

    #[test]
    fn empty_and_single_inputs() {
        assert!(oracle_nms(&[], 0.5, false, Overlap::Ciou).unwrap().is_empty());
        assert!(oracle_fuse(&[], &[], 50.0, 0.3).unwrap().is_empty());
        assert_eq!(oracle_nms(&[det(1, 0.0, 0.5)], 0.5, false, Overlap::Ciou).unwrap(), vec![0]);
        let fused = oracle_fuse(&[det(1, 10.0, 0.9)], &[], 50.0, 0.3).unwrap();
        assert_eq!(fused[0].keypoints.len(), 17);
        assert!(fused[0].keypoints.iter().all(|k| k.conf == 0.0));
        let anchors = AnchorSet::default();
        assert!(oracle_assign(&[], &anchors, &AssignConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn cap_is_enforced() {
        let dets = vec![det(2, 0.0, 0.5); ORACLE_CAP + 1];
        assert!(matches!(oracle_nms(&dets, 0.5, true, Overlap::Ciou), Err(SynthError::CapExceeded { .. })));
    }

    #[test]
    fn corner_ciou_matches_closed_form() {
        let a = BBox::new(5.0, 5.0, 4.0, 4.0);
        let b = BBox::new(6.0, 5.0, 4.0, 4.0);
        // IoU 12/20, enclosing diagonal^2 = 25 + 16, no aspect term
        assert!((oracle_ciou(&a, &b) - (0.6 - 1.0 / 41.0)).abs() < 1e-15);
    }

    #[test]
    fn axis_roles() {
        assert_eq!(axis_role(3.2, 3, 10), Some(true));
        assert_eq!(axis_role(3.2, 2, 10), Some(false));
        assert_eq!(axis_role(3.2, 4, 10), None);
        assert_eq!(axis_role(3.7, 4, 10), Some(false));
        assert_eq!(axis_role(3.5, 4, 10), Some(false));
        assert_eq!(axis_role(0.2, 0, 10), Some(true));
        assert_eq!(axis_role(10.0, 9, 10), Some(true));
    }
}
