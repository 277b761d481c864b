//! Multi-task training loss `L(pred, target)` for a single image, with its
//! component breakdown and analytic logit gradients for the box and keypoint
//! terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{AnchorSet, CellKind, Channels, CodecError, GridSet, Slot, TargetGrids};
use crate::geometry::{ciou_grad_with, ciou_unchecked, AlphaMode, BBox, GeometryError};
use crate::math::{bce_with_logits, pairwise_sum, sigmoid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("prediction and target grids differ in shape: {0}")]
    ShapeMismatch(String),
    #[error("target mask missing or malformed")]
    MaskMissing,
    #[error("expected {expected} grid weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Loss weights. `omega` balances the objectness term across grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub omega: Vec<f64>,
    pub lambda_obj: f64,
    pub lambda_box: f64,
    pub lambda_cls: f64,
    pub lambda_kps: f64,
    pub batch_size: f64,
}

impl LossWeights {
    /// Default hyperparameters for `K` keypoints, input width `w` and
    /// `n` output grids.
    pub fn defaults(num_keypoints: usize, width: u32, num_grids: usize, batch_size: usize) -> Self {
        let per_grid = 3.0 / num_grids as f64;
        let wr = f64::from(width) / 640.0;
        let omega = match num_grids {
            4 => vec![4.0, 1.0, 0.25, 0.06],
            3 => vec![4.0, 1.0, 0.4],
            n => vec![1.0; n],
        };
        Self {
            omega,
            lambda_obj: 0.7 * wr * wr * per_grid,
            lambda_box: 0.05 * per_grid,
            lambda_cls: 0.3 * (num_keypoints as f64 + 1.0) / 80.0 * per_grid,
            lambda_kps: 0.025 * per_grid,
            batch_size: batch_size as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelLoss {
    pub obj: f64,
    pub bbox: f64,
    pub cls: f64,
    pub kps: f64,
    pub assigned: usize,
    pub pose_assigned: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub obj: f64,
    pub bbox: f64,
    pub cls: f64,
    pub kps: f64,
    pub per_level: Vec<LevelLoss>,
}

/// Read access to predicted logits, `index` being the flat position inside
/// the level's payload.
pub trait LogitSource {
    fn logit(&self, level: usize, index: usize) -> f64;
}

impl LogitSource for GridSet {
    fn logit(&self, level: usize, index: usize) -> f64 {
        f64::from(self.grids[level].data[index])
    }
}

impl LogitSource for [Vec<f64>] {
    fn logit(&self, level: usize, index: usize) -> f64 {
        self[level][index]
    }
}

impl LogitSource for Vec<Vec<f64>> {
    fn logit(&self, level: usize, index: usize) -> f64 {
        self[level][index]
    }
}

fn check_shapes(pred: &GridSet, target: &TargetGrids, anchors: &AnchorSet) -> Result<(), LossError> {
    pred.check_anchors(anchors)?;
    let t = &target.grids;
    if pred.num_keypoints != t.num_keypoints || pred.grids.len() != t.grids.len() {
        return Err(LossError::ShapeMismatch("keypoint or grid count".into()));
    }
    for (p, q) in pred.grids.iter().zip(&t.grids) {
        if (p.stride, p.rows, p.cols, p.num_anchors, p.channels) != (q.stride, q.rows, q.cols, q.num_anchors, q.channels) {
            return Err(LossError::ShapeMismatch(format!("stride {} grid", p.stride)));
        }
    }
    if target.mask.grids.len() != t.grids.len() {
        return Err(LossError::MaskMissing);
    }
    for (m, g) in target.mask.grids.iter().zip(&t.grids) {
        if m.kind.len() != g.cell_anchors() || m.keypoints.len() != g.cell_anchors() {
            return Err(LossError::MaskMissing);
        }
    }
    Ok(())
}

/// Decoded box `t` in grid units and the box-logit chain factors `dt/dt'`.
fn decode_box(src: &(impl LogitSource + ?Sized), level: usize, base: usize, aw: f64, ah: f64) -> ([f64; 4], [f64; 4]) {
    let s: [f64; 4] = std::array::from_fn(|c| sigmoid(src.logit(level, base + Channels::BOX + c)));
    let t = [
        2.0 * s[0] - 0.5,
        2.0 * s[1] - 0.5,
        aw * 4.0 * s[2] * s[2],
        ah * 4.0 * s[3] * s[3],
    ];
    let dt = [
        2.0 * s[0] * (1.0 - s[0]),
        2.0 * s[1] * (1.0 - s[1]),
        aw * 8.0 * s[2] * s[2] * (1.0 - s[2]),
        ah * 8.0 * s[3] * s[3] * (1.0 - s[3]),
    ];
    (t, dt)
}

fn target_box(target: &GridSet, level: usize, base: usize) -> [f64; 4] {
    let d = &target.grids[level].data;
    std::array::from_fn(|c| f64::from(d[base + Channels::BOX + c]))
}

/// Loss components of one image.
pub fn loss_components(pred: &GridSet, target: &TargetGrids, anchors: &AnchorSet, weights: &LossWeights) -> Result<LossComponents, LossError> {
    loss_components_from(pred, pred, target, anchors, weights)
}

/// As [`loss_components`], reading predicted logits from `src`, which must
/// have the geometry of `shape`.
pub fn loss_components_from(src: &(impl LogitSource + ?Sized), shape: &GridSet, target: &TargetGrids, anchors: &AnchorSet, weights: &LossWeights) -> Result<LossComponents, LossError> {
    check_shapes(shape, target, anchors)?;
    if weights.omega.len() != shape.grids.len() {
        return Err(LossError::WeightCount {
            expected: shape.grids.len(),
            got: weights.omega.len(),
        });
    }
    let ch = shape.channels();
    let mut out = LossComponents::default();
    for (level, g) in shape.grids.iter().enumerate() {
        let stride = f64::from(g.stride);
        let mask = &target.mask.grids[level];
        let n = g.cell_anchors();
        let mut obj_terms = Vec::with_capacity(n);
        let mut box_terms = Vec::new();
        let mut cls_terms = Vec::new();
        let mut kps_terms = Vec::new();
        for cell in 0..n {
            let base = cell * g.channels;
            let obj_logit = src.logit(level, base + Channels::OBJECTNESS);
            let kind = mask.kind[cell];
            if kind == CellKind::Empty {
                obj_terms.push(bce_with_logits(obj_logit, 0.0));
                continue;
            }
            let anchor = anchors.anchor(level, cell % g.num_anchors);
            let (aw, ah) = (anchor.w / stride, anchor.h / stride);
            let (t_hat, _) = decode_box(src, level, base, aw, ah);
            let t = target_box(&target.grids, level, base);
            let c = ciou_unchecked(&BBox::from_array(t_hat), &BBox::from_array(t));
            obj_terms.push(bce_with_logits(obj_logit, c.clamp(0.0, 1.0)));
            box_terms.push(1.0 - c);

            let tdata = &target.grids.grids[level].data;
            let cls: Vec<f64> = (1..=ch.num_classes())
                .map(|k| bce_with_logits(src.logit(level, base + ch.class(k)), f64::from(tdata[base + ch.class(k)])))
                .collect();
            cls_terms.push(pairwise_sum(&cls) / ch.num_classes() as f64);

            if kind == CellKind::Pose {
                let mut kp = Vec::with_capacity(ch.num_keypoints);
                for k in 0..ch.num_keypoints {
                    if !mask.keypoint_in_loss(cell, k) {
                        continue;
                    }
                    let (cx, cy) = ch.keypoint(k);
                    let vx = aw * (4.0 * sigmoid(src.logit(level, base + cx)) - 2.0);
                    let vy = ah * (4.0 * sigmoid(src.logit(level, base + cy)) - 2.0);
                    let dx = vx - f64::from(tdata[base + cx]);
                    let dy = vy - f64::from(tdata[base + cy]);
                    kp.push(dx.hypot(dy));
                }
                kps_terms.push(pairwise_sum(&kp));
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { pairwise_sum(v) / v.len() as f64 };
        let lv = LevelLoss {
            obj: weights.omega[level] * pairwise_sum(&obj_terms) / n as f64,
            bbox: mean(&box_terms),
            cls: mean(&cls_terms),
            kps: mean(&kps_terms),
            assigned: box_terms.len(),
            pose_assigned: kps_terms.len(),
        };
        out.obj += lv.obj;
        out.bbox += lv.bbox;
        out.cls += lv.cls;
        out.kps += lv.kps;
        out.per_level.push(lv);
    }
    Ok(out)
}

/// `N_b (l_obj L_obj + l_box L_box + l_cls L_cls + l_kps L_kps)`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.batch_size * (w.lambda_obj * c.obj + w.lambda_box * c.bbox + w.lambda_cls * c.cls + w.lambda_kps * c.kps)
}

/// Loss over several images: components are averaged over images, then the
/// total is scaled by the number of images.
pub fn batch_loss(batch: &[(&GridSet, &TargetGrids)], anchors: &AnchorSet, weights: &LossWeights) -> Result<(LossComponents, f64), LossError> {
    let mut sum = LossComponents::default();
    for (pred, target) in batch {
        let c = loss_components(pred, target, anchors, weights)?;
        sum.obj += c.obj;
        sum.bbox += c.bbox;
        sum.cls += c.cls;
        sum.kps += c.kps;
    }
    let n = batch.len().max(1) as f64;
    let mean = LossComponents {
        obj: sum.obj / n,
        bbox: sum.bbox / n,
        cls: sum.cls / n,
        kps: sum.kps / n,
        per_level: Vec::new(),
    };
    let w = LossWeights {
        batch_size: batch.len() as f64,
        ..weights.clone()
    };
    let total = total_loss(&mean, &w);
    Ok((mean, total))
}

/// Derivative of a loss term with respect to one predicted logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitGrad {
    pub slot: Slot,
    pub channel: usize,
    pub value: f64,
}

fn slot_of(g: &crate::codec::Grid, level: usize, cell: usize) -> Slot {
    let a = cell % g.num_anchors;
    let rc = cell / g.num_anchors;
    Slot {
        level,
        i: rc % g.cols,
        j: rc / g.cols,
        anchor: a,
    }
}

/// `dL_kps / d logit` for every keypoint logit of every assigned pose cell.
/// A keypoint sitting exactly on its target contributes a zero subgradient.
pub fn keypoint_loss_grad(src: &(impl LogitSource + ?Sized), shape: &GridSet, target: &TargetGrids, anchors: &AnchorSet) -> Result<Vec<LogitGrad>, LossError> {
    check_shapes(shape, target, anchors)?;
    let ch = shape.channels();
    let mut out = Vec::new();
    for (level, g) in shape.grids.iter().enumerate() {
        let stride = f64::from(g.stride);
        let mask = &target.mask.grids[level];
        let n_pose = mask.kind.iter().filter(|&&k| k == CellKind::Pose).count();
        if n_pose == 0 {
            continue;
        }
        let tdata = &target.grids.grids[level].data;
        for cell in 0..g.cell_anchors() {
            if mask.kind[cell] != CellKind::Pose {
                continue;
            }
            let base = cell * g.channels;
            let anchor = anchors.anchor(level, cell % g.num_anchors);
            let (aw, ah) = (anchor.w / stride, anchor.h / stride);
            for k in 0..ch.num_keypoints {
                if !mask.keypoint_in_loss(cell, k) {
                    continue;
                }
                let (cx, cy) = ch.keypoint(k);
                let sx = sigmoid(src.logit(level, base + cx));
                let sy = sigmoid(src.logit(level, base + cy));
                let dx = aw * (4.0 * sx - 2.0) - f64::from(tdata[base + cx]);
                let dy = ah * (4.0 * sy - 2.0) - f64::from(tdata[base + cy]);
                let norm = dx.hypot(dy);
                let (gx, gy) = if norm > 0.0 {
                    (dx / norm * aw * 4.0 * sx * (1.0 - sx), dy / norm * ah * 4.0 * sy * (1.0 - sy))
                } else {
                    (0.0, 0.0)
                };
                let slot = slot_of(g, level, cell);
                let scale = 1.0 / n_pose as f64;
                out.push(LogitGrad { slot, channel: cx, value: gx * scale });
                out.push(LogitGrad { slot, channel: cy, value: gy * scale });
            }
        }
    }
    Ok(out)
}

/// `dL_box / d logit` for the four box logits of every assigned cell, using
/// the exact CIoU gradient.
pub fn box_loss_grad(src: &(impl LogitSource + ?Sized), shape: &GridSet, target: &TargetGrids, anchors: &AnchorSet) -> Result<Vec<LogitGrad>, LossError> {
    check_shapes(shape, target, anchors)?;
    let mut out = Vec::new();
    for (level, g) in shape.grids.iter().enumerate() {
        let stride = f64::from(g.stride);
        let mask = &target.mask.grids[level];
        let n = mask.kind.iter().filter(|&&k| k != CellKind::Empty).count();
        for cell in 0..g.cell_anchors() {
            if mask.kind[cell] == CellKind::Empty {
                continue;
            }
            let base = cell * g.channels;
            let anchor = anchors.anchor(level, cell % g.num_anchors);
            let (t_hat, dt) = decode_box(src, level, base, anchor.w / stride, anchor.h / stride);
            let t = target_box(&target.grids, level, base);
            let dc = ciou_grad_with(&BBox::from_array(t_hat), &BBox::from_array(t), AlphaMode::Exact)?;
            let slot = slot_of(g, level, cell);
            for c in 0..4 {
                out.push(LogitGrad {
                    slot,
                    channel: Channels::BOX + c,
                    value: -dc[c] * dt[c] / n as f64,
                });
            }
        }
    }
    Ok(out)
}
