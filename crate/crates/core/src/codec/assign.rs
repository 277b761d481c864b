use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AnchorSet, CellKind, Channels, CodecError, GridSet, MaskGrid, PoseAnnotation, Slot, TargetGrids, TargetMask};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    pub height: u32,
    pub width: u32,
    pub num_keypoints: usize,
    /// Side of the square keypoint-object box, px.
    pub keypoint_box_size: f64,
    /// Largest accepted object/anchor side ratio (exclusive).
    pub anchor_tolerance: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            height: 1280,
            width: 1280,
            num_keypoints: 17,
            keypoint_box_size: 64.0,
            anchor_tolerance: 4.0,
        }
    }
}

/// An object to be written into the target grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetObject {
    /// Index of the source annotation.
    pub annotation: usize,
    /// 1 for a pose object, `k + 1` for keypoint object `k`.
    pub class_index: usize,
    /// Image-space box, px.
    pub bbox: BBox,
    /// Pose objects only: keypoints that enter the loss (`None` = unlabeled).
    pub keypoints: Vec<Option<[f64; 2]>>,
}

impl TargetObject {
    pub fn is_pose(&self) -> bool {
        self.class_index == 1
    }

    /// Box and keypoint targets in grid units relative to the cell origin.
    pub fn cell_target(&self, slot: Slot, stride: u32) -> CellTarget {
        let s = f64::from(stride);
        let (i, j) = (slot.i as f64, slot.j as f64);
        CellTarget {
            t: [
                self.bbox.cx / s - i,
                self.bbox.cy / s - j,
                self.bbox.w / s,
                self.bbox.h / s,
            ],
            v: self
                .keypoints
                .iter()
                .map(|kp| kp.map(|p| [p[0] / s - i, p[1] / s - j]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTarget {
    pub t: [f64; 4],
    pub v: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Claim {
    pub object: usize,
    pub slot: Slot,
}

/// Two objects wanted the same cell-anchor; the later one was kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub slot: Slot,
    pub overwritten: usize,
    pub by: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRecord {
    pub config: AssignConfig,
    pub objects: Vec<TargetObject>,
    /// Every claim in write order.
    pub claims: Vec<Claim>,
    /// Surviving claims after last-writer-wins, sorted by slot.
    pub assigned: Vec<Claim>,
    pub collisions: Vec<Collision>,
}

impl AssignmentRecord {
    pub fn assigned_for(&self, object: usize) -> impl Iterator<Item = &Claim> {
        self.assigned.iter().filter(move |c| c.object == object)
    }
}

/// `max(w/A_w, A_w/w, h/A_h, A_h/h)`; infinite for degenerate sizes.
pub fn anchor_ratio(w: f64, h: f64, anchor_w: f64, anchor_h: f64) -> f64 {
    let rw = w / anchor_w;
    let rh = h / anchor_h;
    let r = rw.max(1.0 / rw).max(rh).max(1.0 / rh);
    if r.is_nan() {
        f64::INFINITY
    } else {
        r
    }
}

/// Cells responsible for a center at grid coordinates `(gx, gy)`: the
/// containing cell, then one x-neighbor and one y-neighbor on the side of the
/// cell the center falls in (fraction < 0.5 selects the lower neighbor).
pub fn candidate_cells(gx: f64, gy: f64, cols: usize, rows: usize) -> Vec<(usize, usize)> {
    let ci = (gx.floor().max(0.0) as usize).min(cols - 1);
    let cj = (gy.floor().max(0.0) as usize).min(rows - 1);
    let fx = gx - ci as f64;
    let fy = gy - cj as f64;
    let mut cells = vec![(ci, cj)];
    if fx < 0.5 {
        if ci > 0 {
            cells.push((ci - 1, cj));
        }
    } else if ci + 1 < cols {
        cells.push((ci + 1, cj));
    }
    if fy < 0.5 {
        if cj > 0 {
            cells.push((ci, cj - 1));
        }
    } else if cj + 1 < rows {
        cells.push((ci, cj + 1));
    }
    cells
}

/// Expands annotations into pose objects and keypoint objects, in order:
/// for each annotation its pose object, then its labeled keypoints by index.
pub fn objects_from_annotations(annotations: &[PoseAnnotation], config: &AssignConfig) -> Result<Vec<TargetObject>, CodecError> {
    let mut objects = Vec::new();
    for (index, ann) in annotations.iter().enumerate() {
        if ann.keypoints.len() != config.num_keypoints {
            return Err(CodecError::KeypointCount {
                expected: config.num_keypoints,
                got: ann.keypoints.len(),
            });
        }
        ann.validate(config.num_keypoints, config.height, config.width)
            .map_err(|reason| CodecError::BadAnnotation { index, reason })?;
        objects.push(TargetObject {
            annotation: index,
            class_index: 1,
            bbox: ann.bbox,
            keypoints: ann
                .keypoints
                .iter()
                .zip(&ann.visibility)
                .map(|(p, &v)| (v > 0).then_some(*p))
                .collect(),
        });
        for k in 0..config.num_keypoints {
            if ann.is_labeled(k) {
                let [x, y] = ann.keypoints[k];
                objects.push(TargetObject {
                    annotation: index,
                    class_index: k + 2,
                    bbox: BBox::square(x, y, config.keypoint_box_size),
                    keypoints: Vec::new(),
                });
            }
        }
    }
    Ok(objects)
}

/// Assigns already-expanded objects to cell-anchors.
pub fn assign_objects(objects: Vec<TargetObject>, anchors: &AnchorSet, config: &AssignConfig) -> Result<AssignmentRecord, CodecError> {
    anchors.check_image(config.height, config.width)?;
    let mut claims = Vec::new();
    for (index, obj) in objects.iter().enumerate() {
        for (level, lv) in anchors.levels().iter().enumerate() {
            let s = f64::from(lv.stride);
            let rows = (config.height / lv.stride) as usize;
            let cols = (config.width / lv.stride) as usize;
            let cells = candidate_cells(obj.bbox.cx / s, obj.bbox.cy / s, cols, rows);
            for (a, anchor) in lv.anchors.iter().enumerate() {
                if anchor_ratio(obj.bbox.w, obj.bbox.h, anchor.w, anchor.h) >= config.anchor_tolerance {
                    continue;
                }
                for &(i, j) in &cells {
                    claims.push(Claim {
                        object: index,
                        slot: Slot { level, i, j, anchor: a },
                    });
                }
            }
        }
    }

    let mut owner: HashMap<Slot, usize> = HashMap::new();
    let mut collisions = Vec::new();
    for claim in &claims {
        if let Some(prev) = owner.insert(claim.slot, claim.object) {
            collisions.push(Collision {
                slot: claim.slot,
                overwritten: prev,
                by: claim.object,
            });
        }
    }
    let mut assigned: Vec<Claim> = owner
        .into_iter()
        .map(|(slot, object)| Claim { object, slot })
        .collect();
    assigned.sort_by_key(|c| c.slot);

    Ok(AssignmentRecord {
        config: *config,
        objects,
        claims,
        assigned,
        collisions,
    })
}

/// Writes the target grids (objectness 1, one-hot class, grid-space box and
/// keypoint targets) and the loss mask for an assignment.
pub fn write_targets(record: &AssignmentRecord, anchors: &AnchorSet) -> Result<TargetGrids, CodecError> {
    let cfg = &record.config;
    let mut grids = GridSet::filled(cfg.height, cfg.width, cfg.num_keypoints, anchors, 0.0)?;
    let ch = Channels::new(cfg.num_keypoints);
    let mut mask = TargetMask {
        grids: grids.grids.iter().map(|g| MaskGrid::empty(g.cell_anchors())).collect(),
    };
    for claim in &record.assigned {
        let obj = &record.objects[claim.object];
        let slot = claim.slot;
        let stride = anchors.stride(slot.level);
        let target = obj.cell_target(slot, stride);
        let cell_index = grids.grids[slot.level].cell_index(slot.i, slot.j, slot.anchor);
        let cell = grids.cell_mut(slot);
        cell[Channels::OBJECTNESS] = 1.0;
        for (c, t) in target.t.iter().enumerate() {
            cell[Channels::BOX + c] = *t as f32;
        }
        cell[ch.class(obj.class_index)] = 1.0;
        let mut bits = 0u64;
        for (k, v) in target.v.iter().enumerate() {
            if let Some(v) = v {
                let (cx, cy) = ch.keypoint(k);
                cell[cx] = v[0] as f32;
                cell[cy] = v[1] as f32;
                bits |= 1 << k;
            }
        }
        let m = &mut mask.grids[slot.level];
        m.kind[cell_index] = if obj.is_pose() { CellKind::Pose } else { CellKind::Keypoint };
        m.keypoints[cell_index] = bits;
    }
    Ok(TargetGrids { grids, mask })
}

/// Builds target grids for a scene together with the assignment record.
pub fn assign_targets(annotations: &[PoseAnnotation], anchors: &AnchorSet, config: &AssignConfig) -> Result<(TargetGrids, AssignmentRecord), CodecError> {
    if config.num_keypoints > 64 {
        return Err(CodecError::KeypointCount {
            expected: 64,
            got: config.num_keypoints,
        });
    }
    let objects = objects_from_annotations(annotations, config)?;
    let record = assign_objects(objects, anchors, config)?;
    let targets = write_targets(&record, anchors)?;
    Ok((targets, record))
}
