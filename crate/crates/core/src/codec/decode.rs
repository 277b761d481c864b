use serde::{Deserialize, Serialize};

use super::{Anchor, AnchorSet, Channels, CodecError, GridSet, Slot};
use crate::geometry::BBox;
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Pose,
    Keypoint,
}

/// Activations of one cell-anchor mapped through the output nonlinearities,
/// still in grid units relative to the cell origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedCell {
    pub objectness: f64,
    /// 0-based index of the largest class logit (lowest index on ties).
    pub best_class: usize,
    pub class_score: f64,
    pub t: [f64; 4],
    pub v: Vec<[f64; 2]>,
}

/// A decoded object in image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub kind: ObjectKind,
    /// 1-based class; 1 is the person.
    pub class_index: usize,
    pub bbox: BBox,
    pub objectness: f64,
    pub class_score: f64,
    /// `objectness * max(class scores)`.
    pub confidence: f64,
    /// Pose objects only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f64; 2]>>,
    pub stride: u32,
    pub origin: Slot,
}

impl Detection {
    /// 0-based keypoint type of a keypoint object.
    pub fn keypoint_index(&self) -> Option<usize> {
        (self.kind == ObjectKind::Keypoint).then(|| self.class_index - 2)
    }
}

fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (c, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = c;
        }
    }
    best
}

/// Decodes one raw cell-anchor vector. Keypoints are decoded only when
/// `with_keypoints` is set.
fn decode_raw(raw: &[f32], anchor: Anchor, stride: u32, ch: Channels, with_keypoints: bool) -> DecodedCell {
    let s = f64::from(stride);
    let (aw, ah) = (anchor.w / s, anchor.h / s);
    let sx = sigmoid(f64::from(raw[Channels::BOX]));
    let sy = sigmoid(f64::from(raw[Channels::BOX + 1]));
    let sw = 2.0 * sigmoid(f64::from(raw[Channels::BOX + 2]));
    let sh = 2.0 * sigmoid(f64::from(raw[Channels::BOX + 3]));
    let classes = &raw[ch.class_start()..ch.class_start() + ch.num_classes()];
    let best_class = argmax(classes);
    let v = if with_keypoints {
        (0..ch.num_keypoints)
            .map(|k| {
                let (cx, cy) = ch.keypoint(k);
                [
                    aw * (4.0 * sigmoid(f64::from(raw[cx])) - 2.0),
                    ah * (4.0 * sigmoid(f64::from(raw[cy])) - 2.0),
                ]
            })
            .collect()
    } else {
        Vec::new()
    };
    DecodedCell {
        objectness: sigmoid(f64::from(raw[Channels::OBJECTNESS])),
        best_class,
        class_score: sigmoid(f64::from(classes[best_class])),
        t: [2.0 * sx - 0.5, 2.0 * sy - 0.5, aw * sw * sw, ah * sh * sh],
        v,
    }
}

/// Applies the sigmoid output transforms to a raw cell-anchor vector.
pub fn decode_cell(raw: &[f32], anchor: Anchor, stride: u32, num_keypoints: usize) -> Result<DecodedCell, CodecError> {
    let ch = Channels::new(num_keypoints);
    if raw.len() != ch.len() {
        return Err(CodecError::ChannelMismatch {
            expected: ch.len(),
            got: raw.len(),
        });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    Ok(decode_raw(raw, anchor, stride, ch, true))
}

/// Maps a decoded cell to image coordinates: `b = s(t + [i, j, 0, 0])`,
/// `z_k = s(v_k + [i, j])`.
pub fn to_image_coords(cell: &DecodedCell, slot: Slot, stride: u32) -> Detection {
    let s = f64::from(stride);
    let (i, j) = (slot.i as f64, slot.j as f64);
    let class_index = cell.best_class + 1;
    let kind = if class_index == 1 { ObjectKind::Pose } else { ObjectKind::Keypoint };
    let keypoints = (kind == ObjectKind::Pose && !cell.v.is_empty())
        .then(|| cell.v.iter().map(|v| [s * (v[0] + i), s * (v[1] + j)]).collect());
    Detection {
        kind,
        class_index,
        bbox: BBox::new(s * (cell.t[0] + i), s * (cell.t[1] + j), s * cell.t[2], s * cell.t[3]),
        objectness: cell.objectness,
        class_score: cell.class_score,
        confidence: cell.objectness * cell.class_score,
        keypoints,
        stride,
        origin: slot,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detections {
    pub poses: Vec<Detection>,
    pub keypoints: Vec<Detection>,
}

/// Scans every cell-anchor and keeps pose objects with confidence above
/// `tau_pose` and keypoint objects above `tau_keypoint`. Output is ordered by
/// level, then `i`, then `j`, then anchor.
pub fn decode_grids(grids: &GridSet, anchors: &AnchorSet, tau_pose: f64, tau_keypoint: f64) -> Result<Detections, CodecError> {
    grids.check_anchors(anchors)?;
    let ch = grids.channels();
    for g in &grids.grids {
        if g.channels != ch.len() {
            return Err(CodecError::ChannelMismatch {
                expected: ch.len(),
                got: g.channels,
            });
        }
    }
    let floor = tau_pose.min(tau_keypoint);
    let mut found: Vec<Detection> = Vec::new();
    for (level, g) in grids.grids.iter().enumerate() {
        let stride = g.stride;
        for (cell_index, raw) in g.data.chunks_exact(g.channels).enumerate() {
            let obj = sigmoid(f64::from(raw[Channels::OBJECTNESS]));
            if obj <= floor {
                continue;
            }
            let classes = &raw[ch.class_start()..ch.class_start() + ch.num_classes()];
            let best = argmax(classes);
            let conf = obj * sigmoid(f64::from(classes[best]));
            let tau = if best == 0 { tau_pose } else { tau_keypoint };
            if !(conf > tau) {
                continue;
            }
            let a = cell_index % g.num_anchors;
            let col_row = cell_index / g.num_anchors;
            let slot = Slot {
                level,
                i: col_row % g.cols,
                j: col_row / g.cols,
                anchor: a,
            };
            let cell = decode_raw(raw, anchors.anchor(level, a), stride, ch, best == 0);
            found.push(to_image_coords(&cell, slot, stride));
        }
    }
    found.sort_by_key(|d| d.origin);
    let mut out = Detections::default();
    for d in found {
        match d.kind {
            ObjectKind::Pose => out.poses.push(d),
            ObjectKind::Keypoint => out.keypoints.push(d),
        }
    }
    Ok(out)
}
