//! Inverse of the output transforms: writes raw logits that decode exactly
//! to the assigned targets. Stands in for a trained network in tests.

use serde::{Deserialize, Serialize};

use super::{AnchorSet, AssignmentRecord, Channels, CodecError, GridSet, Slot, TargetObject};
use crate::math::logit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseConfig {
    /// Magnitude of the logit used for "certain" objectness and class values.
    pub saturation: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self { saturation: 8.0 }
    }
}

/// Objectness and class logits written for one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectStyle {
    pub objectness_logit: f64,
    pub class_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object: usize,
    pub written: Vec<Slot>,
    /// Assigned cells whose targets fall outside the open decode ranges.
    pub unrepresentable: Vec<Slot>,
}

impl ObjectReport {
    pub fn representable(&self) -> bool {
        !self.written.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InverseReport {
    pub objects: Vec<ObjectReport>,
}

impl InverseReport {
    pub fn unrepresentable_objects(&self) -> impl Iterator<Item = usize> + '_ {
        self.objects.iter().filter(|o| !o.representable()).map(|o| o.object)
    }
}

/// Logits for the box and labeled keypoints of `obj` at `slot`, or `None`
/// when any target lies on or beyond the boundary of its decode range.
fn target_logits(obj: &TargetObject, slot: Slot, anchors: &AnchorSet) -> Option<([f64; 4], Vec<Option<[f64; 2]>>)> {
    let stride = anchors.stride(slot.level);
    let anchor = anchors.anchor(slot.level, slot.anchor);
    let s = f64::from(stride);
    let (aw, ah) = (anchor.w / s, anchor.h / s);
    let target = obj.cell_target(slot, stride);
    let t = target.t;
    let b = [
        logit((t[0] + 0.5) / 2.0)?,
        logit((t[1] + 0.5) / 2.0)?,
        logit((t[2] / aw).sqrt() / 2.0)?,
        logit((t[3] / ah).sqrt() / 2.0)?,
    ];
    let mut v = Vec::with_capacity(target.v.len());
    for kp in &target.v {
        match kp {
            Some(p) => v.push(Some([logit((p[0] / aw + 2.0) / 4.0)?, logit((p[1] / ah + 2.0) / 4.0)?])),
            None => v.push(None),
        }
    }
    Some((b, v))
}

fn to_f32(x: f64) -> Option<f32> {
    let y = x as f32;
    y.is_finite().then_some(y)
}

/// Generalization of [`encode_inverse`] with per-object objectness/class logits.
pub fn encode_with_styles<F>(record: &AssignmentRecord, anchors: &AnchorSet, config: &InverseConfig, style: F) -> Result<(GridSet, InverseReport), CodecError>
where
    F: Fn(usize, &TargetObject) -> ObjectStyle,
{
    let cfg = &record.config;
    let ch = Channels::new(cfg.num_keypoints);
    let sat = config.saturation;
    let mut grids = GridSet::filled(cfg.height, cfg.width, cfg.num_keypoints, anchors, 0.0)?;
    for g in &mut grids.grids {
        for cell in g.data.chunks_exact_mut(ch.len()) {
            cell[Channels::OBJECTNESS] = -sat as f32;
        }
    }
    let mut report = InverseReport {
        objects: (0..record.objects.len())
            .map(|object| ObjectReport {
                object,
                written: Vec::new(),
                unrepresentable: Vec::new(),
            })
            .collect(),
    };
    for claim in &record.assigned {
        let obj = &record.objects[claim.object];
        let entry = &mut report.objects[claim.object];
        let encoded = target_logits(obj, claim.slot, anchors).and_then(|(b, v)| {
            let b32 = [to_f32(b[0])?, to_f32(b[1])?, to_f32(b[2])?, to_f32(b[3])?];
            let mut v32 = Vec::with_capacity(v.len());
            for p in v {
                v32.push(match p {
                    Some(p) => Some([to_f32(p[0])?, to_f32(p[1])?]),
                    None => None,
                });
            }
            Some((b32, v32))
        });
        let Some((b, v)) = encoded else {
            entry.unrepresentable.push(claim.slot);
            continue;
        };
        let st = style(claim.object, obj);
        let cell = grids.cell_mut(claim.slot);
        cell[Channels::OBJECTNESS] = st.objectness_logit as f32;
        cell[Channels::BOX..Channels::BOX + 4].copy_from_slice(&b);
        for c in 1..=ch.num_classes() {
            cell[ch.class(c)] = if c == obj.class_index { st.class_logit } else { -sat } as f32;
        }
        for (k, p) in v.iter().enumerate() {
            if let Some(p) = p {
                let (cx, cy) = ch.keypoint(k);
                cell[cx] = p[0];
                cell[cy] = p[1];
            }
        }
        entry.written.push(claim.slot);
    }
    Ok((grids, report))
}

/// Raw logits whose decode reproduces every representable assigned target.
/// Unassigned cells carry objectness logit `-saturation`.
pub fn encode_inverse(record: &AssignmentRecord, anchors: &AnchorSet, config: &InverseConfig) -> Result<(GridSet, InverseReport), CodecError> {
    let sat = config.saturation;
    encode_with_styles(record, anchors, config, |_, _| ObjectStyle {
        objectness_logit: sat,
        class_logit: sat,
    })
}
