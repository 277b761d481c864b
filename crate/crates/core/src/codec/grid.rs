use serde::{Deserialize, Serialize};

use super::{AnchorSet, CodecError};

/// Channel offsets within one cell-anchor vector for `K` keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub num_keypoints: usize,
}

impl Channels {
    pub const OBJECTNESS: usize = 0;
    pub const BOX: usize = 1;

    pub const fn new(num_keypoints: usize) -> Self {
        Self { num_keypoints }
    }

    pub const fn len(&self) -> usize {
        3 * self.num_keypoints + 6
    }

    pub const fn is_empty(&self) -> bool {
        false
    }

    pub const fn num_classes(&self) -> usize {
        self.num_keypoints + 1
    }

    /// First class channel (class 1, the person).
    pub const fn class_start(&self) -> usize {
        5
    }

    pub const fn keypoint_start(&self) -> usize {
        5 + self.num_keypoints + 1
    }

    /// Channel of class `class_index` (1-based).
    pub const fn class(&self, class_index: usize) -> usize {
        self.class_start() + class_index - 1
    }

    /// Channels `(x, y)` of keypoint `k` (0-based).
    pub const fn keypoint(&self, k: usize) -> (usize, usize) {
        let base = self.keypoint_start() + 2 * k;
        (base, base + 1)
    }
}

/// Address of one cell-anchor: grid level, column `i`, row `j`, anchor `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub level: usize,
    pub i: usize,
    pub j: usize,
    pub anchor: usize,
}

/// One dense output tensor, `rows x cols x anchors x channels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub stride: u32,
    pub rows: usize,
    pub cols: usize,
    pub num_anchors: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn filled(stride: u32, rows: usize, cols: usize, num_anchors: usize, channels: usize, value: f32) -> Self {
        Self {
            stride,
            rows,
            cols,
            num_anchors,
            channels,
            data: vec![value; rows * cols * num_anchors * channels],
        }
    }

    pub fn cell_anchors(&self) -> usize {
        self.rows * self.cols * self.num_anchors
    }

    /// Flat index of the cell-anchor `(i, j, a)` in cell-anchor units.
    pub fn cell_index(&self, i: usize, j: usize, a: usize) -> usize {
        (j * self.cols + i) * self.num_anchors + a
    }

    pub fn offset(&self, i: usize, j: usize, a: usize) -> usize {
        self.cell_index(i, j, a) * self.channels
    }

    pub fn cell(&self, i: usize, j: usize, a: usize) -> &[f32] {
        let o = self.offset(i, j, a);
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize, a: usize) -> &mut [f32] {
        let o = self.offset(i, j, a);
        let n = self.channels;
        &mut self.data[o..o + n]
    }
}

/// The four (or however many levels the anchor set has) output grids of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    pub height: u32,
    pub width: u32,
    pub num_keypoints: usize,
    pub grids: Vec<Grid>,
}

impl GridSet {
    /// Grids for an image, every channel set to `value`.
    pub fn filled(height: u32, width: u32, num_keypoints: usize, anchors: &AnchorSet, value: f32) -> Result<Self, CodecError> {
        anchors.check_image(height, width)?;
        let channels = Channels::new(num_keypoints).len();
        let grids = anchors
            .levels()
            .iter()
            .map(|l| {
                Grid::filled(
                    l.stride,
                    (height / l.stride) as usize,
                    (width / l.stride) as usize,
                    l.anchors.len(),
                    channels,
                    value,
                )
            })
            .collect();
        Ok(Self {
            height,
            width,
            num_keypoints,
            grids,
        })
    }

    pub fn channels(&self) -> Channels {
        Channels::new(self.num_keypoints)
    }

    pub fn total_cell_anchors(&self) -> usize {
        self.grids.iter().map(Grid::cell_anchors).sum()
    }

    pub fn cell(&self, slot: Slot) -> &[f32] {
        self.grids[slot.level].cell(slot.i, slot.j, slot.anchor)
    }

    pub fn cell_mut(&mut self, slot: Slot) -> &mut [f32] {
        self.grids[slot.level].cell_mut(slot.i, slot.j, slot.anchor)
    }

    /// Structural checks: channel count, tiling and finiteness.
    pub fn validate(&self) -> Result<(), CodecError> {
        let expected = self.channels().len();
        for g in &self.grids {
            if g.channels != expected {
                return Err(CodecError::ChannelMismatch {
                    expected,
                    got: g.channels,
                });
            }
            if g.stride == 0
                || g.rows * g.stride as usize != self.height as usize
                || g.cols * g.stride as usize != self.width as usize
            {
                return Err(CodecError::ShapeMismatch(format!(
                    "stride {} grid is {}x{} for a {}x{} image",
                    g.stride, g.rows, g.cols, self.height, self.width
                )));
            }
            if g.data.len() != g.rows * g.cols * g.num_anchors * g.channels {
                return Err(CodecError::ShapeMismatch("payload length".into()));
            }
        }
        if self.grids.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(CodecError::NonFinite);
        }
        Ok(())
    }

    /// Checks the grids line up with `anchors` level by level.
    pub fn check_anchors(&self, anchors: &AnchorSet) -> Result<(), CodecError> {
        if self.grids.len() != anchors.num_levels() {
            return Err(CodecError::ShapeMismatch(format!(
                "{} grids for {} anchor levels",
                self.grids.len(),
                anchors.num_levels()
            )));
        }
        for (g, l) in self.grids.iter().zip(anchors.levels()) {
            if g.stride != l.stride || g.num_anchors != l.anchors.len() {
                return Err(CodecError::ShapeMismatch(format!(
                    "grid stride {} with {} anchors vs anchor level stride {} with {}",
                    g.stride,
                    g.num_anchors,
                    l.stride,
                    l.anchors.len()
                )));
            }
        }
        Ok(())
    }
}

/// What a target cell-anchor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellKind {
    Empty = 0,
    Pose = 1,
    Keypoint = 2,
}

impl CellKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Empty),
            1 => Some(Self::Pose),
            2 => Some(Self::Keypoint),
            _ => None,
        }
    }
}

/// Loss mask for one grid. `keypoints[c]` has bit `k` set when keypoint `k`
/// of cell-anchor `c` takes part in the keypoint loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub kind: Vec<CellKind>,
    pub keypoints: Vec<u64>,
}

impl MaskGrid {
    pub fn empty(cell_anchors: usize) -> Self {
        Self {
            kind: vec![CellKind::Empty; cell_anchors],
            keypoints: vec![0; cell_anchors],
        }
    }

    pub fn keypoint_in_loss(&self, cell: usize, k: usize) -> bool {
        self.keypoints[cell] >> k & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMask {
    pub grids: Vec<MaskGrid>,
}

/// Target grids plus the mask marking which slots enter the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrids {
    pub grids: GridSet,
    pub mask: TargetMask,
}

impl TargetGrids {
    pub fn assigned_count(&self) -> usize {
        self.mask
            .grids
            .iter()
            .map(|m| m.kind.iter().filter(|&&k| k != CellKind::Empty).count())
            .sum()
    }
}
