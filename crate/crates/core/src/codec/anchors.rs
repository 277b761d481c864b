use serde::{Deserialize, Serialize};

use super::CodecError;

pub const DEFAULT_STRIDES: [u32; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: u32,
    pub anchors: Vec<Anchor>,
}

/// Anchor priors (px) for every output grid, ordered by ascending stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    levels: Vec<AnchorLevel>,
}

const DEFAULT_ANCHORS: [[(f64, f64); 3]; 4] = [
    [(19.0, 27.0), (44.0, 40.0), (38.0, 94.0)],
    [(96.0, 68.0), (86.0, 152.0), (180.0, 137.0)],
    [(140.0, 301.0), (303.0, 264.0), (238.0, 542.0)],
    [(436.0, 615.0), (739.0, 380.0), (925.0, 792.0)],
];

/// Builds and validates an anchor set; `None` yields the default priors.
pub fn build_anchor_set(levels: Option<Vec<AnchorLevel>>) -> Result<AnchorSet, CodecError> {
    match levels {
        None => Ok(AnchorSet::default()),
        Some(levels) => AnchorSet::new(levels),
    }
}

impl Default for AnchorSet {
    fn default() -> Self {
        let levels = DEFAULT_STRIDES
            .iter()
            .zip(DEFAULT_ANCHORS.iter())
            .map(|(&stride, dims)| AnchorLevel {
                stride,
                anchors: dims.iter().map(|&(w, h)| Anchor { w, h }).collect(),
            })
            .collect();
        Self { levels }
    }
}

impl AnchorSet {
    pub fn new(levels: Vec<AnchorLevel>) -> Result<Self, CodecError> {
        let set = Self { levels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let first = self.levels.first().ok_or(CodecError::EmptyAnchors)?;
        let per_level = first.anchors.len();
        let mut prev = 0;
        for level in &self.levels {
            if level.stride == 0 || level.stride <= prev {
                return Err(CodecError::BadStrides);
            }
            prev = level.stride;
            if level.anchors.is_empty() {
                return Err(CodecError::EmptyLevel(level.stride));
            }
            if level.anchors.len() != per_level {
                return Err(CodecError::RaggedAnchors);
            }
            for a in &level.anchors {
                if !(a.w.is_finite() && a.h.is_finite() && a.w > 0.0 && a.h > 0.0) {
                    return Err(CodecError::BadAnchor(a.w, a.h));
                }
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> &[AnchorLevel] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn anchors_per_level(&self) -> usize {
        self.levels[0].anchors.len()
    }

    pub fn stride(&self, level: usize) -> u32 {
        self.levels[level].stride
    }

    pub fn anchor(&self, level: usize, a: usize) -> Anchor {
        self.levels[level].anchors[a]
    }

    pub fn max_stride(&self) -> u32 {
        self.levels.last().map_or(1, |l| l.stride)
    }

    pub fn total_anchors(&self) -> usize {
        self.levels.iter().map(|l| l.anchors.len()).sum()
    }

    /// `h` and `w` must tile exactly at every stride.
    pub fn check_image(&self, height: u32, width: u32) -> Result<(), CodecError> {
        for level in &self.levels {
            if height % level.stride != 0 || width % level.stride != 0 || height == 0 || width == 0
            {
                return Err(CodecError::IndivisibleImage {
                    height,
                    width,
                    stride: level.stride,
                });
            }
        }
        Ok(())
    }
}
