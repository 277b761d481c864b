//! Binary grid container, little-endian throughout:
//!
//! ```text
//! "KAPG" | version u16 | K u16 | height u32 | width u32 | grid count u8
//! per grid: stride u8 | rows u32 | cols u32 | anchors u8 | channels u16
//! payload: f32 values, grid by grid, laid out (row, col, anchor, channel)
//! optional mask: one kind byte per cell-anchor (0 empty, 1 pose,
//!   2 keypoint), then ceil(K / 8) keypoint-bitset bytes per cell-anchor
//! ```

use std::path::Path;

use thiserror::Error;

use crate::codec::{CellKind, Channels, Grid, GridSet, MaskGrid, TargetMask};

pub const MAGIC: [u8; 4] = *b"KAPG";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 1;
const GRID_HEADER_LEN: usize = 1 + 4 + 4 + 1 + 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridFileError {
    #[error("not a grid file (bad magic)")]
    BadMagic,
    #[error("unsupported grid file version {0}")]
    UnsupportedVersion(u16),
    #[error("file ends inside the header")]
    TruncatedHeader,
    #[error("file ends inside the payload: need {expected} bytes, have {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("inconsistent shape: {0}")]
    ShapeInconsistent(String),
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(usize),
    #[error("non-finite value at payload index {0}")]
    NonFinite(usize),
    #[error("invalid mask: {0}")]
    BadMask(String),
    #[error("grid set cannot be stored: {0}")]
    Unencodable(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl GridFileError {
    /// Stable identifier for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Self::BadMagic => "bad_magic",
            Self::UnsupportedVersion(_) => "unsupported_version",
            Self::TruncatedHeader => "truncated_header",
            Self::TruncatedPayload { .. } => "truncated_payload",
            Self::ShapeInconsistent(_) => "shape_inconsistent",
            Self::TrailingBytes(_) => "trailing_bytes",
            Self::NonFinite(_) => "non_finite",
            Self::BadMask(_) => "bad_mask",
            Self::Unencodable(_) => "unencodable",
            Self::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub grids: GridSet,
    pub mask: Option<TargetMask>,
}

fn bitset_bytes(num_keypoints: usize) -> usize {
    num_keypoints.div_ceil(8)
}

fn narrow<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T, GridFileError> {
    T::try_from(v).map_err(|_| GridFileError::Unencodable(format!("{what} = {v} does not fit its field")))
}

/// Serializes a grid set and optional mask.
pub fn encode_grid_file(grids: &GridSet, mask: Option<&TargetMask>) -> Result<Vec<u8>, GridFileError> {
    grids.validate().map_err(|e| GridFileError::Unencodable(e.to_string()))?;
    let k = grids.num_keypoints;
    let payload: usize = grids.grids.iter().map(|g| g.data.len() * 4).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + GRID_HEADER_LEN * grids.grids.len() + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&narrow::<u16>(k, "K")?.to_le_bytes());
    out.extend_from_slice(&grids.height.to_le_bytes());
    out.extend_from_slice(&grids.width.to_le_bytes());
    out.push(narrow::<u8>(grids.grids.len(), "grid count")?);
    for g in &grids.grids {
        out.push(narrow::<u8>(g.stride as usize, "stride")?);
        out.extend_from_slice(&narrow::<u32>(g.rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&narrow::<u32>(g.cols, "cols")?.to_le_bytes());
        out.push(narrow::<u8>(g.num_anchors, "anchors")?);
        out.extend_from_slice(&narrow::<u16>(g.channels, "channels")?.to_le_bytes());
    }
    for g in &grids.grids {
        for v in &g.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(mask) = mask {
        if mask.grids.len() != grids.grids.len()
            || mask.grids.iter().zip(&grids.grids).any(|(m, g)| {
                m.kind.len() != g.cell_anchors() || m.keypoints.len() != g.cell_anchors()
            })
        {
            return Err(GridFileError::Unencodable("mask geometry differs from the grids".into()));
        }
        if k > 64 {
            return Err(GridFileError::Unencodable("masks support at most 64 keypoints".into()));
        }
        for m in &mask.grids {
            out.extend(m.kind.iter().map(|&c| c as u8));
        }
        let nb = bitset_bytes(k);
        for m in &mask.grids {
            for bits in &m.keypoints {
                out.extend_from_slice(&bits.to_le_bytes()[..nb]);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GridFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(GridFileError::TruncatedHeader)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GridFileError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, GridFileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, GridFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

struct GridHeader {
    stride: u32,
    rows: usize,
    cols: usize,
    anchors: usize,
    channels: usize,
}

fn shape(msg: String) -> GridFileError {
    GridFileError::ShapeInconsistent(msg)
}

/// Parses a grid file. All sizes are checked against the header and the
/// available bytes before anything is allocated.
pub fn decode_grid_file(bytes: &[u8]) -> Result<GridFile, GridFileError> {
    if bytes.len() >= MAGIC.len() && bytes[..MAGIC.len()] != MAGIC {
        return Err(GridFileError::BadMagic);
    }
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            GridFileError::TruncatedHeader
        } else {
            GridFileError::BadMagic
        });
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u16()?;
    if version != VERSION {
        return Err(GridFileError::UnsupportedVersion(version));
    }
    let k = usize::from(r.u16()?);
    let height = r.u32()?;
    let width = r.u32()?;
    let count = usize::from(r.u8()?);
    if count == 0 {
        return Err(shape("grid count is zero".into()));
    }
    if height == 0 || width == 0 {
        return Err(shape("image size is zero".into()));
    }
    let channels = Channels::new(k).len();
    let mut headers = Vec::with_capacity(count);
    for n in 0..count {
        let h = GridHeader {
            stride: u32::from(r.u8()?),
            rows: r.u32()? as usize,
            cols: r.u32()? as usize,
            anchors: usize::from(r.u8()?),
            channels: usize::from(r.u16()?),
        };
        if h.stride == 0 {
            return Err(shape(format!("grid {n} has stride 0")));
        }
        if headers.last().is_some_and(|p: &GridHeader| p.stride >= h.stride) {
            return Err(shape(format!("grid {n}: strides must be strictly ascending")));
        }
        if h.channels != channels {
            return Err(shape(format!("grid {n} has {} channels, 3K+6 = {channels}", h.channels)));
        }
        if h.anchors == 0 {
            return Err(shape(format!("grid {n} has no anchors")));
        }
        if h.rows as u64 * u64::from(h.stride) != u64::from(height) || h.cols as u64 * u64::from(h.stride) != u64::from(width) {
            return Err(shape(format!(
                "grid {n} is {}x{} at stride {} for a {height}x{width} image",
                h.rows, h.cols, h.stride
            )));
        }
        headers.push(h);
    }

    let mut cell_anchors = 0usize;
    let mut values = 0usize;
    for h in &headers {
        let ca = h.rows.checked_mul(h.cols).and_then(|v| v.checked_mul(h.anchors)).ok_or_else(|| shape("grid too large".into()))?;
        cell_anchors = cell_anchors.checked_add(ca).ok_or_else(|| shape("grid too large".into()))?;
        values = ca
            .checked_mul(h.channels)
            .and_then(|v| v.checked_add(values))
            .ok_or_else(|| shape("grid too large".into()))?;
    }
    let payload_len = values.checked_mul(4).ok_or_else(|| shape("grid too large".into()))?;
    if r.remaining() < payload_len {
        return Err(GridFileError::TruncatedPayload {
            expected: payload_len,
            got: r.remaining(),
        });
    }

    let mut grids = Vec::with_capacity(count);
    let mut index = 0usize;
    for h in &headers {
        let n = h.rows * h.cols * h.anchors * h.channels;
        let raw = r.take(n * 4)?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(GridFileError::NonFinite(index));
            }
            data.push(v);
            index += 1;
        }
        grids.push(Grid {
            stride: h.stride,
            rows: h.rows,
            cols: h.cols,
            num_anchors: h.anchors,
            channels: h.channels,
            data,
        });
    }
    let grids = GridSet {
        height,
        width,
        num_keypoints: k,
        grids,
    };

    let rest = r.remaining();
    if rest == 0 {
        return Ok(GridFile { grids, mask: None });
    }
    let nb = bitset_bytes(k);
    let mask_len = cell_anchors.checked_mul(1 + nb).ok_or_else(|| shape("mask too large".into()))?;
    if rest > mask_len {
        return Err(GridFileError::TrailingBytes(rest - mask_len));
    }
    if rest < mask_len {
        return Err(GridFileError::BadMask(format!("mask section has {rest} bytes, expected {mask_len}")));
    }
    if k > 64 {
        return Err(GridFileError::BadMask("masks support at most 64 keypoints".into()));
    }
    let kinds = r.take(cell_anchors)?;
    let bitsets = r.take(cell_anchors * nb)?;
    let mut mask_grids = Vec::with_capacity(count);
    let mut at = 0usize;
    for h in &headers {
        let ca = h.rows * h.cols * h.anchors;
        let mut m = MaskGrid::empty(ca);
        for c in 0..ca {
            let byte = kinds[at + c];
            m.kind[c] = CellKind::from_u8(byte).ok_or_else(|| GridFileError::BadMask(format!("cell kind {byte}")))?;
            let mut buf = [0u8; 8];
            buf[..nb].copy_from_slice(&bitsets[(at + c) * nb..(at + c + 1) * nb]);
            let bits = u64::from_le_bytes(buf);
            if k < 64 && bits >> k != 0 {
                return Err(GridFileError::BadMask("keypoint bit beyond K".into()));
            }
            if m.kind[c] != CellKind::Pose && bits != 0 {
                return Err(GridFileError::BadMask("keypoint bits on a non-pose cell".into()));
            }
            m.keypoints[c] = bits;
        }
        at += ca;
        mask_grids.push(m);
    }
    Ok(GridFile {
        grids,
        mask: Some(TargetMask { grids: mask_grids }),
    })
}

pub fn write_grid_file(path: &Path, grids: &GridSet, mask: Option<&TargetMask>) -> Result<(), GridFileError> {
    let bytes = encode_grid_file(grids, mask)?;
    std::fs::write(path, bytes).map_err(|e| GridFileError::Io(format!("{}: {e}", path.display())))
}

pub fn read_grid_file(path: &Path) -> Result<GridFile, GridFileError> {
    let bytes = std::fs::read(path).map_err(|e| GridFileError::Io(format!("{}: {e}", path.display())))?;
    decode_grid_file(&bytes)
}

/// Size in bytes of a mask-free file for the given geometry.
pub fn grid_file_len(num_keypoints: usize, grids: &[(usize, usize, usize)]) -> usize {
    let channels = Channels::new(num_keypoints).len();
    HEADER_LEN + grids.len() * GRID_HEADER_LEN + grids.iter().map(|&(r, c, a)| r * c * a * channels * 4).sum::<usize>()
}
