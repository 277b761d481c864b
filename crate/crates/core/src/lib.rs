//! Keypoints and poses as objects: the dense-grid representation below the
//! network.
//!
//! * [`geometry`]: boxes, IoU, CIoU and its gradient
//! * [`codec`]: target assignment, raw-grid decoding and the inverse encoder
//! * [`loss`]: the multi-task training loss
//! * [`pipeline`]: NMS and keypoint-object fusion
//! * [`metrics`]: OKS, AP/AR, fusion rates and per-image OKS deltas
//! * [`synth`]: synthetic scenes, a network noise model and reference oracles
//! * [`io`]: grid files, annotation/result JSON and the flat config format

pub mod codec;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod synth;
