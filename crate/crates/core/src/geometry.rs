//! Axis-aligned box algebra: IoU, CIoU and the analytic CIoU gradient.
//!
//! Boxes are stored center-size `(cx, cy, w, h)`. The frame (image pixels or
//! grid units) is whatever the caller uses consistently; every quantity here
//! is scale- and translation-invariant.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("box has a non-finite coordinate")]
    NonFinite,
    #[error("box has a negative width or height")]
    NegativeSize,
    #[error("CIoU is undefined when both boxes have zero area")]
    BothZeroArea,
    #[error("CIoU is not differentiable at this configuration ({0})")]
    NonDifferentiable(&'static str),
}

/// Axis-aligned rectangle in center-size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Square box of side `size` centered on a point.
    pub const fn square(cx: f64, cy: f64, size: f64) -> Self {
        Self::new(cx, cy, size, size)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        if self.w < 0.0 || self.h < 0.0 {
            return Err(GeometryError::NegativeSize);
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn x1(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn x2(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn y1(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn y2(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(
            self.cx * factor,
            self.cy * factor,
            self.w * factor,
            self.h * factor,
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Overlap extent along one axis; negative when the intervals are disjoint.
fn overlap(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    a2.min(b2) - a1.max(b1)
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let iw = overlap(a.x1(), a.x2(), b.x1(), b.x2()).max(0.0);
    let ih = overlap(a.y1(), a.y2(), b.y1(), b.y2()).max(0.0);
    iw * ih
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// IoU without validation; callers guarantee finite, non-negative boxes.
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn aspect_angle(w: f64, h: f64) -> f64 {
    w.atan2(h)
}

/// Aspect-ratio consistency term `v` of CIoU.
fn aspect_term(a: &BBox, b: &BBox) -> f64 {
    let d = aspect_angle(b.w, b.h) - aspect_angle(a.w, a.h);
    4.0 / (PI * PI) * d * d
}

fn enclosing_diag_sq(a: &BBox, b: &BBox) -> f64 {
    let cw = a.x2().max(b.x2()) - a.x1().min(b.x1());
    let ch = a.y2().max(b.y2()) - a.y1().min(b.y1());
    cw * cw + ch * ch
}

fn center_dist_sq(a: &BBox, b: &BBox) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    dx * dx + dy * dy
}

/// Complete IoU: `IoU - rho^2/c^2 - alpha*v`, in `(-1.5, 1]`.
pub fn ciou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    if a.area() <= 0.0 && b.area() <= 0.0 {
        return Err(GeometryError::BothZeroArea);
    }
    Ok(ciou_unchecked(a, b))
}

pub(crate) fn ciou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let iou = iou_unchecked(a, b);
    let c2 = enclosing_diag_sq(a, b);
    let dist = if c2 > 0.0 {
        center_dist_sq(a, b) / c2
    } else {
        0.0
    };
    let v = aspect_term(a, b);
    let alpha = if v > 0.0 { v / ((1.0 - iou) + v) } else { 0.0 };
    iou - dist - alpha * v
}

/// How the trade-off weight `alpha` is handled when differentiating CIoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// Full derivative, `alpha` depends on the box like every other term.
    #[default]
    Exact,
    /// `alpha` held fixed at its current value (the usual training convention).
    Constant,
}

/// Gradient of `ciou(a, b)` with respect to `(cx, cy, w, h)` of `a`.
pub fn ciou_grad(a: &BBox, b: &BBox) -> Result<[f64; 4], GeometryError> {
    ciou_grad_with(a, b, AlphaMode::Exact)
}

pub fn ciou_grad_with(a: &BBox, b: &BBox, mode: AlphaMode) -> Result<[f64; 4], GeometryError> {
    a.validate()?;
    b.validate()?;
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(GeometryError::NonDifferentiable("zero-area box"));
    }

    let (ax1, ax2, ay1, ay2) = (a.x1(), a.x2(), a.y1(), a.y2());
    let (bx1, bx2, by1, by2) = (b.x1(), b.x2(), b.y1(), b.y2());

    // intersection and its gradient
    let iw = overlap(ax1, ax2, bx1, bx2);
    let ih = overlap(ay1, ay2, by1, by2);
    if (iw == 0.0 && ih >= 0.0) || (ih == 0.0 && iw >= 0.0) {
        return Err(GeometryError::NonDifferentiable("touching edges"));
    }
    let mut d_inter = [0.0; 4];
    let inter = if iw > 0.0 && ih > 0.0 {
        if ax1 == bx1 || ax2 == bx2 || ay1 == by1 || ay2 == by2 {
            return Err(GeometryError::NonDifferentiable("coincident edges"));
        }
        let dw_dx = f64::from(u8::from(ax2 < bx2)) - f64::from(u8::from(ax1 > bx1));
        let dw_dw = 0.5 * (f64::from(u8::from(ax2 < bx2)) + f64::from(u8::from(ax1 > bx1)));
        let dh_dy = f64::from(u8::from(ay2 < by2)) - f64::from(u8::from(ay1 > by1));
        let dh_dh = 0.5 * (f64::from(u8::from(ay2 < by2)) + f64::from(u8::from(ay1 > by1)));
        d_inter = [dw_dx * ih, dh_dy * iw, dw_dw * ih, dh_dh * iw];
        iw * ih
    } else {
        0.0
    };

    let area_a = a.w * a.h;
    let d_area_a = [0.0, 0.0, a.h, a.w];
    let union = area_a + b.area() - inter;
    let iou = inter / union;
    let mut d_iou = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area_a[k] - d_inter[k];
        d_iou[k] = (d_inter[k] * union - inter * d_union) / (union * union);
    }

    // normalized center distance
    let rho2 = center_dist_sq(a, b);
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let c2 = cw * cw + ch * ch;
    if rho2 > 0.0 && (ax1 == bx1 || ax2 == bx2 || ay1 == by1 || ay2 == by2) {
        return Err(GeometryError::NonDifferentiable("coincident enclosing edges"));
    }
    let dcw_dx = f64::from(u8::from(ax2 > bx2)) - f64::from(u8::from(ax1 < bx1));
    let dcw_dw = 0.5 * (f64::from(u8::from(ax2 > bx2)) + f64::from(u8::from(ax1 < bx1)));
    let dch_dy = f64::from(u8::from(ay2 > by2)) - f64::from(u8::from(ay1 < by1));
    let dch_dh = 0.5 * (f64::from(u8::from(ay2 > by2)) + f64::from(u8::from(ay1 < by1)));
    let d_c2 = [
        2.0 * cw * dcw_dx,
        2.0 * ch * dch_dy,
        2.0 * cw * dcw_dw,
        2.0 * ch * dch_dh,
    ];
    let d_rho2 = [2.0 * (a.cx - b.cx), 2.0 * (a.cy - b.cy), 0.0, 0.0];
    let mut d_dist = [0.0; 4];
    for k in 0..4 {
        d_dist[k] = d_rho2[k] / c2 - rho2 * d_c2[k] / (c2 * c2);
    }

    // aspect-ratio consistency
    let theta_a = aspect_angle(a.w, a.h);
    let delta = aspect_angle(b.w, b.h) - theta_a;
    let v = 4.0 / (PI * PI) * delta * delta;
    let norm = a.w * a.w + a.h * a.h;
    let dtheta = [0.0, 0.0, a.h / norm, -a.w / norm];
    let mut d_v = [0.0; 4];
    for k in 0..4 {
        d_v[k] = -8.0 / (PI * PI) * delta * dtheta[k];
    }
    let den = (1.0 - iou) + v;
    let alpha = if v > 0.0 { v / den } else { 0.0 };

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_alpha = match mode {
            AlphaMode::Constant => 0.0,
            AlphaMode::Exact if v > 0.0 => (d_v[k] * (1.0 - iou) + v * d_iou[k]) / (den * den),
            AlphaMode::Exact => 0.0,
        };
        grad[k] = d_iou[k] - d_dist[k] - (d_alpha * v + alpha * d_v[k]);
    }
    Ok(grad)
}

/// Gradient of the normalized center-distance penalty `rho^2/c^2` with
/// respect to `a`. Smooth wherever `rho = 0`, including identical boxes.
pub fn distance_penalty_grad(a: &BBox, b: &BBox) -> Result<[f64; 4], GeometryError> {
    a.validate()?;
    b.validate()?;
    let rho2 = center_dist_sq(a, b);
    let c2 = enclosing_diag_sq(a, b);
    if c2 <= 0.0 {
        return Err(GeometryError::BothZeroArea);
    }
    if rho2 == 0.0 {
        return Ok([0.0; 4]);
    }
    if a.x1() == b.x1() || a.x2() == b.x2() || a.y1() == b.y1() || a.y2() == b.y2() {
        return Err(GeometryError::NonDifferentiable("coincident enclosing edges"));
    }
    let cw = a.x2().max(b.x2()) - a.x1().min(b.x1());
    let ch = a.y2().max(b.y2()) - a.y1().min(b.y1());
    let sx = f64::from(u8::from(a.x2() > b.x2()));
    let tx = f64::from(u8::from(a.x1() < b.x1()));
    let sy = f64::from(u8::from(a.y2() > b.y2()));
    let ty = f64::from(u8::from(a.y1() < b.y1()));
    let d_c2 = [
        2.0 * cw * (sx - tx),
        2.0 * ch * (sy - ty),
        cw * (sx + tx),
        ch * (sy + ty),
    ];
    let d_rho2 = [2.0 * (a.cx - b.cx), 2.0 * (a.cy - b.cy), 0.0, 0.0];
    let mut g = [0.0; 4];
    for k in 0..4 {
        g[k] = d_rho2[k] / c2 - rho2 * d_c2[k] / (c2 * c2);
    }
    Ok(g)
}
