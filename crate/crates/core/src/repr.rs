//! Area-ratio encoding of oriented rectangles.
//!
//! An oriented rectangle is described by its axis-aligned bounding box
//! `(x, y, w, h)` plus three area ratios against that box:
//!
//! * `lambda1`: area of the rectangle itself,
//! * `lambda2`: area of the parallelogram spanned by the box's horizontal
//!   sides and the rectangle's slanted edge direction,
//! * `lambda3`: area of the parallelogram spanned by the box's vertical
//!   sides and the same edge direction.
//!
//! The rectangle's vertices are named by the side of the bounding box they
//! touch: `a` on the left side, `b` on the top, `c` on the right and `d` on
//! the bottom. `h1` is the distance from the top-left box corner down to `a`
//! and `w1` the distance from that corner right to `b`. The corner triangles
//! are similar with ratios `k1 = h1 / (h - h1)` and `k2 = w1 / (w - w1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{convex_hull, min_area_rect, HBox, OrientedRect, Outline, Point2};

/// Relative tilt below which a rectangle is treated as axis-aligned.
pub const EPS_AXIS: f64 = 1e-6;

/// Guard on the denominator of the similarity-ratio inversion.
pub const EPS_DEN: f64 = 1e-12;

/// Default obliquity threshold separating oriented from horizontal boxes.
pub const DEFAULT_LAMBDA_THR: f64 = 0.95;

/// Seven-parameter area-ratio box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArpBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl ArpBox {
    pub fn new(
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        lambda1: f64,
        lambda2: f64,
        lambda3: f64,
    ) -> Result<Self> {
        let b = Self {
            x,
            y,
            w,
            h,
            lambda1,
            lambda2,
            lambda3,
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from `[x, y, w, h, lambda1, lambda2, lambda3]`.
    pub fn from_params(p: [f64; 7]) -> Result<Self> {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    pub fn params(&self) -> [f64; 7] {
        [
            self.x,
            self.y,
            self.w,
            self.h,
            self.lambda1,
            self.lambda2,
            self.lambda3,
        ]
    }

    /// The box of an axis-aligned object: every ratio is one.
    pub fn horizontal(b: &HBox) -> Self {
        Self {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateBox(format!(
                "bounding box {} x {}",
                self.w, self.h
            )));
        }
        if !(self.lambda1 > 0.0 && self.lambda1 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda1 must lie in (0, 1], got {}",
                self.lambda1
            )));
        }
        if self.lambda2 <= 0.0 || self.lambda3 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda2 and lambda3 must be positive, got {} and {}",
                self.lambda2, self.lambda3
            )));
        }
        Ok(())
    }

    pub fn hbox(&self) -> HBox {
        HBox {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }

    pub fn obliquity(&self, lambda_thr: f64) -> ObliquityLabel {
        obliquity_label(self.lambda1, lambda_thr)
    }

    /// Horizontal chord of the `lambda2` parallelogram and vertical chord of
    /// the `lambda3` one. Horizontal boxes (by `lambda_thr`) report `(w, h)`.
    pub fn parallelogram_dims(&self, lambda_thr: f64) -> (f64, f64) {
        match self.obliquity(lambda_thr) {
            ObliquityLabel::Hbb => (self.w, self.h),
            ObliquityLabel::Obb => (self.lambda2 * self.w, self.lambda3 * self.h),
        }
    }
}

/// Four vertices in role order `a, b, c, d` (left, top, right, bottom).
///
/// Quads read from annotation files keep their file order; use
/// [`QuadBox::canonical`] to assign roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadBox {
    pub vertices: [Point2; 4],
}

impl QuadBox {
    pub fn new(vertices: [Point2; 4]) -> Self {
        Self { vertices }
    }

    pub fn from_coords(c: [f64; 8]) -> Self {
        Self::new([
            Point2::new(c[0], c[1]),
            Point2::new(c[2], c[3]),
            Point2::new(c[4], c[5]),
            Point2::new(c[6], c[7]),
        ])
    }

    pub fn coords(&self) -> [f64; 8] {
        let v = &self.vertices;
        [
            v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y,
        ]
    }

    /// Reorders four points of a convex quadrilateral, given in any order,
    /// into role order starting at the leftmost vertex.
    pub fn canonical(points: [Point2; 4]) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("vertex {p:?}")));
        }
        let hull = convex_hull(&points);
        if hull.len() != 4 {
            return Err(Error::DegenerateBox(format!(
                "expected a convex quadrilateral, hull has {} vertices",
                hull.len()
            )));
        }
        let ring: [Point2; 4] = [hull[0], hull[1], hull[2], hull[3]];
        Ok(Self::new(rotate_to_leftmost(ring)))
    }

    pub fn a(&self) -> Point2 {
        self.vertices[0]
    }
    pub fn b(&self) -> Point2 {
        self.vertices[1]
    }
    pub fn c(&self) -> Point2 {
        self.vertices[2]
    }
    pub fn d(&self) -> Point2 {
        self.vertices[3]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.vertices.map(|p| Point2::new(p.x + dx, p.y + dy)))
    }
}

impl Outline for QuadBox {
    fn outline(&self) -> Vec<Point2> {
        self.vertices.to_vec()
    }
}

/// Starts a positively oriented ring at its leftmost vertex; among
/// (near-)ties on `x` the upper one wins.
fn rotate_to_leftmost(ring: [Point2; 4]) -> [Point2; 4] {
    let scale = ring
        .iter()
        .fold(1.0_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    let tol = 1e-12 * scale;
    let min_x = ring.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let start = (0..4)
        .filter(|&i| ring[i].x <= min_x + tol)
        .min_by(|&i, &j| ring[i].y.total_cmp(&ring[j].y))
        .unwrap_or(0);
    [0, 1, 2, 3].map(|k| ring[(start + k) % 4])
}

/// Similarity ratios of the corner triangles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KRatios {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObliquityLabel {
    Obb,
    Hbb,
}

/// `Obb` iff `lambda1 < lambda_thr`; equality falls to `Hbb`.
pub fn obliquity_label(lambda1: f64, lambda_thr: f64) -> ObliquityLabel {
    if lambda1 < lambda_thr {
        ObliquityLabel::Obb
    } else {
        ObliquityLabel::Hbb
    }
}

/// Region covered by a box after the oblique/horizontal decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Footprint {
    Quad(QuadBox),
    Hbb(HBox),
}

impl Footprint {
    /// Decoded quad for oblique boxes, the bounding box otherwise or when
    /// decoding is singular.
    pub fn of(arp: &ArpBox, lambda_thr: f64) -> Self {
        match arp.obliquity(lambda_thr) {
            ObliquityLabel::Hbb => Footprint::Hbb(arp.hbox()),
            ObliquityLabel::Obb => match decode_vertices(arp) {
                Ok(q) => Footprint::Quad(q),
                Err(_) => Footprint::Hbb(arp.hbox()),
            },
        }
    }

    pub fn is_hbb(&self) -> bool {
        matches!(self, Footprint::Hbb(_))
    }
}

impl Outline for Footprint {
    fn outline(&self) -> Vec<Point2> {
        match self {
            Footprint::Quad(q) => q.outline(),
            Footprint::Hbb(b) => b.outline(),
        }
    }
}

/// Corners of `rect` in role order. Axis-aligned rectangles get
/// `a` = top-left, `b` = top-right, `c` = bottom-right, `d` = bottom-left.
pub fn rect_to_quad(rect: &OrientedRect) -> QuadBox {
    QuadBox::new(rotate_to_leftmost(rect.corners()))
}

/// Minimum-area rectangle through the four vertices.
pub fn quad_to_rect(quad: &QuadBox) -> Result<OrientedRect> {
    min_area_rect(&quad.vertices)
}

pub fn encode_arp(rect: &OrientedRect) -> Result<ArpBox> {
    let quad = rect_to_quad(rect);
    let hb = quad.aabb();
    let (w, h) = (hb.w, hb.h);
    let w1 = quad.b().x - hb.min_x();
    let h1 = quad.a().y - hb.min_y();
    let w2 = w - w1;
    let h2 = h - h1;
    let tol = EPS_AXIS * w.max(h);
    if w1.min(w2).min(h1).min(h2) < tol {
        return Err(Error::NearHorizontal(format!(
            "rectangle is axis-aligned within tolerance (w1 = {w1:e}, h1 = {h1:e})"
        )));
    }

    let k1 = h1 / h2;
    let k2 = w1 / w2;
    let s2 = 0.5 * w2 * h2;
    let s1 = k1 * k2 * s2;
    let s3 = k1 * k1 * s2;
    let s4 = k2 * k2 * s2;
    let sh = w * h;
    let so = sh - 2.0 * (s1 + s2);
    let sa = so + 2.0 * (s1 + s3);
    let sb = so + 2.0 * (s1 + s4);
    debug_assert!(
        (so - rect.area()).abs() <= 1e-7 * sh,
        "area identity violated: {so} vs {}",
        rect.area()
    );

    Ok(ArpBox {
        x: hb.x,
        y: hb.y,
        w,
        h,
        lambda1: so / sh,
        lambda2: sa / sh,
        lambda3: sb / sh,
    })
}

/// Encodes any four corners of a rectangle, in any order.
pub fn encode_quad(quad: &QuadBox) -> Result<ArpBox> {
    encode_arp(&quad_to_rect(quad)?)
}

pub fn k_ratios(arp: &ArpBox) -> Result<KRatios> {
    let (l1, l2, l3) = (arp.lambda1, arp.lambda2, arp.lambda3);
    let den = (1.0 - l1) * (l2 - l1) + (1.0 - l2) * (l3 - l1);
    if den.is_nan() || den <= EPS_DEN {
        return Err(Error::NearHorizontal(format!(
            "similarity-ratio denominator {den:e} is not positive"
        )));
    }
    let k1 = ((l2 - l1) * (l2 - l1) / den).sqrt();
    let k2 = ((l3 - l1) * (l3 - l1) / den).sqrt();
    let ok = |k: f64| k.is_finite() && k > 0.0;
    if !ok(k1) || !ok(k2) {
        return Err(Error::NearHorizontal(format!(
            "similarity ratios out of range: k1 = {k1}, k2 = {k2}"
        )));
    }
    Ok(KRatios { k1, k2 })
}

/// Recovers the four vertices. The result is always a parallelogram; it is
/// a rectangle only when the three ratios are mutually consistent.
pub fn decode_vertices(arp: &ArpBox) -> Result<QuadBox> {
    let KRatios { k1, k2 } = k_ratios(arp)?;
    let (x, y, w, h) = (arp.x, arp.y, arp.w, arp.h);
    let h1 = k1 / (1.0 + k1) * h;
    let w1 = k2 / (1.0 + k2) * w;
    Ok(QuadBox::new([
        Point2::new(x - 0.5 * w, y - 0.5 * h + h1),
        Point2::new(x - 0.5 * w + w1, y - 0.5 * h),
        Point2::new(x + 0.5 * w, y + 0.5 * h - h1),
        Point2::new(x + 0.5 * w - w1, y + 0.5 * h),
    ]))
}

/// `true` iff every pair of adjacent edges is perpendicular within `tol`
/// (absolute cosine of the corner angle).
pub fn is_rectangular(quad: &QuadBox, tol: f64) -> bool {
    let v = &quad.vertices;
    (0..4).all(|i| {
        let e1 = v[(i + 1) % 4] - v[i];
        let e2 = v[(i + 2) % 4] - v[(i + 1) % 4];
        let n = e1.norm() * e2.norm();
        n > 0.0 && (e1.dot(e2) / n).abs() <= tol
    })
}

/// Width of the horizontal-side parallelogram and height of the
/// vertical-side one, i.e. `S_a / h` and `S_b / w`.
pub fn parallelogram_dims(rect: &OrientedRect, lambda_thr: f64) -> Result<(f64, f64)> {
    Ok(encode_arp(rect)?.parallelogram_dims(lambda_thr))
}
