//! Planar geometry kernel.
//!
//! Coordinates follow the image convention: `x` grows to the right and `y`
//! grows downward. A polygon is stored with positive shoelace area, which is
//! counter-clockwise in mathematical orientation and clockwise on screen.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area tolerance in px² below which a polygon is treated as degenerate.
pub const EPS_GEOM: f64 = 1e-9;

/// Distance tolerance in px for half-plane tests during clipping.
const EPS_SIDE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Signed shoelace area. Positive for counter-clockwise (mathematical) order.
pub fn signed_area(points: &[Point2]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p.cross(q);
    }
    0.5 * acc
}

/// Area of a convex polygon given by its vertices in either orientation.
pub fn polygon_area(points: &[Point2]) -> Result<f64> {
    Ok(ConvexPolygon::new(points)?.area())
}

/// A strictly convex polygon with positive orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    /// Validates and normalizes `points`: repeated consecutive vertices are
    /// dropped and the order is flipped if needed so the signed area is positive.
    pub fn new(points: &[Point2]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("vertex {p:?}")));
        }
        let mut vertices = dedup_ring(points, scale_of(points) * 1e-12);
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(
                "fewer than 3 distinct vertices".into(),
            ));
        }
        let area = signed_area(&vertices);
        if area.abs() <= EPS_GEOM {
            return Err(Error::InvalidPolygon(format!(
                "degenerate polygon with area {area:e}"
            )));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let e1 = vertices[(i + 1) % n] - vertices[i];
            let e2 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
            if e1.cross(e2) < -1e-9 * e1.norm() * e2.norm() {
                return Err(Error::InvalidPolygon(format!(
                    "polygon is not convex at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    fn from_clipped(vertices: Vec<Point2>) -> Option<Self> {
        let vertices = dedup_ring(&vertices, scale_of(&vertices) * 1e-12);
        if vertices.len() < 3 || signed_area(&vertices) <= EPS_GEOM {
            return None;
        }
        Some(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Point-in-polygon test with a boundary tolerance of `tol` px.
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b - a;
            e.cross(p - a) >= -tol * e.norm()
        })
    }
}

fn scale_of(points: &[Point2]) -> f64 {
    points
        .iter()
        .fold(1.0_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
}

fn dedup_ring(points: &[Point2], tol: f64) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last().is_none_or(|&q| q.distance(p) > tol) {
            out.push(p);
        }
    }
    while out.len() > 1 && out[0].distance(out[out.len() - 1]) <= tol {
        out.pop();
    }
    out
}

/// Sutherland–Hodgman clipping of one convex polygon by another.
/// Returns `None` when the intersection has no area.
pub fn clip_convex(subject: &ConvexPolygon, clip: &ConvexPolygon) -> Option<ConvexPolygon> {
    let mut output: Vec<Point2> = subject.vertices.clone();
    let n = clip.vertices.len();
    for i in 0..n {
        if output.is_empty() {
            return None;
        }
        let a = clip.vertices[i];
        let b = clip.vertices[(i + 1) % n];
        let edge = b - a;
        let len = edge.norm();
        let side = |p: Point2| edge.cross(p - a) / len;

        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let s_cur = side(cur);
            let s_prev = side(prev);
            let cur_in = s_cur >= -EPS_SIDE;
            let prev_in = s_prev >= -EPS_SIDE;
            if cur_in {
                if !prev_in {
                    output.push(segment_cross(prev, cur, s_prev, s_cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_cross(prev, cur, s_prev, s_cur));
            }
        }
    }
    ConvexPolygon::from_clipped(output)
}

fn segment_cross(p: Point2, q: Point2, sp: f64, sq: f64) -> Point2 {
    let t = sp / (sp - sq);
    p + (q - p) * t
}

/// Anything with a closed polygonal outline.
pub trait Outline {
    fn outline(&self) -> Vec<Point2>;

    fn to_polygon(&self) -> Result<ConvexPolygon> {
        ConvexPolygon::new(&self.outline()).map_err(|e| match e {
            Error::InvalidPolygon(msg) => Error::DegenerateBox(msg),
            other => other,
        })
    }

    /// Tightest axis-aligned box containing the outline.
    fn aabb(&self) -> HBox {
        aabb_of(&self.outline())
    }
}

impl Outline for ConvexPolygon {
    fn outline(&self) -> Vec<Point2> {
        self.vertices.clone()
    }
}

fn lex_cmp(a: &[Point2], b: &[Point2]) -> Ordering {
    for (p, q) in a.iter().zip(b) {
        let o = p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Area of intersection over area of union of two convex polygons.
///
/// The operands are put in a canonical order before clipping so the result
/// is bit-for-bit symmetric.
pub fn polygon_iou(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    let (first, second) = match lex_cmp(&a.vertices, &b.vertices) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let inter = clip_convex(first, second).map_or(0.0, |p| p.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Rotated IoU between any two convex outlines (oriented rectangles, quads,
/// axis-aligned boxes).
pub fn rotated_iou<A: Outline + ?Sized, B: Outline + ?Sized>(a: &A, b: &B) -> Result<f64> {
    let pa = a.to_polygon()?;
    let pb = b.to_polygon()?;
    Ok(polygon_iou(&pa, &pb))
}

/// Axis-aligned box in center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl HBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_bounds(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            x: 0.5 * (min_x + max_x),
            y: 0.5 * (min_y + max_y),
            w: max_x - min_x,
            h: max_y - min_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(format!("{self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateBox(format!(
                "width and height must be positive, got {} x {}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn min_x(&self) -> f64 {
        self.x - 0.5 * self.w
    }
    pub fn max_x(&self) -> f64 {
        self.x + 0.5 * self.w
    }
    pub fn min_y(&self) -> f64 {
        self.y - 0.5 * self.h
    }
    pub fn max_y(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Smallest axis-aligned box covering both.
    pub fn enclosing(&self, other: &HBox) -> HBox {
        HBox::from_bounds(
            self.min_x().min(other.min_x()),
            self.min_y().min(other.min_y()),
            self.max_x().max(other.max_x()),
            self.max_y().max(other.max_y()),
        )
    }

    pub fn intersection_area(&self, other: &HBox) -> f64 {
        let iw = (self.max_x().min(other.max_x()) - self.min_x().max(other.min_x())).max(0.0);
        let ih = (self.max_y().min(other.max_y()) - self.min_y().max(other.min_y())).max(0.0);
        iw * ih
    }

    /// Axis-aligned IoU.
    pub fn iou(&self, other: &HBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).min(1.0)
        }
    }

    /// Corners starting at the top-left, in positive orientation.
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.min_x(), self.min_y()),
            Point2::new(self.max_x(), self.min_y()),
            Point2::new(self.max_x(), self.max_y()),
            Point2::new(self.min_x(), self.max_y()),
        ]
    }
}

impl Outline for HBox {
    fn outline(&self) -> Vec<Point2> {
        self.corners().to_vec()
    }

    fn aabb(&self) -> HBox {
        *self
    }
}

/// Tightest axis-aligned box around a point set.
pub fn aabb_of(points: &[Point2]) -> HBox {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    HBox::from_bounds(min_x, min_y, max_x, max_y)
}

/// Five-parameter rotated rectangle in the OpenCV-style convention.
///
/// The angle is kept in `[-π/2, 0)` and `w` is the length of the edge whose
/// direction makes angle `theta` with the +x axis. Construction folds every
/// aliased description (`w`/`h` swapped with `theta ± π/2`, `theta ± π`)
/// onto this canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl OrientedRect {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if ![cx, cy, w, h, theta].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "rect ({cx}, {cy}, {w}, {h}, {theta})"
            )));
        }
        if w <= 0.0 || h <= 0.0 || w * h <= EPS_GEOM {
            return Err(Error::DegenerateBox(format!("rect size {w} x {h}")));
        }
        let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
        if t >= FRAC_PI_2 {
            t -= PI;
        }
        let (w, h, theta) = if t >= 0.0 {
            (h, w, t - FRAC_PI_2)
        } else {
            (w, h, t)
        };
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: theta.max(-FRAC_PI_2),
        })
    }

    /// Rectangle whose sides run along the axes.
    pub fn axis_aligned(b: &HBox) -> Result<Self> {
        Self::new(b.x, b.y, b.w, b.h, 0.0)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `[cx, cy, w, h, theta]`.
    pub fn params(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    /// Corners in positive orientation.
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.theta.sin_cos();
        let u = Point2::new(c, s) * (0.5 * self.w);
        let v = Point2::new(-s, c) * (0.5 * self.h);
        let o = self.center();
        [o - u - v, o + u - v, o + u + v, o - u + v]
    }
}

impl Outline for OrientedRect {
    fn outline(&self) -> Vec<Point2> {
        self.corners().to_vec()
    }

    fn to_polygon(&self) -> Result<ConvexPolygon> {
        ConvexPolygon::new(&self.corners())
    }
}

/// Convex hull by Andrew's monotone chain, collinear points removed,
/// positive orientation. The result does not depend on input order.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point2, a: Point2, b: Point2| (a - o).cross(b - o);
    let mut lower: Vec<Point2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle via rotating calipers over the hull.
pub fn min_area_rect(points: &[Point2]) -> Result<OrientedRect> {
    if points.len() < 3 {
        return Err(Error::DegenerateBox(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("point {p:?}")));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 || signed_area(&hull) <= EPS_GEOM {
        return Err(Error::DegenerateBox("points are collinear".into()));
    }

    let n = hull.len();
    let mut best: Option<(f64, Point2, f64, f64, f64)> = None;
    for i in 0..n {
        let edge = hull[(i + 1) % n] - hull[i];
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let u = edge * (1.0 / len);
        let v = Point2::new(-u.y, u.x);
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &p in &hull {
            let d = p - hull[i];
            let pu = d.dot(u);
            let pv = d.dot(v);
            lo_u = lo_u.min(pu);
            hi_u = hi_u.max(pu);
            lo_v = lo_v.min(pv);
            hi_v = hi_v.max(pv);
        }
        let area = (hi_u - lo_u) * (hi_v - lo_v);
        if best.is_none_or(|b| area < b.0) {
            let center = hull[i] + u * (0.5 * (lo_u + hi_u)) + v * (0.5 * (lo_v + hi_v));
            best = Some((area, center, hi_u - lo_u, hi_v - lo_v, u.y.atan2(u.x)));
        }
    }
    let (_, c, w, h, theta) =
        best.ok_or_else(|| Error::DegenerateBox("points are collinear".into()))?;
    OrientedRect::new(c.x, c.y, w, h, theta)
}
