//! DOTA annotation files, JSON-lines detection streams and tiling of
//! annotations into overlapping sub-images.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    clip_convex, convex_hull, min_area_rect, ConvexPolygon, HBox, OrientedRect, Point2,
};
use crate::post::Detection;
use crate::repr::{encode_arp, quad_to_rect, rect_to_quad, ArpBox, QuadBox};

/// Decimal places kept when writing coordinates.
const DOTA_DECIMALS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub quad: QuadBox,
    pub category: String,
    pub difficult: bool,
}

/// An annotation file: metadata header lines followed by records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DotaDocument {
    pub headers: Vec<String>,
    pub records: Vec<AnnotationRecord>,
}

fn is_header(line: &str) -> bool {
    line.starts_with("imagesource") || line.starts_with("gsd")
}

fn parse_record(line: &str, lineno: usize) -> Result<AnnotationRecord> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 10 {
        return Err(Error::parse(
            lineno,
            format!("expected 10 fields, found {}", tokens.len()),
        ));
    }
    let mut c = [0.0; 8];
    for (i, t) in tokens[..8].iter().enumerate() {
        let v: f64 = t
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad coordinate `{t}`")))?;
        if !v.is_finite() {
            return Err(Error::parse(lineno, format!("non-finite coordinate `{t}`")));
        }
        c[i] = v;
    }
    let difficult = match tokens[9] {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::parse(
                lineno,
                format!("difficult flag must be 0 or 1, got `{other}`"),
            ))
        }
    };
    Ok(AnnotationRecord {
        quad: QuadBox::from_coords(c),
        category: tokens[8].to_string(),
        difficult,
    })
}

/// Parses a DOTA annotation file, keeping its header lines. Blank lines are
/// skipped; line numbers in errors are 1-based.
pub fn parse_dota_document(text: &str) -> Result<DotaDocument> {
    let mut doc = DotaDocument::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if is_header(line) {
            doc.headers.push(line.to_string());
        } else {
            doc.records.push(parse_record(line, i + 1)?);
        }
    }
    Ok(doc)
}

pub fn parse_dota(text: &str) -> Result<Vec<AnnotationRecord>> {
    Ok(parse_dota_document(text)?.records)
}

/// Fixed six decimals with trailing zeros removed; never prints `-0`.
pub fn format_coord(v: f64) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("coordinate {v}")));
    }
    let mut s = format!("{v:.DOTA_DECIMALS$}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".to_string();
    }
    Ok(s)
}

pub fn write_dota(records: &[AnnotationRecord]) -> Result<String> {
    write_dota_document(&DotaDocument {
        headers: Vec::new(),
        records: records.to_vec(),
    })
}

pub fn write_dota_document(doc: &DotaDocument) -> Result<String> {
    let mut out = String::new();
    for h in &doc.headers {
        out.push_str(h);
        out.push('\n');
    }
    for r in &doc.records {
        if r.category.is_empty() || r.category.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "category `{}` must be a single non-empty token",
                r.category
            )));
        }
        for v in r.quad.coords() {
            out.push_str(&format_coord(v)?);
            out.push(' ');
        }
        writeln!(out, "{} {}", r.category, u8::from(r.difficult)).unwrap();
    }
    Ok(out)
}

/// A box as written in a detection stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum BoxSpec {
    /// Eight vertex coordinates in any order.
    Quad([f64; 8]),
    /// `x, y, w, h, lambda1, lambda2, lambda3`.
    Arp([f64; 7]),
    /// `cx, cy, w, h, theta` in radians.
    Doc([f64; 5]),
}

impl BoxSpec {
    /// Encodes to the area-ratio form. Near-axis-aligned quads and rects
    /// report [`Error::NearHorizontal`].
    pub fn to_arp(&self) -> Result<ArpBox> {
        match *self {
            BoxSpec::Arp(p) => ArpBox::from_params(p),
            BoxSpec::Doc([cx, cy, w, h, theta]) => {
                encode_arp(&OrientedRect::new(cx, cy, w, h, theta)?)
            }
            BoxSpec::Quad(c) => encode_arp(&quad_to_rect(&QuadBox::from_coords(c))?),
        }
    }

    /// Like [`BoxSpec::to_arp`], but boxes too close to axis-aligned for the
    /// ratio encoding become horizontal boxes (all ratios 1).
    pub fn to_arp_or_horizontal(&self) -> Result<ArpBox> {
        match self.to_arp() {
            Err(Error::NearHorizontal(_)) => Ok(ArpBox::horizontal(&self.bounding_box()?)),
            other => other,
        }
    }

    fn bounding_box(&self) -> Result<HBox> {
        let rect = match *self {
            BoxSpec::Arp(p) => return Ok(ArpBox::from_params(p)?.hbox()),
            BoxSpec::Doc([cx, cy, w, h, theta]) => OrientedRect::new(cx, cy, w, h, theta)?,
            BoxSpec::Quad(c) => quad_to_rect(&QuadBox::from_coords(c))?,
        };
        Ok(crate::geom::aabb_of(&rect.corners()))
    }
}

/// A class given either by index or by category name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Id(u32),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image: String,
    pub class: ClassRef,
    pub score: f64,
    #[serde(rename = "box")]
    pub shape: BoxSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obliquity_p: Option<f64>,
}

/// Obliquity probability assumed when a record does not carry one.
pub const DEFAULT_OBLIQUITY_P: f64 = 0.5;

impl DetectionRecord {
    pub fn to_detection(&self, vocab: &ClassVocab) -> Result<Detection> {
        Detection::new(
            self.shape.to_arp_or_horizontal()?,
            self.score,
            vocab.resolve(&self.class)?,
            self.obliquity_p.unwrap_or(DEFAULT_OBLIQUITY_P),
        )
    }
}

/// Parses one JSON object per non-blank line. Boxes are kept as written and
/// only encoded on conversion.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(Error::parse(
                i + 1,
                format!("score {} outside [0, 1]", rec.score),
            ));
        }
        if let Some(p) = rec.obliquity_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(
                    i + 1,
                    format!("obliquity_p {p} outside [0, 1]"),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_detections(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records are serializable"));
        out.push('\n');
    }
    out
}

/// Category names mapped to class ids in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocab {
    names: Vec<String>,
}

impl ClassVocab {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self {
            names: set.into_iter().collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| i as u32)
    }

    pub fn resolve(&self, class: &ClassRef) -> Result<u32> {
        match class {
            ClassRef::Id(id) => Ok(*id),
            ClassRef::Name(n) => self
                .id(n)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{n}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileSpec {
    pub tile_size: u32,
    pub overlap: u32,
    /// A clipped annotation is kept in a tile only if at least this
    /// fraction of its area lies inside.
    pub min_retained: f64,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_size: 1024,
            overlap: 200,
            min_retained: 0.5,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= overlap < tile_size, got overlap {} and tile_size {}",
                self.overlap, self.tile_size
            )));
        }
        if !(0.0..=1.0).contains(&self.min_retained) {
            return Err(Error::InvalidArgument(format!(
                "min_retained must lie in [0, 1], got {}",
                self.min_retained
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.tile_size - self.overlap
    }
}

/// Top-left corner of a tile in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub x0: u32,
    pub y0: u32,
}

impl std::fmt::Display for TileId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.x0, self.y0)
    }
}

/// Tile starts along one axis. The last tile is shifted back so that it ends
/// at the image border instead of running past it.
pub fn tile_origins(len: u32, spec: &TileSpec) -> Vec<u32> {
    if len <= spec.tile_size {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0;
    while s + spec.tile_size < len {
        starts.push(s);
        s += spec.stride();
    }
    starts.push(len - spec.tile_size);
    starts.dedup();
    starts
}

fn quad_polygon(q: &QuadBox) -> Option<ConvexPolygon> {
    ConvexPolygon::new(&q.vertices)
        .or_else(|_| ConvexPolygon::new(&convex_hull(&q.vertices)))
        .ok()
}

fn clamp_point(p: Point2, w: f64, h: f64) -> Point2 {
    Point2::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h))
}

/// Splits annotations over overlapping tiles. Every tile of the grid is
/// present in the result, possibly with no records. A record lying entirely
/// inside a tile is translated unchanged; one crossing the tile border is
/// clipped and kept only if enough of its area remains. Clipped shapes that
/// are not quadrilaterals are replaced by their minimum-area rectangle,
/// clamped to the tile.
pub fn tile_annotations(
    records: &[AnnotationRecord],
    image_w: u32,
    image_h: u32,
    spec: &TileSpec,
) -> Result<BTreeMap<TileId, Vec<AnnotationRecord>>> {
    spec.validate()?;
    if image_w == 0 || image_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "image size {image_w} x {image_h}"
        )));
    }
    let polys: Vec<Option<ConvexPolygon>> = records.iter().map(|r| quad_polygon(&r.quad)).collect();
    let mut out = BTreeMap::new();

    for &y0 in &tile_origins(image_h, spec) {
        for &x0 in &tile_origins(image_w, spec) {
            let tw = f64::from(spec.tile_size.min(image_w));
            let th = f64::from(spec.tile_size.min(image_h));
            let (fx, fy) = (f64::from(x0), f64::from(y0));
            let bounds = HBox::from_bounds(fx, fy, fx + tw, fy + th);
            let tile_poly = ConvexPolygon::new(&bounds.corners()).expect("tile has positive size");

            let mut kept = Vec::new();
            for (r, poly) in records.iter().zip(&polys) {
                let Some(poly) = poly else { continue };
                let inside = r.quad.vertices.iter().all(|p| {
                    p.x >= bounds.min_x()
                        && p.x <= bounds.max_x()
                        && p.y >= bounds.min_y()
                        && p.y <= bounds.max_y()
                });
                if inside {
                    kept.push(AnnotationRecord {
                        quad: r.quad.translate(-fx, -fy),
                        ..r.clone()
                    });
                    continue;
                }
                let Some(clipped) = clip_convex(poly, &tile_poly) else {
                    continue;
                };
                if clipped.area() < spec.min_retained * poly.area() {
                    continue;
                }
                let local: Vec<Point2> = clipped
                    .vertices()
                    .iter()
                    .map(|p| Point2::new(p.x - fx, p.y - fy))
                    .collect();
                let quad = if local.len() == 4 {
                    QuadBox::new([local[0], local[1], local[2], local[3]])
                } else {
                    let q = rect_to_quad(&min_area_rect(&local)?);
                    QuadBox::new(q.vertices.map(|p| clamp_point(p, tw, th)))
                };
                kept.push(AnnotationRecord { quad, ..r.clone() });
            }
            out.insert(TileId { x0, y0 }, kept);
        }
    }
    Ok(out)
}
