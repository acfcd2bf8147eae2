//! Rotated non-maximum suppression and the final horizontal/oblique choice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polygon_iou, ConvexPolygon, Outline};
use crate::repr::{ArpBox, Footprint, DEFAULT_LAMBDA_THR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub arp: ArpBox,
    pub score: f64,
    pub class_id: u32,
    /// Predicted probability that the object is oblique.
    pub obliquity_p: f64,
}

impl Detection {
    pub fn new(arp: ArpBox, score: f64, class_id: u32, obliquity_p: f64) -> Result<Self> {
        let d = Self {
            arp,
            score,
            class_id,
            obliquity_p,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.arp.validate()?;
        for (name, v) in [("score", self.score), ("obliquity_p", self.obliquity_p)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalBox {
    pub shape: Footprint,
    pub score: f64,
    pub class_id: u32,
}

/// Horizontal box when `lambda1 >= lambda_thr` or when the quad cannot be
/// decoded, decoded quad otherwise.
pub fn select_final(det: &Detection, lambda_thr: f64) -> FinalBox {
    FinalBox {
        shape: Footprint::of(&det.arp, lambda_thr),
        score: det.score,
        class_id: det.class_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsOptions {
    pub iou_thr: f64,
    pub score_thr: f64,
    /// Suppress only within a class. When `false` every detection competes
    /// with every other.
    pub per_class: bool,
    /// Obliquity threshold used to build the footprints being compared.
    pub lambda_thr: f64,
}

impl Default for NmsOptions {
    fn default() -> Self {
        Self {
            iou_thr: 0.5,
            score_thr: 0.0,
            per_class: true,
            lambda_thr: DEFAULT_LAMBDA_THR,
        }
    }
}

impl NmsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_thr > 0.0 && self.iou_thr <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "iou_thr must lie in (0, 1], got {}",
                self.iou_thr
            )));
        }
        if !(0.0..=1.0).contains(&self.score_thr) {
            return Err(Error::InvalidArgument(format!(
                "score_thr must lie in [0, 1], got {}",
                self.score_thr
            )));
        }
        Ok(())
    }
}

/// Greedy rotated NMS. Detections are visited by descending score (ties in
/// input order); one is kept iff its IoU with every kept detection of the
/// same class is below `iou_thr`. The result lists kept detections in
/// visiting order.
pub fn r_nms(dets: &[Detection], opts: &NmsOptions) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= opts.score_thr)
        .collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));

    let polys: Vec<Option<ConvexPolygon>> = dets
        .iter()
        .map(|d| Footprint::of(&d.arp, opts.lambda_thr).to_polygon().ok())
        .collect();
    let iou = |i: usize, j: usize| match (&polys[i], &polys[j]) {
        (Some(a), Some(b)) => polygon_iou(a, b),
        _ => 0.0,
    };

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            (!opts.per_class || dets[k].class_id == dets[i].class_id) && iou(i, k) >= opts.iou_thr
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}
