//! VOC-style detection evaluation with rotated IoU matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polygon_iou, ConvexPolygon, Outline};
use crate::post::FinalBox;
use crate::repr::QuadBox;

/// Slack used when comparing recalls against the 11 VOC07 sample points.
const RECALL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub quad: QuadBox,
    pub class_id: u32,
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Tp,
    Fp,
    /// Matched only a difficult ground truth; counts neither way.
    Ignored,
}

fn polygon(o: &impl Outline) -> Option<ConvexPolygon> {
    o.to_polygon().ok()
}

/// Greedy matching for one image and one class. Detections are visited by
/// descending score (ties in input order) and each takes the unmatched,
/// non-difficult ground truth it overlaps most, provided the IoU reaches
/// `iou_thr`. A detection with no such partner that still overlaps a
/// difficult ground truth by `iou_thr` is ignored; anything else is a false
/// positive.
pub fn match_detections(
    dets: &[FinalBox],
    gts: &[GroundTruth],
    iou_thr: f64,
) -> Vec<(usize, MatchKind)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));

    let gt_polys: Vec<Option<ConvexPolygon>> = gts.iter().map(|g| polygon(&g.quad)).collect();
    let mut taken = vec![false; gts.len()];

    order
        .into_iter()
        .map(|i| {
            let Some(dp) = polygon(&dets[i].shape) else {
                return (i, MatchKind::Fp);
            };
            let ious: Vec<f64> = gt_polys
                .iter()
                .map(|gp| gp.as_ref().map_or(0.0, |gp| polygon_iou(&dp, gp)))
                .collect();

            let mut best: Option<usize> = None;
            for (j, g) in gts.iter().enumerate() {
                if g.difficult || taken[j] || ious[j] < iou_thr {
                    continue;
                }
                if best.is_none_or(|b| ious[j] > ious[b]) {
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                taken[j] = true;
                return (i, MatchKind::Tp);
            }
            let hits_difficult = gts
                .iter()
                .zip(&ious)
                .any(|(g, &iou)| g.difficult && iou >= iou_thr);
            if hits_difficult {
                (i, MatchKind::Ignored)
            } else {
                (i, MatchKind::Fp)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Lowest score admitted at this point.
    pub score: f64,
}

/// Precision/recall pairs obtained by lowering the score threshold one
/// distinct score at a time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Builds the curve from `(score, is_tp)` pairs. Detections sharing a
    /// score enter together, so the curve does not depend on their order.
    /// Without ground truth the curve is empty.
    pub fn from_scored(scored: &[(f64, bool)], n_gt: usize) -> Self {
        if n_gt == 0 {
            return Self::default();
        }
        let mut sorted = scored.to_vec();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

        let mut points = Vec::new();
        let (mut tp, mut seen) = (0usize, 0usize);
        let mut i = 0;
        while i < sorted.len() {
            let score = sorted[i].0;
            while i < sorted.len() && sorted[i].0 == score {
                tp += usize::from(sorted[i].1);
                seen += 1;
                i += 1;
            }
            points.push(PrPoint {
                recall: tp as f64 / n_gt as f64,
                precision: tp as f64 / seen as f64,
                score,
            });
        }
        Self { points }
    }

    pub fn last(&self) -> Option<&PrPoint> {
        self.points.last()
    }
}

/// 11-point interpolated average precision.
pub fn ap_voc07(curve: &PrCurve) -> f64 {
    let total: f64 = (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            curve
                .points
                .iter()
                .filter(|p| p.recall + RECALL_EPS >= r)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum();
    total / 11.0
}

/// Area under the monotone precision envelope.
pub fn ap_voc12(curve: &PrCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let mut rec = vec![0.0];
    let mut pre = vec![0.0];
    for p in &curve.points {
        rec.push(p.recall);
        pre.push(p.precision);
    }
    rec.push(1.0);
    pre.push(0.0);
    for i in (0..pre.len() - 1).rev() {
        pre[i] = pre[i].max(pre[i + 1]);
    }
    (0..rec.len() - 1)
        .map(|i| (rec[i + 1] - rec[i]) * pre[i + 1])
        .sum()
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMetric {
    Voc07,
    #[default]
    Voc12,
}

impl std::str::FromStr for ApMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "voc07" | "07" => Ok(Self::Voc07),
            "voc12" | "12" => Ok(Self::Voc12),
            _ => Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Non-difficult ground truths.
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub ap07: f64,
    pub ap12: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Per-class results and their aggregates. Precision, recall and F-measure
/// are taken at the operating point that admits every detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: ApMetric,
    pub iou_thr: f64,
    /// Classes with at least one non-difficult ground truth.
    pub classes: Vec<ClassReport>,
    pub map07: f64,
    pub map12: f64,
    /// `map07` or `map12` according to `metric`.
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl EvalReport {
    /// Attaches category names, indexed by class id.
    pub fn label_classes(&mut self, names: &[String]) {
        for c in &mut self.classes {
            c.name = names.get(c.class_id as usize).cloned();
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// One `class,ap07,ap12` row per class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,ap07,ap12\n");
        for c in &self.classes {
            let label = c.name.clone().unwrap_or_else(|| c.class_id.to_string());
            writeln!(out, "{label},{:.6},{:.6}", c.ap07, c.ap12).unwrap();
        }
        out
    }
}

/// Pools matches over all images per class and averages AP over classes
/// with ground truth. Images are keyed by id, so the report does not depend
/// on the order in which images were collected.
pub fn evaluate(
    dets: &BTreeMap<String, Vec<FinalBox>>,
    gts: &BTreeMap<String, Vec<GroundTruth>>,
    iou_thr: f64,
    metric: ApMetric,
) -> Result<EvalReport> {
    if !(iou_thr > 0.0 && iou_thr <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou_thr must lie in (0, 1], got {iou_thr}"
        )));
    }

    let mut classes: BTreeSet<u32> = BTreeSet::new();
    classes.extend(gts.values().flatten().map(|g| g.class_id));
    classes.extend(dets.values().flatten().map(|d| d.class_id));

    let images: BTreeSet<&String> = dets.keys().chain(gts.keys()).collect();
    let (mut all_tp, mut all_fp, mut all_gt) = (0usize, 0usize, 0usize);
    let mut reports = Vec::new();

    for &class in &classes {
        let mut scored = Vec::new();
        let mut n_gt = 0;
        for &image in &images {
            let g: Vec<GroundTruth> = gts
                .get(image)
                .into_iter()
                .flatten()
                .filter(|g| g.class_id == class)
                .copied()
                .collect();
            let d: Vec<FinalBox> = dets
                .get(image)
                .into_iter()
                .flatten()
                .filter(|d| d.class_id == class)
                .copied()
                .collect();
            n_gt += g.iter().filter(|g| !g.difficult).count();
            for (i, kind) in match_detections(&d, &g, iou_thr) {
                match kind {
                    MatchKind::Tp => scored.push((d[i].score, true)),
                    MatchKind::Fp => scored.push((d[i].score, false)),
                    MatchKind::Ignored => {}
                }
            }
        }

        let tp = scored.iter().filter(|s| s.1).count();
        let fp = scored.len() - tp;
        all_tp += tp;
        all_fp += fp;
        all_gt += n_gt;
        if n_gt == 0 {
            continue;
        }
        let curve = PrCurve::from_scored(&scored, n_gt);
        let precision = if scored.is_empty() {
            0.0
        } else {
            tp as f64 / scored.len() as f64
        };
        let recall = tp as f64 / n_gt as f64;
        reports.push(ClassReport {
            class_id: class,
            name: None,
            n_gt,
            tp,
            fp,
            ap07: ap_voc07(&curve),
            ap12: ap_voc12(&curve),
            precision,
            recall,
            f_measure: f_measure(precision, recall),
        });
    }

    let mean = |f: fn(&ClassReport) -> f64| {
        if reports.is_empty() {
            0.0
        } else {
            reports.iter().map(f).sum::<f64>() / reports.len() as f64
        }
    };
    let map07 = mean(|c| c.ap07);
    let map12 = mean(|c| c.ap12);
    let precision = if all_tp + all_fp == 0 {
        0.0
    } else {
        all_tp as f64 / (all_tp + all_fp) as f64
    };
    let recall = if all_gt == 0 {
        0.0
    } else {
        all_tp as f64 / all_gt as f64
    };

    Ok(EvalReport {
        metric,
        iou_thr,
        classes: reports,
        map07,
        map12,
        map: match metric {
            ApMetric::Voc07 => map07,
            ApMetric::Voc12 => map12,
        },
        precision,
        recall,
        f_measure: f_measure(precision, recall),
    })
}
