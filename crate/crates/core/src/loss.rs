//! Box regression and multi-task losses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotated_iou, HBox};
use crate::repr::{ArpBox, Footprint, DEFAULT_LAMBDA_THR, EPS_DEN};

/// Stabilizer in the CIoU trade-off coefficient.
pub const CIOU_EPS: f64 = 1e-9;

/// Probability clamp for the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPair {
    pub pred: ArpBox,
    pub target: ArpBox,
}

impl BoxPair {
    pub fn new(pred: ArpBox, target: ArpBox) -> Self {
        Self { pred, target }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_box: f64,
    pub lambda_obj: f64,
    pub lambda_cls: f64,
    pub lambda_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_box: 0.05,
            lambda_obj: 0.7,
            lambda_cls: 0.3,
            lambda_alpha: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.lambda_box,
            self.lambda_obj,
            self.lambda_cls,
            self.lambda_alpha,
        ];
        if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossTerm {
    pub name: &'static str,
    pub value: f64,
}

/// A loss value together with the terms it was summed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

impl LossBreakdown {
    /// Sums `terms` left to right.
    pub fn from_terms(terms: Vec<(&'static str, f64)>) -> Self {
        let total = terms.iter().map(|t| t.1).sum();
        Self {
            total,
            terms: terms
                .into_iter()
                .map(|(name, value)| LossTerm { name, value })
                .collect(),
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Complete-IoU loss between two axis-aligned boxes.
pub fn ciou_loss(a: &HBox, b: &HBox) -> f64 {
    let iou = a.iou(b);
    let enc = a.enclosing(b);
    let c2 = (enc.w * enc.w + enc.h * enc.h).max(EPS_DEN);
    let rho2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    let v = 4.0 / (PI * PI) * ((b.w / b.h).atan() - (a.w / a.h).atan()).powi(2);
    let alpha = v / ((1.0 - iou) + v + CIOU_EPS);
    1.0 - iou + rho2 / c2 + alpha * v
}

fn check_pair(pair: &BoxPair) -> Result<()> {
    pair.pred.validate()?;
    pair.target.validate()
}

/// CIoU on the bounding boxes plus smooth-L1 on each area ratio.
pub fn box_loss_smooth(pair: &BoxPair) -> Result<LossBreakdown> {
    check_pair(pair)?;
    let (p, t) = (&pair.pred, &pair.target);
    Ok(LossBreakdown::from_terms(vec![
        ("ciou", ciou_loss(&p.hbox(), &t.hbox())),
        ("lambda1", smooth_l1(p.lambda1 - t.lambda1)),
        ("lambda2", smooth_l1(p.lambda2 - t.lambda2)),
        ("lambda3", smooth_l1(p.lambda3 - t.lambda3)),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    /// IoU of the two bounding boxes.
    #[default]
    Horizontal,
    /// IoU of the decoded footprints.
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct REiouOptions {
    pub iou: IouKind,
    /// Boxes with `lambda1 >= lambda_thr` use their bounding box as both
    /// parallelograms.
    pub lambda_thr: f64,
}

impl Default for REiouOptions {
    fn default() -> Self {
        Self {
            iou: IouKind::Horizontal,
            lambda_thr: DEFAULT_LAMBDA_THR,
        }
    }
}

/// Length of the smallest interval covering two centred intervals.
fn enclosing_span(c0: f64, len0: f64, c1: f64, len1: f64) -> f64 {
    (c0 + 0.5 * len0).max(c1 + 0.5 * len1) - (c0 - 0.5 * len0).min(c1 - 0.5 * len1)
}

/// R-EIoU: `1 - IoU`, centre distance over the enclosing diagonal, and the
/// parallelogram width/height gaps over their enclosing extents.
pub fn r_eiou_loss(pair: &BoxPair, opts: &REiouOptions) -> Result<LossBreakdown> {
    check_pair(pair)?;
    let (p, t) = (&pair.pred, &pair.target);
    let (pb, tb) = (p.hbox(), t.hbox());

    let iou = match opts.iou {
        IouKind::Horizontal => pb.iou(&tb),
        IouKind::Rotated => rotated_iou(
            &Footprint::of(p, opts.lambda_thr),
            &Footprint::of(t, opts.lambda_thr),
        )?,
    };

    let enc = pb.enclosing(&tb);
    let c2 = enc.w * enc.w + enc.h * enc.h;
    let rho2 = (p.x - t.x).powi(2) + (p.y - t.y).powi(2);

    let (wa, hb) = p.parallelogram_dims(opts.lambda_thr);
    let (wa_t, hb_t) = t.parallelogram_dims(opts.lambda_thr);
    let c_wa = enclosing_span(p.x, wa, t.x, wa_t);
    let c_hb = enclosing_span(p.y, hb, t.y, hb_t);
    let area_ratio = (wa - wa_t).powi(2) / (c_wa * c_wa).max(EPS_DEN)
        + (hb - hb_t).powi(2) / (c_hb * c_hb).max(EPS_DEN);

    Ok(LossBreakdown::from_terms(vec![
        ("iou", 1.0 - iou),
        ("distance", rho2 / c2.max(EPS_DEN)),
        ("area_ratio", area_ratio),
    ]))
}

/// Binary cross-entropy of the obliquity label (`true` for oblique).
pub fn bce_obliquity(alpha: bool, p: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if alpha {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxLossKind {
    #[serde(rename = "smooth")]
    SmoothL1,
    #[default]
    #[serde(rename = "reiou")]
    REiou,
}

impl std::str::FromStr for BoxLossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" | "smooth-l1" | "smoothl1" => Ok(Self::SmoothL1),
            "reiou" | "r-eiou" => Ok(Self::REiou),
            _ => Err(Error::InvalidArgument(format!("unknown box loss `{s}`"))),
        }
    }
}

pub fn box_loss(pair: &BoxPair, kind: BoxLossKind, opts: &REiouOptions) -> Result<LossBreakdown> {
    match kind {
        BoxLossKind::SmoothL1 => box_loss_smooth(pair),
        BoxLossKind::REiou => r_eiou_loss(pair, opts),
    }
}

/// Per-sample objectness, class or obliquity loss: either a precomputed
/// scalar (e.g. from a focal loss) or a label/probability pair scored by BCE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TermInput {
    Value(f64),
    Bce { label: u8, p: f64 },
}

impl TermInput {
    pub fn loss(&self) -> Result<f64> {
        match *self {
            TermInput::Value(v) if v.is_finite() => Ok(v),
            TermInput::Value(v) => Err(Error::NonFinite(format!("term value {v}"))),
            TermInput::Bce { label, p } => match label {
                0 | 1 if p.is_finite() => Ok(bce_obliquity(label == 1, p)),
                0 | 1 => Err(Error::NonFinite(format!("probability {p}"))),
                _ => Err(Error::InvalidArgument(format!(
                    "label must be 0 or 1, got {label}"
                ))),
            },
        }
    }
}

/// One anchor slot of the detection grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Whether this slot is responsible for an object.
    pub mask: bool,
    pub pair: BoxPair,
    pub objectness: TermInput,
    #[serde(default)]
    pub classes: Vec<TermInput>,
    pub obliquity: TermInput,
}

/// Weighted sum of box, objectness, class and obliquity losses over the
/// responsible samples. Samples are accumulated in index order.
pub fn multitask_loss(
    samples: &[Sample],
    weights: &LossWeights,
    kind: BoxLossKind,
    opts: &REiouOptions,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let (mut l_box, mut l_obj, mut l_cls, mut l_alpha) = (0.0, 0.0, 0.0, 0.0);
    for s in samples.iter().filter(|s| s.mask) {
        l_box += box_loss(&s.pair, kind, opts)?.total;
        l_obj += s.objectness.loss()?;
        for c in &s.classes {
            l_cls += c.loss()?;
        }
        l_alpha += s.obliquity.loss()?;
    }
    Ok(LossBreakdown::from_terms(vec![
        ("box", weights.lambda_box * l_box),
        ("obj", weights.lambda_obj * l_obj),
        ("cls", weights.lambda_cls * l_cls),
        ("alpha", weights.lambda_alpha * l_alpha),
    ]))
}

/// Central-difference gradient. Each coordinate's step is `step` scaled by
/// `max(|x_i|, 1)`.
pub fn numeric_gradient<const N: usize, F>(f: F, at: &[f64; N], step: f64) -> Result<[f64; N]>
where
    F: Fn(&[f64; N]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut grad = [0.0; N];
    let mut x = *at;
    for i in 0..N {
        let h = step * at[i].abs().max(1.0);
        x[i] = at[i] + h;
        let fp = f(&x);
        x[i] = at[i] - h;
        let fm = f(&x);
        x[i] = at[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::OrientedRect;
    use crate::repr::encode_arp;

    fn arp(p: [f64; 7]) -> ArpBox {
        ArpBox::from_params(p).unwrap()
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn ciou_examples() {
        let a = HBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let b = HBox::new(1.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(ciou_loss(&a, &a), 0.0);
        // 1 - 1/3 + 0.25 / (1.5^2 + 1^2), aspect term zero.
        let want = 1.0 - 1.0 / 3.0 + 0.25 / 3.25;
        assert!((ciou_loss(&a, &b) - want).abs() < 1e-12);
        let far = HBox::new(50.0, 50.0, 2.0, 1.0).unwrap();
        assert!(ciou_loss(&a, &far) > 1.0);
    }

    #[test]
    fn smooth_box_loss_examples() {
        let t = arp([10.0, 10.0, 8.0, 4.0, 0.5, 0.9, 1.2]);
        assert_eq!(box_loss_smooth(&BoxPair::new(t, t)).unwrap().total, 0.0);
        let mut p = t;
        p.lambda2 += 0.5;
        let l = box_loss_smooth(&BoxPair::new(p, t)).unwrap();
        assert!((l.total - 0.125).abs() < 1e-15);
    }

    #[test]
    fn reiou_examples() {
        let o = REiouOptions::default();
        let t = encode_arp(&OrientedRect::new(50.0, 40.0, 30.0, 10.0, -0.6).unwrap()).unwrap();
        let l = r_eiou_loss(&BoxPair::new(t, t), &o).unwrap();
        assert_eq!(l.total, 0.0);

        let mut p = t;
        p.lambda2 *= 1.3;
        p.lambda3 *= 0.8;
        let l = r_eiou_loss(&BoxPair::new(p, t), &o).unwrap();
        assert_eq!(l.term("iou"), Some(0.0));
        assert_eq!(l.term("distance"), Some(0.0));
        assert!(l.term("area_ratio").unwrap() > 0.0);
        assert_eq!(l.total, l.term("area_ratio").unwrap());

        let rot = REiouOptions {
            iou: IouKind::Rotated,
            ..o
        };
        assert!(r_eiou_loss(&BoxPair::new(t, t), &rot).unwrap().total.abs() < 1e-12);
    }

    #[test]
    fn reiou_rejects_degenerate() {
        let t = arp([0.0, 0.0, 2.0, 2.0, 0.5, 1.0, 1.0]);
        let mut p = t;
        p.w = 0.0;
        assert!(r_eiou_loss(&BoxPair::new(p, t), &REiouOptions::default()).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!(bce_obliquity(true, 0.999_999) < 1e-5);
        assert!((bce_obliquity(false, 0.5) - 2f64.ln()).abs() < 1e-12);
        assert!((bce_obliquity(true, 0.1) - 10f64.ln()).abs() < 1e-12);
        assert!(bce_obliquity(true, 0.0).is_finite());
    }

    fn sample(mask: bool, pair: BoxPair, v: f64) -> Sample {
        Sample {
            mask,
            pair,
            objectness: TermInput::Value(v),
            classes: vec![TermInput::Value(v)],
            obliquity: TermInput::Value(v),
        }
    }

    #[test]
    fn multitask_examples() {
        let t = arp([10.0, 10.0, 8.0, 4.0, 0.5, 0.9, 1.2]);
        let o = REiouOptions::default();
        let masked = vec![sample(false, BoxPair::new(t, t), 3.0); 4];
        let l = multitask_loss(&masked, &LossWeights::default(), BoxLossKind::REiou, &o).unwrap();
        assert_eq!(l.total, 0.0);

        // smooth-L1(1.5) = 1 makes the box loss exactly one.
        let mut p = t;
        p.lambda2 += 1.5;
        let unit = LossWeights {
            lambda_box: 1.0,
            lambda_obj: 1.0,
            lambda_cls: 1.0,
            lambda_alpha: 1.0,
        };
        let one = vec![sample(true, BoxPair::new(p, t), 1.0)];
        let l = multitask_loss(&one, &unit, BoxLossKind::SmoothL1, &o).unwrap();
        assert!((l.total - 4.0).abs() < 1e-15);

        assert_eq!(
            multitask_loss(&[], &unit, BoxLossKind::REiou, &o)
                .unwrap()
                .total,
            0.0
        );
    }

    #[test]
    fn multitask_with_default_weights() {
        let t = arp([10.0, 10.0, 8.0, 4.0, 0.5, 0.9, 1.2]);
        let mut p = t;
        p.lambda1 += 0.2;
        let s0 = Sample {
            mask: true,
            pair: BoxPair::new(p, t),
            objectness: TermInput::Bce { label: 1, p: 0.8 },
            classes: vec![
                TermInput::Bce { label: 1, p: 0.6 },
                TermInput::Bce { label: 0, p: 0.3 },
            ],
            obliquity: TermInput::Bce { label: 1, p: 0.9 },
        };
        let s1 = Sample {
            mask: true,
            pair: BoxPair::new(t, t),
            objectness: TermInput::Value(0.25),
            classes: vec![TermInput::Value(0.5)],
            obliquity: TermInput::Bce { label: 0, p: 0.2 },
        };
        let l = multitask_loss(
            &[s0, s1],
            &LossWeights::default(),
            BoxLossKind::SmoothL1,
            &REiouOptions::default(),
        )
        .unwrap();
        // Hand arithmetic: box = 0.5 * 0.2^2; the rest are -ln terms.
        let want_box = 0.05 * 0.02;
        let want_obj = 0.7 * (-(0.8f64).ln() + 0.25);
        let want_cls = 0.3 * (-(0.6f64).ln() - (0.7f64).ln() + 0.5);
        let want_alpha = 0.8 * (-(0.9f64).ln() - (0.8f64).ln());
        assert!((l.term("box").unwrap() - want_box).abs() < 1e-15);
        assert!((l.term("obj").unwrap() - want_obj).abs() < 1e-15);
        assert!((l.term("cls").unwrap() - want_cls).abs() < 1e-15);
        assert!((l.term("alpha").unwrap() - want_alpha).abs() < 1e-15);
        assert!((l.total - (want_box + want_obj + want_cls + want_alpha)).abs() < 1e-12);
    }

    #[test]
    fn bad_label_is_rejected() {
        assert!(TermInput::Bce { label: 2, p: 0.5 }.loss().is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = numeric_gradient(|_: &[f64; 7]| 3.0, &[1.0; 7], 1e-5).unwrap();
        assert_eq!(g, [0.0; 7]);
        let at = [0.0, 0.0, 1.0, 1.0, 0.3, 0.5, 0.7];
        let g = numeric_gradient(|x: &[f64; 7]| x[5] * x[5], &at, 1e-5).unwrap();
        assert!((g[5] - 1.0).abs() < 1e-8);
        assert!(g.iter().enumerate().all(|(i, v)| i == 5 || *v == 0.0));
        assert!(numeric_gradient(|x: &[f64; 1]| x[0].ln(), &[0.0], 1e-3).is_err());
    }
}
