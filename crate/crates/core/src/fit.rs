//! Toy regression: gradient descent on the seven box parameters with
//! numeric gradients, used to compare how well each box loss drives a
//! prediction onto its target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotated_iou, OrientedRect};
use crate::loss::{box_loss, numeric_gradient, smooth_l1, BoxLossKind, BoxPair, REiouOptions};
use crate::repr::{encode_arp, ArpBox, Footprint};

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// The bounding box and the area ratios are stepped separately. The IoU term
/// has a kink where the two boxes coincide, and a joint line search would
/// shrink the ratio step along with the box step once the box has converged.
const BLOCKS: [std::ops::Range<usize>; 2] = [0..4, 4..7];

/// One backtracking step on the coordinates in `block`; `None` when no trial
/// step decreases the objective enough.
fn line_search<F: Fn(&[f64; 7]) -> f64>(
    objective: &F,
    z: &[f64; 7],
    f: f64,
    block: std::ops::Range<usize>,
    cfg: &FitConfig,
) -> Option<([f64; 7], f64)> {
    let g = numeric_gradient(objective, z, cfg.fd_step).ok()?;
    let g2: f64 = g[block.clone()].iter().map(|v| v * v).sum();
    if g2 == 0.0 {
        return None;
    }
    let mut t = cfg.lr;
    for _ in 0..MAX_HALVINGS {
        let mut cand = *z;
        for i in block.clone() {
            cand[i] -= t * g[i];
        }
        let fc = objective(&cand);
        if fc <= f - ARMIJO_C * t * g2 {
            return Some((cand, fc));
        }
        t *= 0.5;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    /// Initial trial step of each backtracking line search.
    pub lr: f64,
    pub fd_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.05,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    /// Objective before the first step and after each step.
    pub losses: Vec<f64>,
    /// Rotated IoU with the target at the same points as `losses`.
    pub ious: Vec<f64>,
    pub final_box: ArpBox,
    /// Rotated IoU between the final footprint and the target footprint.
    pub final_iou: f64,
}

/// Objective minimized by [`fit_box`]. The R-EIoU box loss does not involve
/// `lambda1`, so a smooth-L1 term on it is added to pin down the decoded
/// shape. Invalid parameter vectors evaluate to `+inf`.
pub fn fit_objective(
    pred: &ArpBox,
    target: &ArpBox,
    kind: BoxLossKind,
    opts: &REiouOptions,
) -> f64 {
    let pair = BoxPair::new(*pred, *target);
    match box_loss(&pair, kind, opts) {
        Ok(l) => match kind {
            BoxLossKind::SmoothL1 => l.total,
            BoxLossKind::REiou => l.total + smooth_l1(pred.lambda1 - target.lambda1),
        },
        Err(_) => f64::INFINITY,
    }
}

/// Positions and sizes are optimized divided by the initial box's longer
/// side. `lambda2` and `lambda3` enter through the logarithms of
/// `lambda2 * w` and `lambda3 * h` (the scaled parallelogram sides), which
/// keeps every coordinate of order one and decouples the side lengths from
/// the box size.
pub fn fit_box(
    init: &ArpBox,
    target: &ArpBox,
    kind: BoxLossKind,
    opts: &REiouOptions,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    init.validate()?;
    target.validate()?;
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lr must be >= 0, got {}",
            cfg.lr
        )));
    }
    let scale = init.w.max(init.h);
    let to_box = |z: &[f64; 7]| {
        let mut p = *z;
        for v in &mut p[..4] {
            *v *= scale;
        }
        p[5] = (z[5].exp() / z[2]).max(0.0);
        p[6] = (z[6].exp() / z[3]).max(0.0);
        ArpBox {
            x: p[0],
            y: p[1],
            w: p[2],
            h: p[3],
            lambda1: p[4],
            lambda2: p[5],
            lambda3: p[6],
        }
    };
    let objective = |z: &[f64; 7]| fit_objective(&to_box(z), target, kind, opts);

    let mut z = init.params();
    for v in &mut z[..4] {
        *v /= scale;
    }
    z[5] = (z[5] * z[2]).ln();
    z[6] = (z[6] * z[3]).ln();
    let target_fp = Footprint::of(target, opts.lambda_thr);
    let iou_at = |z: &[f64; 7]| {
        rotated_iou(&Footprint::of(&to_box(z), opts.lambda_thr), &target_fp).unwrap_or(0.0)
    };

    let mut f = objective(&z);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut ious = Vec::with_capacity(cfg.steps + 1);
    losses.push(f);
    ious.push(iou_at(&z));

    for _ in 0..cfg.steps {
        if cfg.lr > 0.0 {
            for block in BLOCKS {
                if let Some((zn, fn_)) = line_search(&objective, &z, f, block, cfg) {
                    z = zn;
                    f = fn_;
                }
            }
        }
        losses.push(f);
        ious.push(iou_at(&z));
    }

    Ok(FitOutcome {
        losses,
        final_iou: *ious.last().expect("at least the initial point"),
        ious,
        final_box: to_box(&z),
    })
}

/// Upper bound on the obliquity of generated rectangles, keeping them well
/// clear of the horizontal route.
pub const MAX_RANDOM_LAMBDA1: f64 = 0.9;

fn random_oblique_rect<R: Rng>(rng: &mut R, cx: f64, cy: f64, w: f64, h: f64) -> OrientedRect {
    loop {
        let theta = rng.random_range(-std::f64::consts::FRAC_PI_2..0.0);
        let r = OrientedRect::new(cx, cy, w, h, theta).expect("positive sizes");
        if let Ok(a) = encode_arp(&r) {
            if a.lambda1 <= MAX_RANDOM_LAMBDA1 {
                return r;
            }
        }
    }
}

/// A random target rectangle and a perturbed initial guess, both oblique.
pub fn random_pair<R: Rng>(rng: &mut R) -> (OrientedRect, OrientedRect) {
    let cx = rng.random_range(100.0..400.0);
    let cy = rng.random_range(100.0..400.0);
    let w = rng.random_range(20.0..150.0);
    let h = rng.random_range(20.0..150.0);
    let target = random_oblique_rect(rng, cx, cy, w, h);
    let init = perturbed(rng, &target);
    (target, init)
}

/// Initial guess near `target`: centre moved by up to 20% of the longer
/// side, each side scaled by 0.8 to 1.25 and the angle turned by up to 15
/// degrees, redrawn until the guess is oblique.
pub fn perturbed<R: Rng>(rng: &mut R, target: &OrientedRect) -> OrientedRect {
    let size = target.w().max(target.h());
    loop {
        let cx = target.cx() + rng.random_range(-0.2..0.2) * size;
        let cy = target.cy() + rng.random_range(-0.2..0.2) * size;
        let w = target.w() * rng.random_range(0.8..1.25);
        let h = target.h() * rng.random_range(0.8..1.25);
        let theta = target.theta() + rng.random_range(-15f64..15.0).to_radians();
        let init = OrientedRect::new(cx, cy, w, h, theta).expect("positive sizes");
        if let Ok(a) = encode_arp(&init) {
            if a.lambda1 <= MAX_RANDOM_LAMBDA1 {
                return init;
            }
        }
    }
}

/// `n` reproducible (target, init) pairs, already encoded.
pub fn random_pairs(n: usize, seed: u64) -> Vec<(ArpBox, ArpBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (t, i) = random_pair(&mut rng);
            (
                encode_arp(&t).expect("oblique by construction"),
                encode_arp(&i).expect("oblique by construction"),
            )
        })
        .collect()
}
