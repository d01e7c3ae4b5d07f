//! Composite grounding loss: classification plus box localization.
//!
//! Classification is mean binary cross-entropy over all cells with
//! probabilities clamped to `[ε, 1-ε]`, optionally focal-modulated.
//! Localization compares matched predicted and ground-truth boxes after
//! normalizing `(x, y, w, h)` by the image size. Every loss also returns its
//! analytic gradient: with respect to the classification input (logits or
//! probabilities), and with respect to predicted box coordinates in pixels.

use serde::{Deserialize, Serialize};

use crate::error::GroundingError;
use crate::geometry::BBox;

use super::matrix::Matrix;
use super::scores::sigmoid;

pub const DEFAULT_EPS: f64 = 1e-7;
pub const DEFAULT_SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocLoss {
    SmoothL1 { beta: f64 },
    L1,
    Giou,
}

impl Default for LocLoss {
    fn default() -> Self {
        LocLoss::SmoothL1 {
            beta: DEFAULT_SMOOTH_L1_BETA,
        }
    }
}

impl std::str::FromStr for LocLoss {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smooth-l1" => Ok(LocLoss::default()),
            "l1" => Ok(LocLoss::L1),
            "giou" => Ok(LocLoss::Giou),
            _ => Err(format!("unknown localization loss {s:?} (expected smooth-l1, l1 or giou)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub eps: f64,
    /// Focal exponent; `None` is plain cross-entropy.
    pub focal_gamma: Option<f64>,
    pub loc: LocLoss,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            eps: DEFAULT_EPS,
            focal_gamma: None,
            loc: LocLoss::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ClsInput<'a> {
    Logits(&'a Matrix),
    Probabilities(&'a Matrix),
}

impl ClsInput<'_> {
    fn matrix(&self) -> &Matrix {
        match self {
            ClsInput::Logits(m) | ClsInput::Probabilities(m) => m,
        }
    }
}

/// Per-cell loss and its derivative with respect to `p`.
fn cell(p: f64, t: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    if gamma == 0.0 {
        let l = -(t * p.ln() + (1.0 - t) * q.ln());
        return (l, -t / p + (1.0 - t) / q);
    }
    let (lp, lq) = (p.ln(), q.ln());
    let l = -(t * q.powf(gamma) * lp + (1.0 - t) * p.powf(gamma) * lq);
    let d_pos = -gamma * q.powf(gamma - 1.0) * lp + q.powf(gamma) / p;
    let d_neg = gamma * p.powf(gamma - 1.0) * lq - p.powf(gamma) / q;
    (l, -(t * d_pos + (1.0 - t) * d_neg))
}

/// Mean classification loss and its gradient with respect to the input.
pub fn classification_loss(
    input: ClsInput<'_>,
    targets: &Matrix,
    opts: &LossOptions,
) -> Result<(f64, Matrix), GroundingError> {
    let x = input.matrix();
    if x.shape() != targets.shape() {
        return Err(GroundingError::ShapeMismatch(format!(
            "classification input is {:?}, targets are {:?}",
            x.shape(),
            targets.shape()
        )));
    }
    let n = x.data().len();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let gamma = opts.focal_gamma.unwrap_or(0.0);
    let (lo, hi) = (opts.eps, 1.0 - opts.eps);
    let mut total = 0.0;
    for (idx, (&v, &t)) in x.data().iter().zip(targets.data()).enumerate() {
        let raw = match input {
            ClsInput::Logits(_) => sigmoid(v),
            ClsInput::Probabilities(_) => v,
        };
        let p = raw.clamp(lo, hi);
        let (l, dl_dp) = cell(p, t, gamma);
        total += l;
        let g = if raw < lo || raw > hi {
            0.0
        } else {
            match input {
                ClsInput::Logits(_) => dl_dp * raw * (1.0 - raw),
                ClsInput::Probabilities(_) => dl_dp,
            }
        };
        grad.set(idx / x.cols(), idx % x.cols(), g / n as f64);
    }
    Ok((total / n as f64, grad))
}

fn check_matching(pred: usize, gt: usize, matching: &[(usize, usize)]) -> Result<(), GroundingError> {
    let mut used_p = vec![false; pred];
    let mut used_g = vec![false; gt];
    for &(p, g) in matching {
        if p >= pred || g >= gt {
            return Err(GroundingError::UnmatchedBoxes(format!(
                "pair ({p}, {g}) out of range for {pred} predictions and {gt} ground truths"
            )));
        }
        if std::mem::replace(&mut used_p[p], true) || std::mem::replace(&mut used_g[g], true) {
            return Err(GroundingError::UnmatchedBoxes(format!("pair ({p}, {g}) reuses a box")));
        }
    }
    Ok(())
}

/// `1 - GIoU` and its gradient with respect to `a` as `[x, y, w, h]`.
fn giou_loss(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let (ax1, ay1, ax2, ay2) = (a.x, a.y, a.x + a.w, a.y + a.h);
    let (bx1, by1, bx2, by2) = (b.x, b.y, b.x + b.w, b.y + b.h);
    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    let (iw, ih, overlap) = if iw > 0.0 && ih > 0.0 { (iw, ih, true) } else { (0.0, 0.0, false) };
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let c = cw * ch;
    if union <= 0.0 || c <= 0.0 {
        return (1.0, [0.0; 4]);
    }
    let loss = 2.0 - inter / union - union / c;

    // derivatives with respect to ax1, ay1, ax2, ay2
    let di = if overlap {
        [
            if ax1 > bx1 { -ih } else { 0.0 },
            if ay1 > by1 { -iw } else { 0.0 },
            if ax2 < bx2 { ih } else { 0.0 },
            if ay2 < by2 { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let da = [-a.h, -a.w, a.h, a.w];
    let dc = [
        if ax1 < bx1 { -ch } else { 0.0 },
        if ay1 < by1 { -cw } else { 0.0 },
        if ax2 > bx2 { ch } else { 0.0 },
        if ay2 > by2 { cw } else { 0.0 },
    ];
    let mut g = [0.0; 4];
    for k in 0..4 {
        let du = da[k] - di[k];
        g[k] = -(di[k] * union - inter * du) / (union * union) - (du * c - union * dc[k]) / (c * c);
    }
    // x moves both x1 and x2; w moves x2 only
    (loss, [g[0] + g[2], g[1] + g[3], g[2], g[3]])
}

/// Mean localization loss over matched pairs and its gradient with respect
/// to every predicted box (zero for unmatched predictions).
pub fn localization_loss(
    pred: &[BBox],
    gt: &[BBox],
    matching: &[(usize, usize)],
    image_size: (u32, u32),
    loss: LocLoss,
) -> Result<(f64, Vec<[f64; 4]>), GroundingError> {
    check_matching(pred.len(), gt.len(), matching)?;
    let mut grad = vec![[0.0; 4]; pred.len()];
    if matching.is_empty() {
        return Ok((0.0, grad));
    }
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    if w <= 0.0 || h <= 0.0 {
        return Err(GroundingError::ShapeMismatch("image size must be positive".into()));
    }
    let scale = [w, h, w, h];
    let mut total = 0.0;
    match loss {
        LocLoss::Giou => {
            let k = matching.len() as f64;
            for &(p, g) in matching {
                let (l, d) = giou_loss(&pred[p], &gt[g]);
                total += l;
                grad[p] = d.map(|v| v / k);
            }
            Ok((total / k, grad))
        }
        LocLoss::SmoothL1 { .. } | LocLoss::L1 => {
            let n = 4.0 * matching.len() as f64;
            for &(p, g) in matching {
                let (a, b) = (pred[p].to_array(), gt[g].to_array());
                for c in 0..4 {
                    let r = (a[c] - b[c]) / scale[c];
                    let (l, d) = match loss {
                        LocLoss::SmoothL1 { beta } if r.abs() < beta => (0.5 * r * r / beta, r / beta),
                        LocLoss::SmoothL1 { beta } => (r.abs() - 0.5 * beta, r.signum()),
                        _ => (r.abs(), if r == 0.0 { 0.0 } else { r.signum() }),
                    };
                    total += l;
                    grad[p][c] = d / scale[c] / n;
                }
            }
            Ok((total / n, grad))
        }
    }
}

/// Phrase-level targets, their token-level expansion, gt boxes, and the
/// optional baseline classifier weights (c×d).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrices {
    pub t: Matrix,
    pub t_expanded: Matrix,
    pub gt_boxes: Vec<BBox>,
    pub w_head: Option<Matrix>,
}

/// Which logits the classification term sees.
#[derive(Debug, Clone, Copy)]
pub enum ClassificationPath<'a> {
    /// N×M alignment logits or scores against `t_expanded`.
    Grounding(ClsInput<'a>),
    /// `F · W_headᵀ` (N×c) against `t`.
    Baseline { features: &'a Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub loc: f64,
    pub total: f64,
    pub cls_grad: Matrix,
    pub box_grad: Vec<[f64; 4]>,
}

pub fn grounding_loss(
    path: ClassificationPath<'_>,
    targets: &TargetMatrices,
    pred_boxes: &[BBox],
    matching: &[(usize, usize)],
    image_size: (u32, u32),
    opts: &LossOptions,
) -> Result<LossBreakdown, GroundingError> {
    let (cls, cls_grad) = match path {
        ClassificationPath::Grounding(input) => classification_loss(input, &targets.t_expanded, opts)?,
        ClassificationPath::Baseline { features } => {
            let w = targets
                .w_head
                .as_ref()
                .ok_or_else(|| GroundingError::ShapeMismatch("baseline path needs W_head".into()))?;
            let logits = features.mul_transpose(w)?;
            classification_loss(ClsInput::Logits(&logits), &targets.t, opts)?
        }
    };
    let (loc, box_grad) = localization_loss(pred_boxes, &targets.gt_boxes, matching, image_size, opts.loc)?;
    Ok(LossBreakdown {
        cls,
        loc,
        total: cls + loc,
        cls_grad,
        box_grad,
    })
}
