//! Box AP / AP50 against an exported ground-truth document.
//!
//! AP is the COCO-style mean over IoU thresholds 0.50:0.05:0.95 of 101-point
//! interpolated AP; AP50 is the value at IoU 0.50. Each (modality, category)
//! cell is computed over the images of that modality; a modality's score is
//! the unweighted mean over its categories that have ground truth, and the
//! pooled score is the same mean over categories across all images.
//! Categories without ground truth in scope are skipped.
//!
//! # Prediction document
//!
//! A JSON array of detections:
//!
//! ```json
//! [{"id": 1, "image_id": 3, "category_id": 7, "bbox": [x, y, w, h], "score": 0.92}]
//! ```
//!
//! `id` is optional; `confidence` is accepted in place of `score`. When any
//! record lacks an id, all records are numbered from 1 after sorting by
//! (image, category, descending score, bbox).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::export::CocoDocument;
use crate::geometry::{iou, BBox};

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    #[serde(rename = "score", alias = "confidence")]
    pub confidence: f64,
}

/// Ground-truth box as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub id: u64,
    pub bbox: BBox,
}

/// A detection prepared for matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub id: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

fn by_confidence(a: &ScoredBox, b: &ScoredBox) -> std::cmp::Ordering {
    b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id))
}

/// Greedy one-to-one matching for one image and category. Returns TP flags
/// in the order of `dets` after sorting by descending confidence, then id.
pub fn match_detections(dets: &[ScoredBox], gts: &[GtBox], threshold: f64) -> Vec<(ScoredBox, bool)> {
    let mut order = dets.to_vec();
    order.sort_by(by_confidence);
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(f64, u64, usize)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&d.bbox, &gt.bbox);
                if v < threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bv, bid, _)) => v > bv || (v == bv && gt.id < bid),
                };
                if better {
                    best = Some((v, gt.id, g));
                }
            }
            if let Some((_, _, g)) = best {
                taken[g] = true;
            }
            (d, best.is_some())
        })
        .collect()
}

/// Interpolated precision sampled at recall 0.00, 0.01, …, 1.00.
pub fn interpolated_precision(labels: &[bool], n_gt: usize) -> Vec<f64> {
    let mut out = vec![0.0; RECALL_POINTS];
    if n_gt == 0 {
        return out;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(labels.len());
    for (i, &hit) in labels.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, tp as f64 / (i + 1) as f64));
    }
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut k = 0;
    for (j, slot) in out.iter_mut().enumerate() {
        while k < points.len() && points[k].0 * 100 < j * n_gt {
            k += 1;
        }
        if k == points.len() {
            break;
        }
        *slot = points[k].1;
    }
    out
}

/// 101-point interpolated AP of TP/FP labels in confidence order.
pub fn average_precision(labels: &[bool], n_gt: usize) -> f64 {
    interpolated_precision(labels, n_gt).iter().sum::<f64>() / RECALL_POINTS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category_id: u64,
    pub category: String,
    pub ap: f64,
    pub ap50: f64,
    /// AP at each threshold of `IOU_THRESHOLDS`.
    pub ap_per_threshold: Vec<f64>,
    pub gt_count: usize,
    pub det_count: usize,
    /// Counts at IoU 0.50.
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Interpolated precision at recall 0.00..=1.00 for IoU 0.50.
    pub pr_curve50: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub name: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap_per_threshold: Vec<f64>,
    pub categories: Vec<CategoryResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub iou_thresholds: Vec<f64>,
    pub modalities: Vec<GroupResult>,
    pub pooled: GroupResult,
}

impl EvalResult {
    pub fn modality(&self, name: &str) -> Option<&GroupResult> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

pub fn read_predictions(path: &Path) -> crate::Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| EvalError::InvalidDetection(e.to_string()).into())
}

pub fn write_predictions(path: &Path, dets: &[Detection]) -> crate::Result<()> {
    let mut s = serde_json::to_string_pretty(dets).expect("detections serialize");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| crate::Error::io(path, e))
}

/// Validate predictions against the ground-truth id spaces and give every
/// record an id.
fn prepare(preds: &[Detection], gt: &CocoDocument) -> Result<Vec<Detection>, EvalError> {
    let images: HashSet<u64> = gt.images.iter().map(|i| i.id).collect();
    let cats: HashSet<u64> = gt.categories.iter().map(|c| c.id).collect();
    let missing: BTreeSet<u64> = preds
        .iter()
        .map(|d| d.image_id)
        .filter(|id| !images.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::IdSpaceMismatch(missing.into_iter().collect()));
    }
    for d in preds {
        if !cats.contains(&d.category_id) {
            return Err(EvalError::UnknownCategory(d.category_id));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(EvalError::InvalidDetection(format!(
                "confidence {} outside [0, 1]",
                d.confidence
            )));
        }
        if !d.bbox.is_valid() {
            return Err(EvalError::InvalidDetection(format!("invalid box {:?}", d.bbox.to_array())));
        }
    }
    let mut out = preds.to_vec();
    if out.iter().any(|d| d.id.is_none()) {
        out.sort_by(|a, b| {
            (a.image_id, a.category_id)
                .cmp(&(b.image_id, b.category_id))
                .then(b.confidence.total_cmp(&a.confidence))
                .then_with(|| {
                    let (x, y) = (a.bbox.to_array(), b.bbox.to_array());
                    x.iter().zip(&y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        for (i, d) in out.iter_mut().enumerate() {
            d.id = Some(i as u64 + 1);
        }
    } else {
        let mut seen = HashSet::new();
        if let Some(d) = out.iter().find(|d| !seen.insert(d.id)) {
            return Err(EvalError::InvalidDetection(format!("duplicate detection id {}", d.id.unwrap())));
        }
    }
    Ok(out)
}

type Cell = (Vec<GtBox>, Vec<ScoredBox>);

/// Per-image gt and detections for one category.
fn cell_result(category_id: u64, category: &str, per_image: &BTreeMap<u64, Cell>) -> CategoryResult {
    let gt_count: usize = per_image.values().map(|(g, _)| g.len()).sum();
    let det_count: usize = per_image.values().map(|(_, d)| d.len()).sum();
    let mut ap_per_threshold = Vec::with_capacity(IOU_THRESHOLDS.len());
    let mut tp50 = 0;
    let mut curve50 = Vec::new();
    for (ti, &thr) in IOU_THRESHOLDS.iter().enumerate() {
        let mut labelled: Vec<(ScoredBox, bool)> = per_image
            .values()
            .flat_map(|(g, d)| match_detections(d, g, thr))
            .collect();
        labelled.sort_by(|a, b| by_confidence(&a.0, &b.0));
        let labels: Vec<bool> = labelled.iter().map(|x| x.1).collect();
        if ti == 0 {
            tp50 = labels.iter().filter(|&&t| t).count();
            curve50 = interpolated_precision(&labels, gt_count);
        }
        ap_per_threshold.push(average_precision(&labels, gt_count));
    }
    CategoryResult {
        category_id,
        category: category.to_string(),
        ap: ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64,
        ap50: ap_per_threshold[0],
        ap_per_threshold,
        gt_count,
        det_count,
        tp: tp50,
        fp: det_count - tp50,
        fn_: gt_count - tp50,
        pr_curve50: curve50,
    }
}

fn group(name: &str, categories: Vec<CategoryResult>) -> GroupResult {
    let n = categories.len();
    let mean = |f: &dyn Fn(&CategoryResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            categories.iter().map(f).sum::<f64>() / n as f64
        }
    };
    GroupResult {
        name: name.to_string(),
        ap: mean(&|c| c.ap),
        ap50: mean(&|c| c.ap50),
        ap_per_threshold: (0..IOU_THRESHOLDS.len()).map(|t| mean(&|c| c.ap_per_threshold[t])).collect(),
        categories,
    }
}

fn evaluate_scope(
    name: &str,
    image_ids: &BTreeSet<u64>,
    gt: &CocoDocument,
    dets: &[Detection],
    cat_names: &BTreeMap<u64, String>,
) -> GroupResult {
    let mut cells: BTreeMap<u64, BTreeMap<u64, Cell>> = BTreeMap::new();
    for a in &gt.annotations {
        if image_ids.contains(&a.image_id) {
            cells
                .entry(a.category_id)
                .or_default()
                .entry(a.image_id)
                .or_default()
                .0
                .push(GtBox {
                    id: a.id,
                    bbox: BBox::from(a.bbox),
                });
        }
    }
    for d in dets {
        if !image_ids.contains(&d.image_id) {
            continue;
        }
        if let Some(per_image) = cells.get_mut(&d.category_id) {
            per_image.entry(d.image_id).or_default().1.push(ScoredBox {
                id: d.id.expect("ids assigned"),
                bbox: d.bbox,
                confidence: d.confidence,
            });
        }
    }
    let cells: Vec<(u64, BTreeMap<u64, Cell>)> = cells.into_iter().collect();
    let categories = cells
        .par_iter()
        .map(|(cid, per_image)| cell_result(*cid, &cat_names[cid], per_image))
        .collect();
    group(name, categories)
}

pub fn evaluate_corpus(preds: &[Detection], gt: &CocoDocument) -> Result<EvalResult, EvalError> {
    let dets = prepare(preds, gt)?;
    let cat_names: BTreeMap<u64, String> = gt.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    let mut by_modality: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for img in &gt.images {
        by_modality.entry(img.modality.as_str()).or_default().insert(img.id);
    }
    let all: BTreeSet<u64> = gt.images.iter().map(|i| i.id).collect();
    let modalities = by_modality
        .iter()
        .map(|(m, ids)| evaluate_scope(m, ids, gt, &dets, &cat_names))
        .filter(|g| !g.categories.is_empty())
        .collect();
    Ok(EvalResult {
        iou_thresholds: IOU_THRESHOLDS.to_vec(),
        modalities,
        pooled: evaluate_scope("all", &all, gt, &dets, &cat_names),
    })
}

/// Rows are runs; each modality contributes an AP / AP50 column pair
/// (percent, one decimal), followed by the pooled pair.
pub fn render_table(runs: &[(String, EvalResult)]) -> String {
    let mut cols: Vec<String> = runs
        .iter()
        .flat_map(|(_, r)| r.modalities.iter().map(|m| m.name.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    cols.push("all".into());
    let width = runs.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(3);
    let widths: Vec<usize> = cols.iter().map(|c| (c.len() + 3).max(6)).collect();
    let mut s = String::new();
    let _ = write!(s, "{:<width$}", "run");
    for (c, w) in cols.iter().zip(&widths) {
        let _ = write!(s, " | {:>w$} {:>6}", format!("{c} AP"), "AP50");
    }
    s.push('\n');
    let _ = write!(s, "{}", "-".repeat(width));
    for w in &widths {
        s.push_str("-+-");
        s.push_str(&"-".repeat(w + 7));
    }
    s.push('\n');
    for (name, r) in runs {
        let _ = write!(s, "{name:<width$}");
        let lookup: HashMap<&str, &GroupResult> = r
            .modalities
            .iter()
            .map(|m| (m.name.as_str(), m))
            .chain(std::iter::once(("all", &r.pooled)))
            .collect();
        for (c, w) in cols.iter().zip(&widths) {
            match lookup.get(c.as_str()) {
                Some(g) => {
                    let _ = write!(s, " | {:>w$.1} {:>6.1}", g.ap * 100.0, g.ap50 * 100.0);
                }
                None => {
                    let _ = write!(s, " | {:>w$} {:>6}", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}
