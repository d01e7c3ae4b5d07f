//! Three-tier quality control.
//!
//! Tier 1 (readability) and tier 2 (pairing) verdicts come from
//! [`pair_corpus`](crate::ingest::pair_corpus); this module adds the tier-3
//! annotation checks (label semantics, empty masks, minimum mask area) and
//! merges everything into a [`QcReport`]. QC classifies, it never mutates
//! its input.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::geometry::{bbox_of_pixels, connected_components, Connectivity};
use crate::ingest::Pairing;
use crate::rle::Rle;
use crate::sample::{MaskRef, PairedSample, RegionAnnotation, RejectReason, Rejection, Tier};
use crate::taxonomy::{Harmonized, Taxonomy};

pub const DEFAULT_MIN_AREA_FRACTION: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxMode {
    /// One box per connected component of each label.
    #[default]
    PerComponent,
    /// One box per label per mask file.
    PerMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcOptions {
    pub min_area_fraction: f64,
    pub connectivity: Connectivity,
    pub box_mode: BoxMode,
    pub embed_rle: bool,
}

impl Default for QcOptions {
    fn default() -> Self {
        QcOptions {
            min_area_fraction: DEFAULT_MIN_AREA_FRACTION,
            connectivity: Connectivity::Eight,
            box_mode: BoxMode::PerComponent,
            embed_rle: false,
        }
    }
}

impl QcOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return Err(format!(
                "min_area_fraction {} is outside [0, 1)",
                self.min_area_fraction
            ));
        }
        Ok(())
    }
}

/// A sample that passed all three tiers, with its retained annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedSample {
    pub sample: PairedSample,
    pub annotations: Vec<RegionAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub total: usize,
    pub tier1_rejected: usize,
    pub tier2_rejected: usize,
    pub tier3_rejected: usize,
    pub accepted: usize,
    pub duplicates_dropped: usize,
    pub annotations_retained: usize,
    pub annotations_below_area: usize,
    pub min_area_fraction: f64,
    pub rejections: Vec<Rejection>,
}

impl QcReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "QC report");
        let _ = writeln!(s, "min_area_fraction: {}", self.min_area_fraction);
        let _ = writeln!(s, "total: {}", self.total);
        let _ = writeln!(s, "tier1_rejected: {}", self.tier1_rejected);
        let _ = writeln!(s, "tier2_rejected: {}", self.tier2_rejected);
        let _ = writeln!(s, "tier3_rejected: {}", self.tier3_rejected);
        let _ = writeln!(s, "accepted: {}", self.accepted);
        let _ = writeln!(s, "duplicates_dropped: {}", self.duplicates_dropped);
        let _ = writeln!(s, "annotations_retained: {}", self.annotations_retained);
        let _ = writeln!(s, "annotations_below_area: {}", self.annotations_below_area);
        let _ = writeln!(s);
        let _ = writeln!(s, "rejections:");
        for r in &self.rejections {
            let _ = writeln!(s, "{}\t{}\t{}", r.tier as u8, r.file_name, r.reason);
        }
        s
    }

    /// One JSON object per line: a summary record, then one per rejection.
    pub fn to_json_lines(&self) -> String {
        let summary = serde_json::json!({
            "record": "summary",
            "total": self.total,
            "tier1_rejected": self.tier1_rejected,
            "tier2_rejected": self.tier2_rejected,
            "tier3_rejected": self.tier3_rejected,
            "accepted": self.accepted,
            "duplicates_dropped": self.duplicates_dropped,
            "annotations_retained": self.annotations_retained,
            "annotations_below_area": self.annotations_below_area,
            "min_area_fraction": self.min_area_fraction,
        });
        let mut out = summary.to_string();
        out.push('\n');
        for r in &self.rejections {
            let rec = serde_json::json!({
                "record": "rejection",
                "tier": r.tier as u8,
                "file_name": r.file_name,
                "source_dataset": r.source_dataset,
                "reason": r.reason,
                "message": r.reason.to_string(),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// Keep annotations covering at least `min_area_fraction` of the image.
pub fn filter_min_area(
    annotations: Vec<RegionAnnotation>,
    width: u32,
    height: u32,
    min_area_fraction: f64,
) -> Result<Vec<RegionAnnotation>, GeometryError> {
    let area = width as u64 * height as u64;
    if area == 0 {
        return Err(GeometryError::ZeroAreaImage);
    }
    Ok(annotations
        .into_iter()
        .filter(|a| a.pixel_count as f64 / area as f64 >= min_area_fraction)
        .collect())
}

/// Harmonize every label of the sample's masks and derive one annotation per
/// component (or per label, in [`BoxMode::PerMask`]).
pub fn derive_annotations(
    sample: &PairedSample,
    tax: &Taxonomy,
    opts: &QcOptions,
) -> Result<Vec<RegionAnnotation>, RejectReason> {
    let mut fine_of: BTreeMap<(usize, u16), String> = BTreeMap::new();
    for (mi, mask) in sample.masks.iter().enumerate() {
        for (value, raw) in mask.labels() {
            match tax.harmonize(raw) {
                Harmonized::Fine(f) => {
                    fine_of.insert((mi, value), f);
                }
                Harmonized::Unmapped(_) => {
                    return Err(RejectReason::UndefinedLabel {
                        raw_label: raw.to_string(),
                    })
                }
            }
        }
    }

    let (w, h) = (sample.image.width, sample.image.height);
    let mut out = Vec::new();
    for (mi, mask) in sample.masks.iter().enumerate() {
        let mut groups: BTreeMap<u16, Vec<Vec<(u32, u32)>>> = BTreeMap::new();
        match opts.box_mode {
            BoxMode::PerComponent => {
                for c in connected_components(w, h, &mask.values, opts.connectivity) {
                    groups.entry(c.label).or_default().push(c.pixels);
                }
            }
            BoxMode::PerMask => {
                for (i, &v) in mask.values.iter().enumerate() {
                    if v != 0 {
                        let g = groups.entry(v).or_default();
                        if g.is_empty() {
                            g.push(Vec::new());
                        }
                        g[0].push(((i as u32) % w, (i as u32) / w));
                    }
                }
            }
        }
        for (value, comps) in groups {
            let raw = &mask.value_map[&value];
            let fine = &fine_of[&(mi, value)];
            for (ci, pixels) in comps.into_iter().enumerate() {
                let bbox = bbox_of_pixels(&pixels).expect("components are nonempty");
                out.push(RegionAnnotation {
                    label: fine.clone(),
                    raw_label: raw.clone(),
                    bbox,
                    pixel_count: pixels.len() as u64,
                    mask_ref: MaskRef {
                        mask: mask.source.clone(),
                        value,
                        component: ci as u32,
                    },
                    rle: opts.embed_rle.then(|| Rle::from_pixels(w, h, &pixels)),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(RejectReason::NoAnnotations);
    }
    Ok(out)
}

enum Verdict {
    Accept(Vec<RegionAnnotation>, usize),
    Reject(RejectReason),
}

fn check_sample(sample: &PairedSample, tax: &Taxonomy, opts: &QcOptions) -> Verdict {
    let all = match derive_annotations(sample, tax, opts) {
        Ok(a) => a,
        Err(r) => return Verdict::Reject(r),
    };
    let before = all.len();
    let largest = all
        .iter()
        .map(|a| a.area_fraction(&sample.image))
        .fold(0.0, f64::max);
    match filter_min_area(all, sample.image.width, sample.image.height, opts.min_area_fraction) {
        Ok(kept) if !kept.is_empty() => {
            let removed = before - kept.len();
            Verdict::Accept(kept, removed)
        }
        Ok(_) => Verdict::Reject(RejectReason::BelowMinArea {
            largest_fraction: largest,
        }),
        Err(_) => Verdict::Reject(RejectReason::NoAnnotations),
    }
}

/// Run tier-3 checks over paired samples and merge with the pairing-stage
/// rejections.
pub fn run_qc(pairing: &Pairing, tax: &Taxonomy, opts: &QcOptions) -> (Vec<AcceptedSample>, QcReport) {
    let verdicts: Vec<Verdict> = pairing
        .samples
        .par_iter()
        .map(|s| check_sample(s, tax, opts))
        .collect();

    let mut accepted = Vec::new();
    let mut rejections = pairing.rejected.clone();
    let mut below_area = 0;
    for (s, v) in pairing.samples.iter().zip(verdicts) {
        match v {
            Verdict::Accept(annotations, removed) => {
                below_area += removed;
                log::debug!(target: "sample", "{{\"stage\":\"qc\",\"file\":{:?},\"verdict\":\"accepted\",\"annotations\":{}}}", s.image.file_name, annotations.len());
                accepted.push(AcceptedSample {
                    sample: s.clone(),
                    annotations,
                });
            }
            Verdict::Reject(reason) => {
                log::debug!(target: "sample", "{{\"stage\":\"qc\",\"file\":{:?},\"verdict\":\"rejected\",\"reason\":{:?}}}", s.image.file_name, reason.to_string());
                rejections.push(Rejection::new(
                    s.image.file_name.clone(),
                    s.image.source_dataset.clone(),
                    reason,
                ));
            }
        }
    }
    rejections.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    let count = |t| rejections.iter().filter(|r| r.tier == t).count();
    let report = QcReport {
        total: pairing.total(),
        tier1_rejected: count(Tier::Readability),
        tier2_rejected: count(Tier::Pairing),
        tier3_rejected: count(Tier::Validity),
        accepted: accepted.len(),
        duplicates_dropped: pairing.duplicates.len(),
        annotations_retained: accepted.iter().map(|a| a.annotations.len()).sum(),
        annotations_below_area: below_area,
        min_area_fraction: opts.min_area_fraction,
        rejections,
    };
    (accepted, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::ingest::{LabelMask, ValueMap};
    use crate::sample::ImageRecord;

    fn ann(pixels: u64) -> RegionAnnotation {
        RegionAnnotation {
            label: "liver".into(),
            raw_label: "liver".into(),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            pixel_count: pixels,
            mask_ref: MaskRef {
                mask: "m".into(),
                value: 1,
                component: 0,
            },
            rle: None,
        }
    }

    #[test]
    fn area_boundary() {
        assert!(filter_min_area(vec![ann(140)], 100, 100, 0.015).unwrap().is_empty());
        assert_eq!(filter_min_area(vec![ann(150)], 100, 100, 0.015).unwrap().len(), 1);
        assert_eq!(filter_min_area(vec![ann(10000)], 100, 100, 0.015).unwrap().len(), 1);
        assert_eq!(filter_min_area(vec![ann(1)], 0, 100, 0.015), Err(GeometryError::ZeroAreaImage));
    }

    fn sample(values: Vec<u16>, w: u32, h: u32, map: &[(u16, &str)]) -> PairedSample {
        let vm: ValueMap = map.iter().map(|(k, v)| (*k, v.to_string())).collect();
        let mask = LabelMask::from_raster(
            crate::ingest::raster::MaskRaster {
                width: w,
                height: h,
                values,
            },
            &vm,
            "d/masks/a.png",
        )
        .unwrap();
        PairedSample {
            image: ImageRecord {
                file_name: "d/images/a.png".into(),
                source_dataset: "d".into(),
                modality: "CT".into(),
                width: w,
                height: h,
                provenance: None,
            },
            masks: vec![mask],
            content_hash: "h".into(),
        }
    }

    fn blob(w: u32, h: u32, n: usize, v: u16) -> Vec<u16> {
        let mut values = vec![0; (w * h) as usize];
        values[..n].iter_mut().for_each(|x| *x = v);
        values
    }

    #[test]
    fn tier3_reasons() {
        let tax = Taxonomy::starter();
        let opts = QcOptions::default();
        let undefined = sample(blob(100, 100, 500, 1), 100, 100, &[(1, "zzz-unknown-structure")]);
        let small = sample(blob(100, 100, 100, 1), 100, 100, &[(1, "Liver")]);
        let ok = sample(blob(100, 100, 150, 1), 100, 100, &[(1, "Liver")]);
        let empty = sample(vec![0; 100], 10, 10, &[]);
        let pairing = Pairing::from_samples(vec![undefined, small, ok.clone(), empty]);
        let (acc, rep) = run_qc(&pairing, &tax, &opts);
        assert_eq!((rep.tier3_rejected, rep.accepted), (3, 1));
        assert_eq!(rep.total, 4);
        let reasons: Vec<String> = rep.rejections.iter().map(|r| r.reason.to_string()).collect();
        assert!(reasons.iter().any(|r| r.starts_with("undefined label semantics")));
        assert!(reasons.iter().any(|r| r.starts_with("all annotations below minimum area")));
        assert_eq!(acc[0].annotations[0].label, "liver");
        assert_eq!(acc[0].annotations[0].bbox, BBox::new(0.0, 0.0, 100.0, 2.0));

        let again = Pairing::from_samples(acc.iter().map(|a| a.sample.clone()).collect());
        let (acc2, rep2) = run_qc(&again, &tax, &opts);
        assert_eq!(acc2, acc);
        assert_eq!(rep2.accepted, 1);
    }

    #[test]
    fn per_mask_mode_merges_components() {
        let tax = Taxonomy::starter();
        let mut values = vec![0u16; 100];
        values[0] = 1;
        values[99] = 1;
        let s = sample(values, 10, 10, &[(1, "liver")]);
        let comp = derive_annotations(&s, &tax, &QcOptions::default()).unwrap();
        assert_eq!(comp.len(), 2);
        let opts = QcOptions {
            box_mode: BoxMode::PerMask,
            ..Default::default()
        };
        let merged = derive_annotations(&s, &tax, &opts).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].bbox, BBox::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(merged[0].pixel_count, 2);
    }

    #[test]
    fn options_validation() {
        assert!(QcOptions::default().validate().is_ok());
        let bad = QcOptions {
            min_area_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
