//! Corpus statistics: modality shares, region/category counts, masks per image.
//!
//! Counting is exact; displayed ratios are rounded half-up to two decimals
//! using integer arithmetic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::TaxonomyError;
use crate::taxonomy::Taxonomy;

use super::coco::GroundingCorpus;

/// `num / den` rounded half-up to two decimals, as hundredths.
pub fn hundredths_half_up(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    let (num, den) = (num as u128 * 100, den as u128);
    ((2 * num + den) / (2 * den)) as u64
}

pub fn format_hundredths(h: u64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityShare {
    pub modality: String,
    pub images: u64,
    /// Percentage of images, two decimals.
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_images: u64,
    pub total_annotations: u64,
    pub modalities: Vec<ModalityShare>,
    pub annotations_per_region: BTreeMap<String, u64>,
    pub annotations_per_category: BTreeMap<String, u64>,
    pub annotations_per_label: BTreeMap<String, u64>,
    /// Annotations (region masks) per image, two decimals.
    pub masks_per_image: String,
}

pub fn compute_stats(corpus: &GroundingCorpus, tax: &Taxonomy) -> Result<StatsReport, TaxonomyError> {
    let mut by_modality: BTreeMap<&str, u64> = BTreeMap::new();
    let mut by_label: BTreeMap<String, u64> = BTreeMap::new();
    let mut total_annotations = 0u64;
    for e in &corpus.entries {
        *by_modality.entry(&e.image.modality).or_default() += 1;
        for a in &e.annotations {
            *by_label.entry(a.label.clone()).or_default() += 1;
            total_annotations += 1;
        }
    }
    let total_images = corpus.entries.len() as u64;
    let rollup = tax.rollup(&by_label)?;
    let mut modalities: Vec<ModalityShare> = by_modality
        .into_iter()
        .map(|(m, n)| ModalityShare {
            modality: m.to_string(),
            images: n,
            percent: format_hundredths(hundredths_half_up(n * 100, total_images)),
        })
        .collect();
    modalities.sort_by(|a, b| b.images.cmp(&a.images).then_with(|| a.modality.cmp(&b.modality)));
    Ok(StatsReport {
        total_images,
        total_annotations,
        modalities,
        annotations_per_region: rollup.regions,
        annotations_per_category: rollup.categories,
        annotations_per_label: by_label,
        masks_per_image: format_hundredths(hundredths_half_up(total_annotations, total_images)),
    })
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images: {}", self.total_images);
        let _ = writeln!(s, "annotations: {}", self.total_annotations);
        let _ = writeln!(s, "masks_per_image: {}", self.masks_per_image);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>10} {:>8}", "modality", "images", "share%");
        for m in &self.modalities {
            let _ = writeln!(s, "{:<16} {:>10} {:>8}", m.modality, m.images, m.percent);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>12}", "region", "annotations");
        for (r, n) in &self.annotations_per_region {
            let _ = writeln!(s, "{r:<24} {n:>12}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>12}", "category", "annotations");
        for (c, n) in &self.annotations_per_category {
            let _ = writeln!(s, "{c:<24} {n:>12}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("stats serialize");
        s.push('\n');
        s
    }
}
