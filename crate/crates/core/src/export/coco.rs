//! COCO-style grounding document.
//!
//! # Document layout
//!
//! The document is UTF-8 JSON written by `serde_json`'s pretty printer
//! (two-space indent) followed by a single `\n`. Top-level keys, in order:
//!
//! - `info`: `{"description", "format", "version"}`; `format` is
//!   `"medground-coco"` and `version` is `1`.
//! - `images`: `{"id", "file_name", "width", "height", "modality",
//!   "source_dataset"}` plus `"volume"`, `"slice_axis"`, `"slice_index"` for
//!   images cut from a volume. Ids start at 1 in ascending `file_name` order.
//! - `annotations`: `{"id", "image_id", "category_id", "bbox", "area",
//!   "iscrowd", "raw_label", "mask", "mask_value", "component"}` plus
//!   `"segmentation"` (`{"size": [h, w], "counts": [...]}`, uncompressed
//!   column-major RLE) when masks are embedded. `bbox` is `[x, y, w, h]`
//!   in pixels printed as JSON floats (`12.0`); `area` is the mask pixel
//!   count (integer). Ids start at 1 in image order, then annotation order.
//! - `categories`: `{"id", "name", "supercategory", "region"}`, one per fine
//!   label of the taxonomy; ids start at 1 in ascending `name` order;
//!   `supercategory` is the anatomical category.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ExportError;
use crate::geometry::BBox;
use crate::qc::AcceptedSample;
use crate::rle::Rle;
use crate::sample::{ImageRecord, MaskRef, RegionAnnotation, SliceProvenance};
use crate::taxonomy::Taxonomy;

pub const FORMAT_NAME: &str = "medground-coco";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub image: ImageRecord,
    pub annotations: Vec<RegionAnnotation>,
}

/// Accepted images with their annotations; the unit of export.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundingCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl GroundingCorpus {
    pub fn from_accepted(accepted: &[AcceptedSample]) -> Self {
        let mut c = GroundingCorpus {
            entries: accepted
                .iter()
                .map(|a| CorpusEntry {
                    image: a.sample.image.clone(),
                    annotations: a.annotations.clone(),
                })
                .collect(),
        };
        c.sort();
        c
    }

    /// Canonical order: by image file name.
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| a.image.file_name.cmp(&b.image.file_name));
    }

    pub fn image_count(&self) -> usize {
        self.entries.len()
    }

    pub fn annotation_count(&self) -> usize {
        self.entries.iter().map(|e| e.annotations.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoInfo {
    pub description: String,
    pub format: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub modality: String,
    pub source_dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub area: u64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default)]
    pub raw_label: String,
    #[serde(default)]
    pub mask: String,
    #[serde(default)]
    pub mask_value: u16,
    #[serde(default)]
    pub component: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Rle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    pub supercategory: String,
    #[serde(default)]
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub info: CocoInfo,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ExportError> {
        let doc: CocoDocument =
            serde_json::from_str(text).map_err(|e| ExportError::InvalidDocument(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_json(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ExportError> {
        std::fs::write(path, self.to_json()).map_err(|source| ExportError::WriteFailure {
            path: path.into(),
            source,
        })
    }

    /// Unique ids and resolvable references.
    pub fn validate(&self) -> Result<(), ExportError> {
        let bad = |m: String| Err(ExportError::InvalidDocument(m));
        let mut images = HashSet::new();
        for i in &self.images {
            if !images.insert(i.id) {
                return bad(format!("duplicate image id {}", i.id));
            }
        }
        let mut cats = HashSet::new();
        for c in &self.categories {
            if !cats.insert(c.id) {
                return bad(format!("duplicate category id {}", c.id));
            }
        }
        let mut anns = HashSet::new();
        for a in &self.annotations {
            if !anns.insert(a.id) {
                return bad(format!("duplicate annotation id {}", a.id));
            }
            if !images.contains(&a.image_id) {
                return bad(format!("annotation {} references missing image {}", a.id, a.image_id));
            }
            if !cats.contains(&a.category_id) {
                return bad(format!(
                    "annotation {} references missing category {}",
                    a.id, a.category_id
                ));
            }
        }
        Ok(())
    }

    pub fn image_by_id(&self) -> HashMap<u64, &CocoImage> {
        self.images.iter().map(|i| (i.id, i)).collect()
    }
}

/// Build the document. Ids follow canonical (file-name) order, so the output
/// does not depend on the order of `corpus.entries`.
pub fn export_coco(corpus: &GroundingCorpus, tax: &Taxonomy) -> Result<CocoDocument, ExportError> {
    let categories: Vec<CocoCategory> = tax
        .fine_labels()
        .enumerate()
        .map(|(i, name)| {
            let sup = tax.category_of(name).unwrap_or_default();
            CocoCategory {
                id: i as u64 + 1,
                name: name.to_string(),
                supercategory: sup.to_string(),
                region: tax.region_of_category(sup).unwrap_or_default().to_string(),
            }
        })
        .collect();
    let cat_id: HashMap<&str, u64> = categories.iter().map(|c| (c.name.as_str(), c.id)).collect();

    let mut order: Vec<&CorpusEntry> = corpus.entries.iter().collect();
    order.sort_by(|a, b| a.image.file_name.cmp(&b.image.file_name));

    let mut images = Vec::with_capacity(order.len());
    let mut annotations = Vec::new();
    for (ii, e) in order.iter().enumerate() {
        let image_id = ii as u64 + 1;
        let img = &e.image;
        images.push(CocoImage {
            id: image_id,
            file_name: img.file_name.clone(),
            width: img.width,
            height: img.height,
            modality: img.modality.clone(),
            source_dataset: img.source_dataset.clone(),
            volume: img.provenance.as_ref().map(|p| p.volume.clone()),
            slice_axis: img.provenance.as_ref().map(|p| p.axis),
            slice_index: img.provenance.as_ref().map(|p| p.index),
        });
        for (ai, a) in e.annotations.iter().enumerate() {
            let name = format!("{}#{}", img.file_name, ai);
            let category_id = *cat_id.get(a.label.as_str()).ok_or_else(|| ExportError::UnharmonizedLabel {
                annotation: name.clone(),
                label: a.label.clone(),
            })?;
            if !a.bbox.fits_within(img.width, img.height) {
                return Err(ExportError::BoundsViolation {
                    annotation: name,
                    bbox: a.bbox.to_array(),
                    width: img.width,
                    height: img.height,
                });
            }
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id,
                bbox: a.bbox.to_array(),
                area: a.pixel_count,
                iscrowd: 0,
                raw_label: a.raw_label.clone(),
                mask: a.mask_ref.mask.clone(),
                mask_value: a.mask_ref.value,
                component: a.mask_ref.component,
                segmentation: a.rle.clone(),
            });
        }
    }
    Ok(CocoDocument {
        info: CocoInfo {
            description: "medical grounding dataset".into(),
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
        },
        images,
        annotations,
        categories,
    })
}

/// Rebuild the corpus from a document.
pub fn import_coco(doc: &CocoDocument) -> Result<GroundingCorpus, ExportError> {
    doc.validate()?;
    let cats: HashMap<u64, &CocoCategory> = doc.categories.iter().map(|c| (c.id, c)).collect();
    let mut by_image: BTreeMap<u64, Vec<&CocoAnnotation>> = BTreeMap::new();
    for a in &doc.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    let mut images: Vec<&CocoImage> = doc.images.iter().collect();
    images.sort_by_key(|i| i.id);
    let entries = images
        .into_iter()
        .map(|img| {
            let provenance = match (&img.volume, img.slice_axis, img.slice_index) {
                (Some(v), Some(axis), Some(index)) => Some(SliceProvenance {
                    volume: v.clone(),
                    axis,
                    index,
                }),
                _ => None,
            };
            let mut anns = by_image.remove(&img.id).unwrap_or_default();
            anns.sort_by_key(|a| a.id);
            CorpusEntry {
                image: ImageRecord {
                    file_name: img.file_name.clone(),
                    source_dataset: img.source_dataset.clone(),
                    modality: img.modality.clone(),
                    width: img.width,
                    height: img.height,
                    provenance,
                },
                annotations: anns
                    .into_iter()
                    .map(|a| RegionAnnotation {
                        label: cats[&a.category_id].name.clone(),
                        raw_label: a.raw_label.clone(),
                        bbox: BBox::from(a.bbox),
                        pixel_count: a.area,
                        mask_ref: MaskRef {
                            mask: a.mask.clone(),
                            value: a.mask_value,
                            component: a.component,
                        },
                        rle: a.segmentation.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(GroundingCorpus { entries })
}
