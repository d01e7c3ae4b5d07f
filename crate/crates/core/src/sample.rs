//! Domain records shared by ingest, QC and export.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::ingest::LabelMask;
use crate::rle::Rle;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceProvenance {
    pub volume: String,
    pub axis: usize,
    pub index: usize,
}

/// One 2D image of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// `<dataset>/<path relative to the dataset root>`; unique across the corpus.
    pub file_name: String,
    pub source_dataset: String,
    pub modality: String,
    pub width: u32,
    pub height: u32,
    pub provenance: Option<SliceProvenance>,
}

impl ImageRecord {
    pub fn pixel_area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// An image with its decoded, value-checked masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedSample {
    pub image: ImageRecord,
    pub masks: Vec<LabelMask>,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaskRef {
    /// Mask source (relative path or slice name).
    pub mask: String,
    pub value: u16,
    /// Component ordinal within `(mask, value)`; 0 in per-mask mode.
    pub component: u32,
}

/// One grounded region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    /// Canonical fine label.
    pub label: String,
    pub raw_label: String,
    pub bbox: BBox,
    pub pixel_count: u64,
    pub mask_ref: MaskRef,
    pub rle: Option<Rle>,
}

impl RegionAnnotation {
    pub fn area_fraction(&self, image: &ImageRecord) -> f64 {
        self.pixel_count as f64 / image.pixel_area() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    /// File readability.
    Readability = 1,
    /// Image/mask pairing.
    Pairing = 2,
    /// Annotation validity.
    Validity = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    Unreadable { file: String, reason: String },
    NoMask,
    DimensionMismatch {
        mask: String,
        image_size: [u32; 2],
        mask_size: [u32; 2],
    },
    UndefinedMaskValue { mask: String, value: u16 },
    UndefinedLabel { raw_label: String },
    NoAnnotations,
    BelowMinArea { largest_fraction: f64 },
}

impl RejectReason {
    pub fn tier(&self) -> Tier {
        match self {
            RejectReason::Unreadable { .. } => Tier::Readability,
            RejectReason::NoMask | RejectReason::DimensionMismatch { .. } => Tier::Pairing,
            _ => Tier::Validity,
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Unreadable { file, reason } => write!(f, "unreadable file {file}: {reason}"),
            RejectReason::NoMask => f.write_str("no corresponding segmentation mask"),
            RejectReason::DimensionMismatch {
                mask,
                image_size,
                mask_size,
            } => write!(
                f,
                "dimension mismatch: image {}x{}, mask {mask} {}x{}",
                image_size[0], image_size[1], mask_size[0], mask_size[1]
            ),
            RejectReason::UndefinedMaskValue { mask, value } => {
                write!(f, "malformed structure: mask {mask} value {value} not in value map")
            }
            RejectReason::UndefinedLabel { raw_label } => {
                write!(f, "undefined label semantics: {raw_label:?}")
            }
            RejectReason::NoAnnotations => f.write_str("malformed structure: masks contain no labels"),
            RejectReason::BelowMinArea { largest_fraction } => write!(
                f,
                "all annotations below minimum area (largest {:.4})",
                largest_fraction
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub file_name: String,
    pub source_dataset: String,
    pub tier: Tier,
    pub reason: RejectReason,
}

impl Rejection {
    pub fn new(file_name: impl Into<String>, source_dataset: impl Into<String>, reason: RejectReason) -> Self {
        Rejection {
            file_name: file_name.into(),
            source_dataset: source_dataset.into(),
            tier: reason.tier(),
            reason,
        }
    }
}
