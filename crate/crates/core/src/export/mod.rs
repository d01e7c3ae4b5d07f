//! COCO-style export and corpus statistics.

pub mod coco;
pub mod stats;

pub use coco::{export_coco, import_coco, CocoDocument, CorpusEntry, GroundingCorpus};
pub use stats::{compute_stats, StatsReport};
