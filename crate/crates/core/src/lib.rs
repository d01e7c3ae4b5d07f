//! Construction of COCO-style medical grounding datasets from segmentation
//! corpora, phrase-grounding score/loss operations over feature matrices,
//! and AP/AP50 evaluation.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod export;
pub mod fixtures;
pub mod geometry;
pub mod grounding;
pub mod ingest;
pub mod pipeline;
pub mod qc;
pub mod rle;
pub mod sample;
pub mod taxonomy;

pub use error::{Error, ErrorKind, Result};
