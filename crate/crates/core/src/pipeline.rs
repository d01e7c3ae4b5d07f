//! Stage wiring: manifest → scan → pairing → QC → export.
//!
//! Every stage recomputes from the manifest, so stages can run in any order
//! and each output depends only on inputs and configuration.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, ExportError};
use crate::export::{export_coco, CocoDocument, GroundingCorpus};
use crate::ingest::corpus::{ImageInput, MaskInput};
use crate::ingest::raster::{encode_image, encode_mask_raster};
use crate::ingest::{pair_corpus, scan_manifest, DatasetScan, Manifest, Pairing};
use crate::qc::{run_qc, AcceptedSample, QcOptions, QcReport};
use crate::taxonomy::Taxonomy;

pub const COCO_FILE: &str = "grounding.json";
pub const QC_REPORT_FILE: &str = "qc_report.txt";
pub const QC_REJECTIONS_FILE: &str = "qc_rejections.jsonl";
pub const INGEST_SUMMARY_FILE: &str = "ingest.json";

pub fn load_taxonomy(path: Option<&Path>) -> Result<Taxonomy, Error> {
    match path {
        None => Ok(Taxonomy::starter()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(Taxonomy::parse(&text)?)
        }
    }
}

pub struct Pipeline {
    pub manifest: Manifest,
    pub taxonomy: Taxonomy,
    pub qc: QcOptions,
}

impl Pipeline {
    pub fn new(manifest: Manifest, taxonomy: Taxonomy, qc: QcOptions) -> Self {
        Pipeline { manifest, taxonomy, qc }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, Error> {
        let mut manifest = Manifest::load(cfg.require_manifest()?)?;
        if let Some(axes) = &cfg.axes {
            for d in &mut manifest.datasets {
                d.axes.get_or_insert_with(|| axes.clone());
            }
        }
        Ok(Pipeline::new(manifest, load_taxonomy(cfg.taxonomy.as_deref())?, cfg.qc_options()))
    }

    pub fn scan(&self) -> Result<Vec<DatasetScan>, Error> {
        Ok(scan_manifest(&self.manifest)?)
    }

    pub fn pair(&self) -> Result<Pairing, Error> {
        Ok(pair_corpus(&self.scan()?)?)
    }

    pub fn qc(&self) -> Result<(Vec<AcceptedSample>, QcReport), Error> {
        Ok(run_qc(&self.pair()?, &self.taxonomy, &self.qc))
    }

    pub fn export(&self) -> Result<(CocoDocument, QcReport), Error> {
        let (accepted, report) = self.qc()?;
        let doc = export_coco(&GroundingCorpus::from_accepted(&accepted), &self.taxonomy)?;
        Ok((doc, report))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetIngest {
    pub dataset: String,
    pub images: usize,
    pub masks: usize,
    pub slices_written: usize,
    pub slice_masks_written: usize,
    pub slice_mask_failures: usize,
    pub volume_failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub datasets: Vec<DatasetIngest>,
}

impl IngestSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<20} {:>8} {:>8} {:>8} {:>12} {:>10}\n",
            "dataset", "images", "masks", "slices", "slice_masks", "failures"
        );
        for d in &self.datasets {
            s.push_str(&format!(
                "{:<20} {:>8} {:>8} {:>8} {:>12} {:>10}\n",
                d.dataset,
                d.images,
                d.masks,
                d.slices_written,
                d.slice_masks_written,
                d.volume_failures + d.slice_mask_failures
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write standardized slices of every volume to `<out>/<dataset>/slices/`.
pub fn write_slices(scans: &[DatasetScan], out: &Path) -> Result<IngestSummary, Error> {
    let mut summary = IngestSummary::default();
    for scan in scans {
        let base = out.join(&scan.name);
        let results: Vec<Result<(bool, usize, usize), Error>> = scan
            .slice_pairs
            .par_iter()
            .map(|(img, masks)| {
                let raster = match &img.input {
                    ImageInput::Decoded(r) => r,
                    ImageInput::File(_) => return Ok((false, 0, 0)),
                };
                let bytes = encode_image(raster).map_err(Error::Config)?;
                write_file(&base.join(&img.rel), &bytes)?;
                let (mut ok, mut bad) = (0, 0);
                for m in masks {
                    match &m.input {
                        MaskInput::Decoded(Ok(mr)) => {
                            let bytes = encode_mask_raster(mr).map_err(Error::Config)?;
                            write_file(&base.join(&m.rel), &bytes)?;
                            ok += 1;
                        }
                        MaskInput::Decoded(Err(_)) => bad += 1,
                        MaskInput::File(_) => {}
                    }
                }
                Ok((true, ok, bad))
            })
            .collect();
        let mut d = DatasetIngest {
            dataset: scan.name.clone(),
            images: scan.images.len(),
            masks: scan.masks.len(),
            volume_failures: scan.volume_failures.len(),
            ..Default::default()
        };
        for r in results {
            let (written, ok, bad) = r?;
            d.slices_written += written as usize;
            d.slice_masks_written += ok;
            d.slice_mask_failures += bad;
        }
        summary.datasets.push(d);
    }
    Ok(summary)
}

pub fn write_qc_outputs(report: &QcReport, out: &Path) -> Result<(), Error> {
    write_file(&out.join(QC_REPORT_FILE), report.to_text().as_bytes())?;
    write_file(&out.join(QC_REJECTIONS_FILE), report.to_json_lines().as_bytes())
}

pub fn write_coco(doc: &CocoDocument, out: &Path) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(COCO_FILE);
    doc.write(&path).map_err(|e| match e {
        ExportError::WriteFailure { path, source } => Error::io(path, source),
        other => other.into(),
    })?;
    Ok(path)
}
