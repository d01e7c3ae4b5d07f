//! Directory scanning and image/mask pairing.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::sample::{ImageRecord, PairedSample, RejectReason, Rejection, SliceProvenance, Tier};

use super::manifest::{DatasetSpec, ListedPair, Manifest, PairingRule};
use super::mask::{LabelMask, ValueMap};
use super::nifti::{read_volume, Volume};
use super::raster::{decode_image, decode_mask_raster, MaskRaster, Raster};
use super::volume::{slice_name, slice_to_mask, slice_volume, window_to_gray8};

#[derive(Debug, Clone)]
pub enum ImageInput {
    File(PathBuf),
    Decoded(Raster),
}

#[derive(Debug, Clone)]
pub enum MaskInput {
    File(PathBuf),
    Decoded(Result<MaskRaster, String>),
}

#[derive(Debug, Clone)]
pub struct ImageEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub rel: String,
    pub input: ImageInput,
    pub provenance: Option<SliceProvenance>,
}

#[derive(Debug, Clone)]
pub struct MaskEntry {
    pub rel: String,
    pub input: MaskInput,
}

/// Everything found for one dataset before pairing.
#[derive(Debug, Clone)]
pub struct DatasetScan {
    pub name: String,
    pub modality: String,
    pub rule: PairingRule,
    pub value_map: ValueMap,
    pub listed: Vec<ListedPair>,
    /// Dataset root on disk; listed pairs resolve against it.
    pub root: PathBuf,
    /// Directory prefix (relative to root) holding 2D masks.
    pub mask_dir: Option<String>,
    pub images: Vec<ImageEntry>,
    pub masks: Vec<MaskEntry>,
    /// Slices cut from volumes, already paired by slice name.
    pub slice_pairs: Vec<(ImageEntry, Vec<MaskEntry>)>,
    /// Volumes that could not be read; each is one tier-1 rejection.
    pub volume_failures: Vec<Rejection>,
}

impl DatasetScan {
    pub fn new(name: &str, modality: &str, rule: PairingRule, value_map: ValueMap) -> Self {
        DatasetScan {
            name: name.into(),
            modality: modality.into(),
            rule,
            value_map,
            listed: Vec::new(),
            root: PathBuf::new(),
            mask_dir: Some("masks".into()),
            images: Vec::new(),
            masks: Vec::new(),
            slice_pairs: Vec::new(),
            volume_failures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub kept: String,
    pub dropped: String,
    pub content_hash: String,
}

/// Result of pairing: paired samples plus everything that failed tiers 1–3
/// structurally, and dropped duplicates.
#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub samples: Vec<PairedSample>,
    pub rejected: Vec<Rejection>,
    pub duplicates: Vec<Duplicate>,
}

impl Pairing {
    pub fn from_samples(samples: Vec<PairedSample>) -> Self {
        Pairing {
            samples,
            ..Default::default()
        }
    }

    /// Images excluded for lack of a usable mask.
    pub fn orphans(&self) -> impl Iterator<Item = &Rejection> {
        self.rejected.iter().filter(|r| r.tier == Tier::Pairing)
    }

    pub fn total(&self) -> usize {
        self.samples.len() + self.rejected.len()
    }
}

fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn walk_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        let path = entry.path();
        let ft = entry.file_type().map_err(io)?;
        if ft.is_dir() {
            walk_files(root, &path, out)?;
        } else if ft.is_file() {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            out.push((rel_string(rel), path));
        }
    }
    Ok(())
}

fn list_dir(root: &Path, sub: &Path) -> Result<Vec<(String, PathBuf)>, IngestError> {
    let dir = root.join(sub);
    let mut out = Vec::new();
    if dir.is_dir() {
        walk_files(root, &dir, &mut out)?;
    }
    out.sort();
    Ok(out)
}

fn volume_stem(file_name: &str) -> &str {
    file_name
        .strip_suffix(".nii.gz")
        .or_else(|| file_name.strip_suffix(".nii"))
        .unwrap_or(file_name)
}

fn load_volume(path: &Path) -> Result<Volume, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    read_volume(&bytes).map_err(|e| e.to_string())
}

/// Slice one image volume (and its label volume, if any) along `axes`.
pub fn slice_volume_pair(
    name: &str,
    image: &Volume,
    labels: Option<&Volume>,
    axes: &[usize],
) -> Result<Vec<(ImageEntry, Vec<MaskEntry>)>, IngestError> {
    let mut out = Vec::new();
    for &axis in axes {
        let img_slices = slice_volume(image, axis)?;
        let mut lbl_slices: HashMap<usize, _> = match labels {
            Some(l) => slice_volume(l, axis)?.into_iter().map(|s| (s.index, s)).collect(),
            None => HashMap::new(),
        };
        for s in &img_slices {
            let sname = slice_name(name, axis, s.index);
            let img = ImageEntry {
                rel: format!("slices/images/{sname}.png"),
                input: ImageInput::Decoded(window_to_gray8(s)),
                provenance: Some(SliceProvenance {
                    volume: name.to_string(),
                    axis,
                    index: s.index,
                }),
            };
            let masks = lbl_slices
                .remove(&s.index)
                .map(|l| {
                    vec![MaskEntry {
                        rel: format!("slices/masks/{sname}.png"),
                        input: MaskInput::Decoded(slice_to_mask(&l)),
                    }]
                })
                .unwrap_or_default();
            out.push((img, masks));
        }
    }
    Ok(out)
}

/// Read one dataset's directories and volumes.
pub fn scan_dataset(manifest: &Manifest, spec: &DatasetSpec) -> Result<DatasetScan, IngestError> {
    let root = manifest.dataset_root(spec);
    let mut scan = DatasetScan::new(&spec.name, &spec.modality, spec.pairing, spec.value_map.clone());
    scan.listed = spec.pairs.clone();
    scan.root = root.clone();
    scan.mask_dir = spec.masks.as_deref().map(rel_string);
    if let Some(images) = &spec.images {
        scan.images = list_dir(&root, images)?
            .into_iter()
            .map(|(rel, path)| ImageEntry {
                rel,
                input: ImageInput::File(path),
                provenance: None,
            })
            .collect();
    }
    if let Some(masks) = &spec.masks {
        scan.masks = list_dir(&root, masks)?
            .into_iter()
            .map(|(rel, path)| MaskEntry {
                rel,
                input: MaskInput::File(path),
            })
            .collect();
    }
    if let Some(vdir) = &spec.volumes {
        let axes = spec.slicing_axes();
        let files = list_dir(&root, vdir)?;
        let loaded: Vec<_> = files
            .par_iter()
            .map(|(rel, path)| {
                let fname = path.file_name().unwrap_or_default().to_string_lossy().to_string();
                let labels = spec
                    .volume_labels
                    .as_ref()
                    .map(|l| root.join(l).join(&fname))
                    .filter(|p| p.is_file());
                let vol = load_volume(path);
                let lbl = labels.map(|p| (rel_string(p.strip_prefix(&root).unwrap_or(&p)), load_volume(&p)));
                (rel.clone(), volume_stem(&fname).to_string(), vol, lbl)
            })
            .collect();
        for (rel, stem, vol, lbl) in loaded {
            let file_name = format!("{}/{rel}", spec.name);
            let vol = match vol {
                Ok(v) => v,
                Err(reason) => {
                    scan.volume_failures.push(Rejection::new(
                        file_name.clone(),
                        &spec.name,
                        RejectReason::Unreadable { file: file_name, reason },
                    ));
                    continue;
                }
            };
            let lbl = match lbl {
                Some((_, Ok(l))) => Some(l),
                Some((lrel, Err(reason))) => {
                    let file = format!("{}/{lrel}", spec.name);
                    scan.volume_failures.push(Rejection::new(
                        file_name,
                        &spec.name,
                        RejectReason::Unreadable { file, reason },
                    ));
                    continue;
                }
                None => None,
            };
            scan.slice_pairs
                .extend(slice_volume_pair(&stem, &vol, lbl.as_ref(), &axes)?);
        }
    }
    Ok(scan)
}

pub fn scan_manifest(manifest: &Manifest) -> Result<Vec<DatasetScan>, IngestError> {
    manifest.datasets.iter().map(|d| scan_dataset(manifest, d)).collect()
}

struct Candidate<'a> {
    file_name: String,
    dataset: &'a DatasetScan,
    image: &'a ImageEntry,
    masks: Vec<&'a MaskEntry>,
}

fn file_stem(rel: &str) -> &str {
    let name = rel.rsplit('/').next().unwrap_or(rel);
    match name.rfind('.') {
        Some(i) if i > 0 => &name[..i],
        _ => name,
    }
}

fn stem_candidates(scan: &DatasetScan) -> Result<Vec<Candidate<'_>>, IngestError> {
    let prefix = scan.mask_dir.as_deref().map(|d| format!("{d}/"));
    // Flat layout: masks/<stem>.png or masks/<stem>__<suffix>.png.
    // Directory layout: masks/<stem>/<anything>.png.
    let mut flat: BTreeMap<&str, Vec<&MaskEntry>> = BTreeMap::new();
    let mut nested: BTreeMap<&str, Vec<&MaskEntry>> = BTreeMap::new();
    for m in &scan.masks {
        let inner = match &prefix {
            Some(p) => m.rel.strip_prefix(p.as_str()).unwrap_or(&m.rel),
            None => &m.rel,
        };
        match inner.split_once('/') {
            Some((dir, _)) => nested.entry(dir).or_default().push(m),
            None => flat.entry(file_stem(inner)).or_default().push(m),
        }
    }

    let mut seen_stems: HashMap<&str, &str> = HashMap::new();
    let mut out = Vec::new();
    for img in &scan.images {
        let stem = file_stem(&img.rel);
        if let Some(prev) = seen_stems.insert(stem, &img.rel) {
            return Err(IngestError::AmbiguousPairing {
                image: format!("{}/{} (stem shared with {prev})", scan.name, img.rel),
            });
        }
        let multi = format!("{stem}__");
        let mut flat_hits: Vec<&MaskEntry> = flat.get(stem).cloned().unwrap_or_default();
        for (_, ms) in flat
            .range::<str, _>((std::ops::Bound::Included(multi.as_str()), std::ops::Bound::Unbounded))
            .take_while(|(k, _)| k.starts_with(&multi))
        {
            flat_hits.extend(ms);
        }
        let dir_hits = nested.get(stem);
        if !flat_hits.is_empty() && dir_hits.is_some() {
            return Err(IngestError::AmbiguousPairing {
                image: format!("{}/{}", scan.name, img.rel),
            });
        }
        let mut masks = dir_hits.cloned().unwrap_or(flat_hits);
        masks.sort_by(|a, b| a.rel.cmp(&b.rel));
        out.push(Candidate {
            file_name: format!("{}/{}", scan.name, img.rel),
            dataset: scan,
            image: img,
            masks,
        });
    }
    Ok(out)
}

fn listed_candidates(scan: &DatasetScan, extra: &mut Vec<ImageEntry>, extra_masks: &mut Vec<MaskEntry>) {
    // Listed entries that were not found by the directory scan still become
    // candidates, so missing files surface as tier-1 rejections.
    for p in &scan.listed {
        let rel = rel_string(&p.image);
        if !scan.images.iter().any(|i| i.rel == rel) {
            extra.push(ImageEntry {
                rel,
                input: ImageInput::File(scan.root.join(&p.image)),
                provenance: None,
            });
        }
        for m in &p.masks {
            let rel = rel_string(m);
            if !scan.masks.iter().any(|x| x.rel == rel) {
                extra_masks.push(MaskEntry {
                    rel,
                    input: MaskInput::File(scan.root.join(m)),
                });
            }
        }
    }
}

fn manifest_candidates<'a>(
    scan: &'a DatasetScan,
    extra_images: &'a [ImageEntry],
    extra_masks: &'a [MaskEntry],
) -> Vec<Candidate<'a>> {
    let masks_by_rel: HashMap<&str, &MaskEntry> = scan
        .masks
        .iter()
        .chain(extra_masks)
        .map(|m| (m.rel.as_str(), m))
        .collect();
    let mut listed: BTreeMap<String, Vec<&MaskEntry>> = BTreeMap::new();
    for p in &scan.listed {
        let entry = listed.entry(rel_string(&p.image)).or_default();
        for m in &p.masks {
            if let Some(me) = masks_by_rel.get(rel_string(m).as_str()) {
                entry.push(me);
            }
        }
    }
    scan.images
        .iter()
        .chain(extra_images)
        .map(|img| {
            let mut masks = listed.get(&img.rel).cloned().unwrap_or_default();
            masks.sort_by(|a, b| a.rel.cmp(&b.rel));
            masks.dedup_by(|a, b| a.rel == b.rel);
            Candidate {
                file_name: format!("{}/{}", scan.name, img.rel),
                dataset: scan,
                image: img,
                masks,
            }
        })
        .collect()
}

struct Decoded {
    image: Result<(u32, u32, String), String>,
    masks: Vec<Result<MaskRaster, String>>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| e.to_string())
}

fn decode_candidate(c: &Candidate<'_>) -> Decoded {
    let image = match &c.image.input {
        ImageInput::File(p) => read_bytes(p).and_then(|b| decode_image(&b)),
        ImageInput::Decoded(r) => Ok(r.clone()),
    }
    .map(|r| (r.width, r.height, r.content_hash()));
    // Masks of an unreadable image are never inspected.
    let masks = if image.is_ok() {
        c.masks
            .iter()
            .map(|m| match &m.input {
                MaskInput::File(p) => read_bytes(p).and_then(|b| decode_mask_raster(&b)),
                MaskInput::Decoded(r) => r.clone(),
            })
            .collect()
    } else {
        Vec::new()
    };
    Decoded { image, masks }
}

/// Pair images with masks across datasets, deduplicate by decoded-pixel hash,
/// and sort out readability/pairing/value-map failures.
///
/// Output order depends only on the `<dataset>/<rel>` file names, never on
/// input order or worker count.
pub fn pair_corpus(scans: &[DatasetScan]) -> Result<Pairing, IngestError> {
    let mut extras: Vec<(Vec<ImageEntry>, Vec<MaskEntry>)> = Vec::with_capacity(scans.len());
    for s in scans {
        let mut ei = Vec::new();
        let mut em = Vec::new();
        if s.rule == PairingRule::ManifestListed {
            listed_candidates(s, &mut ei, &mut em);
        }
        extras.push((ei, em));
    }

    let mut candidates: Vec<Candidate<'_>> = Vec::new();
    for (s, (ei, em)) in scans.iter().zip(&extras) {
        match s.rule {
            PairingRule::FilenameStem => candidates.extend(stem_candidates(s)?),
            PairingRule::ManifestListed => candidates.extend(manifest_candidates(s, ei, em)),
        }
        for (img, masks) in &s.slice_pairs {
            let mut masks: Vec<&MaskEntry> = masks.iter().collect();
            masks.sort_by(|a, b| a.rel.cmp(&b.rel));
            candidates.push(Candidate {
                file_name: format!("{}/{}", s.name, img.rel),
                dataset: s,
                image: img,
                masks,
            });
        }
    }
    let volume_failures: Vec<Rejection> = scans.iter().flat_map(|s| s.volume_failures.clone()).collect();
    if candidates.is_empty() && volume_failures.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    candidates.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    if let Some(w) = candidates.windows(2).find(|w| w[0].file_name == w[1].file_name) {
        return Err(IngestError::AmbiguousPairing {
            image: w[0].file_name.clone(),
        });
    }

    let decoded: Vec<Decoded> = candidates.par_iter().map(decode_candidate).collect();

    let mut out = Pairing {
        rejected: volume_failures,
        ..Default::default()
    };
    let mut first_by_hash: HashMap<String, String> = HashMap::new();
    for (c, d) in candidates.iter().zip(decoded) {
        let reject = |reason| Rejection::new(c.file_name.clone(), c.dataset.name.clone(), reason);
        let (width, height, hash) = match d.image {
            Ok(v) => v,
            Err(reason) => {
                out.rejected.push(reject(RejectReason::Unreadable {
                    file: c.file_name.clone(),
                    reason,
                }));
                continue;
            }
        };
        if let Some(kept) = first_by_hash.get(&hash) {
            out.duplicates.push(Duplicate {
                kept: kept.clone(),
                dropped: c.file_name.clone(),
                content_hash: hash,
            });
            continue;
        }
        first_by_hash.insert(hash.clone(), c.file_name.clone());

        match check_masks(c, d.masks, width, height) {
            Ok(masks) => {
                log::debug!(target: "sample", "{{\"stage\":\"pair\",\"file\":{:?},\"masks\":{}}}", c.file_name, masks.len());
                out.samples.push(PairedSample {
                    image: ImageRecord {
                        file_name: c.file_name.clone(),
                        source_dataset: c.dataset.name.clone(),
                        modality: c.dataset.modality.clone(),
                        width,
                        height,
                        provenance: c.image.provenance.clone(),
                    },
                    masks,
                    content_hash: hash,
                })
            }
            Err(reason) => out.rejected.push(reject(reason)),
        }
    }
    out.rejected.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    Ok(out)
}

/// Earliest-tier failure among the image's masks, or the checked masks.
fn check_masks(
    c: &Candidate<'_>,
    rasters: Vec<Result<MaskRaster, String>>,
    width: u32,
    height: u32,
) -> Result<Vec<LabelMask>, RejectReason> {
    if c.masks.is_empty() {
        return Err(RejectReason::NoMask);
    }
    let source = |m: &MaskEntry| format!("{}/{}", c.dataset.name, m.rel);
    let mut ok = Vec::with_capacity(rasters.len());
    for (m, r) in c.masks.iter().zip(rasters) {
        match r {
            Ok(r) => ok.push((source(m), r)),
            Err(reason) => {
                return Err(RejectReason::Unreadable {
                    file: source(m),
                    reason,
                })
            }
        }
    }
    if let Some((src, r)) = ok.iter().find(|(_, r)| r.width != width || r.height != height) {
        return Err(RejectReason::DimensionMismatch {
            mask: src.clone(),
            image_size: [width, height],
            mask_size: [r.width, r.height],
        });
    }
    ok.into_iter()
        .map(|(src, r)| {
            LabelMask::from_raster(r, &c.dataset.value_map, src.clone()).map_err(|e| match e {
                IngestError::UnknownLabelValue { value } => RejectReason::UndefinedMaskValue { mask: src, value },
                other => RejectReason::Unreadable {
                    file: src,
                    reason: other.to_string(),
                },
            })
        })
        .collect()
}
