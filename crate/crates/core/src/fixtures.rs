//! Seeded synthetic corpora.
//!
//! `standard` writes a small multi-modality tree exercising every ingest path
//! (NIfTI volumes with label volumes, flat and per-image mask layouts, a
//! manifest-listed dataset), a handful of planted defects, feature matrices
//! for `ground-score`, and a prediction file for `eval`.
//!
//! `qc1000` writes 1,000 single-dataset samples with a fixed number of planted
//! defects: 7 unreadable images, 13 images without a mask, 21 masks whose only
//! region is below the area threshold, and 4 masks using a label outside the
//! taxonomy.
//!
//! Output bytes depend only on the profile and the seed.

use std::io::Write as _;
use std::path::Path;

use flate2::write::GzEncoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::eval::{write_predictions, Detection};
use crate::export::CocoDocument;
use crate::geometry::BBox;
use crate::grounding::{build_prompt, tokenize_prompt, write_matrix, FeatureDtype, Matrix};
use crate::ingest::nifti::{write_volume, Volume, VoxelData};
use crate::ingest::raster::{encode_image, encode_mask_raster, MaskRaster, Raster};
use crate::ingest::Manifest;
use crate::pipeline::Pipeline;
use crate::qc::QcOptions;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Standard,
    Qc1000,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Standard => "standard",
            Profile::Qc1000 => "qc1000",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(Profile::Standard),
            "qc1000" => Ok(Profile::Qc1000),
            _ => Err(format!("unknown profile {s:?} (expected standard or qc1000)")),
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "medground.toml";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const GROUND_CONCEPTS: [&str; 3] = ["liver", "spleen", "right kidney"];

pub const QC1000_TOTAL: usize = 1000;
pub const QC1000_UNREADABLE: usize = 7;
pub const QC1000_UNPAIRED: usize = 13;
pub const QC1000_BELOW_AREA: usize = 21;
pub const QC1000_UNDEFINED: usize = 4;

fn write(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn png_error(e: String) -> Error {
    Error::Config(format!("fixture encoding: {e}"))
}

struct Canvas {
    w: u32,
    h: u32,
    values: Vec<u16>,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Canvas {
            w,
            h,
            values: vec![0; (w * h) as usize],
        }
    }

    fn rect(&mut self, x: u32, y: u32, rw: u32, rh: u32, v: u16) {
        for yy in y..(y + rh).min(self.h) {
            for xx in x..(x + rw).min(self.w) {
                self.values[(yy * self.w + xx) as usize] = v;
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, v: u16) {
        for yy in 0..self.h {
            for xx in 0..self.w {
                let dx = (xx as f64 + 0.5 - cx) / rx;
                let dy = (yy as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.values[(yy * self.w + xx) as usize] = v;
                }
            }
        }
    }

    fn random_blob(&mut self, rng: &mut ChaCha8Rng, v: u16) {
        let (w, h) = (self.w as f64, self.h as f64);
        let rx = rng.random_range(0.12..0.25) * w;
        let ry = rng.random_range(0.12..0.25) * h;
        let cx = rng.random_range(rx..w - rx);
        let cy = rng.random_range(ry..h - ry);
        self.ellipse(cx, cy, rx, ry, v);
    }

    fn mask_png(&self) -> Result<Vec<u8>, Error> {
        encode_mask_raster(&MaskRaster {
            width: self.w,
            height: self.h,
            values: self.values.clone(),
        })
        .map_err(png_error)
    }

    /// Gray image whose intensity follows the labels, with per-pixel noise.
    fn image(&self, rng: &mut ChaCha8Rng, channels: u8) -> Raster {
        let mut data = Vec::with_capacity(self.values.len() * channels as usize);
        for &v in &self.values {
            let base = 30u32 + 50 * v.min(4) as u32 + rng.random_range(0..40u32);
            for c in 0..channels {
                data.push((base + 7 * c as u32).min(255) as u8);
            }
        }
        Raster {
            width: self.w,
            height: self.h,
            channels,
            bit_depth: 8,
            data,
        }
    }
}

fn image_png(r: &Raster) -> Result<Vec<u8>, Error> {
    encode_image(r).map_err(png_error)
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(bytes).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

fn ct_volumes(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> (Volume, Volume) {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u8; nx * ny * nz];
    let organs = [
        (1u8, 0.35, 0.45, 0.25, 0.3),
        (2u8, 0.72, 0.40, 0.14, 0.18),
        (3u8, 0.62, 0.75, 0.12, 0.12),
    ];
    let jitter: Vec<(f64, f64)> = organs
        .iter()
        .map(|_| (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
        .collect();
    for z in 0..nz {
        let zf = (z as f64 + 0.5) / nz as f64 - 0.5;
        for y in 0..ny {
            for x in 0..nx {
                let (xf, yf) = ((x as f64 + 0.5) / nx as f64, (y as f64 + 0.5) / ny as f64);
                for (&(v, cx, cy, rx, ry), &(jx, jy)) in organs.iter().zip(&jitter) {
                    let dx = (xf - cx - jx) / rx;
                    let dy = (yf - cy - jy) / ry;
                    let dz = zf / 0.6;
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        labels[x + nx * (y + ny * z)] = v;
                    }
                }
            }
        }
    }
    let image: Vec<i16> = labels
        .iter()
        .map(|&l| -200 + 120 * l as i16 + rng.random_range(-30..30i16))
        .collect();
    (
        Volume::new(dims, VoxelData::I16(image)).expect("dims match"),
        Volume::new(dims, VoxelData::U8(labels)).expect("dims match"),
    )
}

const STANDARD_MANIFEST: &str = r#"version = 1

[[dataset]]
name = "synth_ct"
modality = "CT"
root = "datasets/synth_ct"
pairing = "filename-stem"
volumes = "volumes"
volume_labels = "labels"
axes = [0, 1, 2]

[dataset.value_map]
1 = "Hepar"
2 = "Spleen organ"
3 = "Kidney_R"

[[dataset]]
name = "synth_mri"
modality = "MRI"
root = "datasets/synth_mri"
pairing = "filename-stem"
images = "images"
masks = "masks"

[dataset.value_map]
1 = "Brain"
2 = "tumor core"
3 = "Peritumoral-Edema"
7 = "unlabelled structure"

[[dataset]]
name = "synth_xray"
modality = "X-ray"
root = "datasets/synth_xray"
pairing = "filename-stem"
images = "images"
masks = "masks"

[dataset.value_map]
1 = "Lungs"
2 = "Heart"

[[dataset]]
name = "synth_us"
modality = "Ultrasound"
root = "datasets/synth_us"
pairing = "manifest-listed"
images = "images"

[dataset.value_map]
1 = "Thyroid"

[[dataset.pairs]]
image = "images/us_000.png"
masks = ["annotations/us_000_thyroid.png"]

[[dataset.pairs]]
image = "images/us_001.png"
masks = ["annotations/us_001_thyroid.png"]

[[dataset.pairs]]
image = "images/us_002.png"
masks = ["annotations/us_002_thyroid.png"]

[[dataset.pairs]]
image = "images/us_003.png"
masks = ["annotations/us_002_thyroid.png"]
"#;

const STANDARD_CONFIG: &str = r#"manifest = "manifest.toml"
min_area_fraction = 0.015
connectivity = 8
bbox_mode = "per-component"
embed_rle = false
"#;

fn standard(out: &Path, rng: &mut ChaCha8Rng) -> Result<(), Error> {
    write(&out.join(MANIFEST_FILE), STANDARD_MANIFEST.as_bytes())?;
    write(&out.join(CONFIG_FILE), STANDARD_CONFIG.as_bytes())?;

    let ct = out.join("datasets/synth_ct");
    for (i, dims) in [[24, 20, 6], [20, 24, 5]].into_iter().enumerate() {
        let (img, lbl) = ct_volumes(rng, dims);
        let name = format!("case{:02}", i + 1);
        let (ib, lb) = (write_volume(&img), write_volume(&lbl));
        if i == 0 {
            write(&ct.join(format!("volumes/{name}.nii.gz")), &gzip(&ib))?;
            write(&ct.join(format!("labels/{name}.nii.gz")), &gzip(&lb))?;
        } else {
            write(&ct.join(format!("volumes/{name}.nii")), &ib)?;
            write(&ct.join(format!("labels/{name}.nii")), &lb)?;
        }
    }

    // flat masks: <stem>.png plus optional <stem>__<part>.png
    let mri = out.join("datasets/synth_mri");
    for i in 0..8 {
        let stem = format!("mri_{i:03}");
        let mut c = Canvas::new(48, 48);
        c.random_blob(rng, 1);
        c.random_blob(rng, 2);
        if i == 5 {
            c.random_blob(rng, 7);
        }
        write(&mri.join(format!("images/{stem}.png")), &image_png(&c.image(rng, 1))?)?;
        if i == 6 {
            continue;
        }
        write(&mri.join(format!("masks/{stem}.png")), &c.mask_png()?)?;
        if i % 3 == 0 {
            let mut e = Canvas::new(48, 48);
            e.random_blob(rng, 3);
            write(&mri.join(format!("masks/{stem}__edema.png")), &e.mask_png()?)?;
        }
    }

    // one directory of masks per image
    let xr = out.join("datasets/synth_xray");
    for i in 0..6 {
        let stem = format!("cxr_{i:03}");
        let mut lungs = Canvas::new(40, 40);
        lungs.ellipse(12.0, 20.0, 6.0 + rng.random_range(0.0..2.0), 12.0, 1);
        lungs.ellipse(28.0, 20.0, 6.0 + rng.random_range(0.0..2.0), 12.0, 1);
        let mut heart = Canvas::new(40, 40);
        heart.ellipse(22.0, 26.0, 5.0, 5.0 + rng.random_range(0.0..2.0), 2);
        let mut both = Canvas::new(40, 40);
        for (k, v) in both.values.iter_mut().enumerate() {
            *v = lungs.values[k].max(heart.values[k]);
        }
        write(&xr.join(format!("images/{stem}.png")), &image_png(&both.image(rng, 3))?)?;
        write(&xr.join(format!("masks/{stem}/lungs.png")), &lungs.mask_png()?)?;
        write(&xr.join(format!("masks/{stem}/heart.png")), &heart.mask_png()?)?;
    }

    // listed pairs; us_003 duplicates us_002's pixels
    let us = out.join("datasets/synth_us");
    let mut last = None;
    for i in 0..4 {
        let name = format!("us_{i:03}");
        let (img, mask) = if i == 3 {
            last.clone().expect("previous image")
        } else {
            let mut c = Canvas::new(32, 32);
            c.random_blob(rng, 1);
            (image_png(&c.image(rng, 1))?, c.mask_png()?)
        };
        write(&us.join(format!("images/{name}.png")), &img)?;
        if i < 3 {
            write(&us.join(format!("annotations/{name}_thyroid.png")), &mask)?;
        }
        last = Some((img, mask));
    }

    // grounding features: shared token side, one region file per modality
    let prompt = build_prompt(&GROUND_CONCEPTS).expect("valid concepts");
    let spans = tokenize_prompt(&prompt, None);
    let d = 8;
    let random = |rng: &mut ChaCha8Rng, r: usize| {
        let data = (0..r * d).map(|_| (rng.random_range(-1.0..1.0f64) * 1e4).round() / 1e4).collect();
        Matrix::new(r, d, data).expect("shape")
    };
    let feats = out.join("features");
    std::fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    write_matrix(&feats.join("tokens.mgft"), &random(rng, spans.token_count()), FeatureDtype::F32)?;
    for m in ["CT", "MRI"] {
        write_matrix(&feats.join(format!("regions_{m}.mgft")), &random(rng, 5), FeatureDtype::F32)?;
    }
    write(&feats.join("concepts.txt"), format!("{}\n", GROUND_CONCEPTS.join("\n")).as_bytes())?;
    let boxes: Vec<[f64; 4]> = (0..5)
        .map(|_| {
            let (x, y) = (rng.random_range(0..16) as f64, rng.random_range(0..16) as f64);
            [x, y, rng.random_range(4..16) as f64, rng.random_range(4..16) as f64]
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&boxes).expect("boxes serialize");
    text.push('\n');
    write(&feats.join("boxes.json"), text.as_bytes())?;

    let manifest = Manifest::load(&out.join(MANIFEST_FILE))?;
    let (doc, _) = Pipeline::new(manifest, Taxonomy::starter(), QcOptions::default()).export()?;
    write_predictions(&out.join(PREDICTIONS_FILE), &predictions_from_gt(&doc, rng))?;
    Ok(())
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Jittered copies of most ground-truth boxes plus low-confidence false
/// positives; every box stays inside its image.
pub fn predictions_from_gt(doc: &CocoDocument, rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let images = doc.image_by_id();
    let mut out = Vec::new();
    for a in &doc.annotations {
        if rng.random_bool(0.1) {
            continue;
        }
        let img = images[&a.image_id];
        let [x, y, w, h] = a.bbox;
        let j = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-0.12..0.12) * s;
        let nx = (x + j(rng, w)).clamp(0.0, img.width as f64 - 1.0).round();
        let ny = (y + j(rng, h)).clamp(0.0, img.height as f64 - 1.0).round();
        let nw = (w + j(rng, w)).round().clamp(1.0, img.width as f64 - nx);
        let nh = (h + j(rng, h)).round().clamp(1.0, img.height as f64 - ny);
        out.push(Detection {
            id: None,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: BBox::new(nx, ny, nw, nh),
            confidence: round3(rng.random_range(0.45..1.0)),
        });
    }
    let used: Vec<u64> = {
        let mut v: Vec<u64> = doc.annotations.iter().map(|a| a.category_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if !used.is_empty() {
        for img in &doc.images {
            if rng.random_bool(0.3) {
                let w = rng.random_range(2..=img.width.max(2) / 2) as f64;
                let h = rng.random_range(2..=img.height.max(2) / 2) as f64;
                out.push(Detection {
                    id: None,
                    image_id: img.id,
                    category_id: used[rng.random_range(0..used.len())],
                    bbox: BBox::new(
                        rng.random_range(0..=(img.width as u64 - w as u64)) as f64,
                        rng.random_range(0..=(img.height as u64 - h as u64)) as f64,
                        w,
                        h,
                    ),
                    confidence: round3(rng.random_range(0.01..0.5)),
                });
            }
        }
    }
    for (i, d) in out.iter_mut().enumerate() {
        d.id = Some(i as u64 + 1);
    }
    out
}

const QC1000_MANIFEST: &str = r#"version = 1

[[dataset]]
name = "qc1000"
modality = "CT"
root = "qc1000"
pairing = "filename-stem"
images = "images"
masks = "masks"

[dataset.value_map]
1 = "liver"
2 = "spleen"
3 = "kidney r"
9 = "unnamed tissue"
"#;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Defect {
    None,
    Unreadable,
    Unpaired,
    BelowArea,
    Undefined,
}

fn qc1000(out: &Path, rng: &mut ChaCha8Rng) -> Result<(), Error> {
    write(&out.join(MANIFEST_FILE), QC1000_MANIFEST.as_bytes())?;
    let mut plan = vec![Defect::None; QC1000_TOTAL];
    let mut cursor = 0;
    for (kind, n) in [
        (Defect::Unreadable, QC1000_UNREADABLE),
        (Defect::Unpaired, QC1000_UNPAIRED),
        (Defect::BelowArea, QC1000_BELOW_AREA),
        (Defect::Undefined, QC1000_UNDEFINED),
    ] {
        plan[cursor..cursor + n].fill(kind);
        cursor += n;
    }
    plan.shuffle(rng);
    let root = out.join("qc1000");
    for (i, kind) in plan.into_iter().enumerate() {
        let stem = format!("img_{i:04}");
        let mut c = Canvas::new(32, 32);
        match kind {
            Defect::BelowArea => {
                // 9 px of 1024 ≈ 0.9%
                c.rect(rng.random_range(0..29), rng.random_range(0..29), 3, 3, 1);
            }
            Defect::Undefined => {
                c.rect(4, 4, 12, 12, 9);
                c.rect(18, 18, 10, 10, 1);
            }
            _ => {
                for v in 1..=rng.random_range(1..=3u16) {
                    let (w, h) = (rng.random_range(6..12), rng.random_range(6..12));
                    c.rect(rng.random_range(0..32 - w), rng.random_range(0..32 - h), w, h, v);
                }
            }
        }
        let mut img = c.image(rng, 1);
        img.data[0] = (i % 256) as u8;
        img.data[1] = (i / 256) as u8;
        let bytes = if kind == Defect::Unreadable {
            format!("corrupt image {i}\n").into_bytes()
        } else {
            image_png(&img)?
        };
        write(&root.join(format!("images/{stem}.png")), &bytes)?;
        if kind != Defect::Unpaired {
            write(&root.join(format!("masks/{stem}.png")), &c.mask_png()?)?;
        }
    }
    Ok(())
}

/// Write the fixture tree for `profile` under `out`.
pub fn generate(out: &Path, profile: Profile, seed: u64) -> Result<(), Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match profile {
        Profile::Standard => standard(out, &mut rng),
        Profile::Qc1000 => qc1000(out, &mut rng),
    }
}
