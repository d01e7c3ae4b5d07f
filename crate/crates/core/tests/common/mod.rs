#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medground::eval::Detection;
use medground::export::{CocoDocument, CorpusEntry, GroundingCorpus};
use medground::geometry::BBox;
use medground::rle::Rle;
use medground::sample::{ImageRecord, MaskRef, RegionAnnotation, SliceProvenance};
use medground::taxonomy::Taxonomy;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_medground");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MEDGROUND_CONFIG")
        .env_remove("MEDGROUND_WORKERS")
        .output()
        .expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Standard fixture tree plus an exported document under `<dir>/out`.
pub fn exported_tree(dir: &Path) -> PathBuf {
    run_ok(&["gen-fixtures", "--out", p(dir), "--seed", "7"]);
    let out = dir.join("out");
    run_ok(&[
        "--config",
        p(&dir.join("medground.toml")),
        "export",
        "--out",
        p(&out),
    ]);
    out
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Run every subcommand with the given worker count; return stdout, exit
/// code and written files keyed by subcommand.
pub type RunRecord = (i32, Vec<u8>, BTreeMap<String, Vec<u8>>);

pub fn all_subcommands(tree: &Path, workers: &str, scratch: &Path) -> BTreeMap<String, RunRecord> {
    let cfg = tree.join("medground.toml");
    let gt = tree.join("out/grounding.json");
    let feats = tree.join("features");
    let mut results = BTreeMap::new();
    let mut go = |name: &str, args: Vec<String>| {
        let out_dir = scratch.join(name);
        std::fs::create_dir_all(&out_dir).unwrap();
        let mut full = vec!["--workers".to_string(), workers.to_string()];
        full.extend(args.into_iter().map(|a| a.replace("{OUT}", p(&out_dir))));
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        let out = run(&refs);
        results.insert(name.to_string(), (out.status.code().unwrap(), out.stdout, tree_bytes(&out_dir)));
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    go("ingest", s(&["--config", p(&cfg), "ingest", "--out", "{OUT}"]));
    go("qc", s(&["--config", p(&cfg), "qc", "--out", "{OUT}"]));
    go("export", s(&["--config", p(&cfg), "export", "--out", "{OUT}", "--embed-rle"]));
    go("stats", s(&["stats", "--coco", p(&gt), "--format", "json", "-o", "{OUT}/stats.json"]));
    go("stats-text", s(&["stats", "--coco", p(&gt)]));
    go(
        "ground-score",
        s(&[
            "ground-score",
            "--regions",
            p(&feats.join("regions_CT.mgft")),
            "--tokens",
            p(&feats.join("tokens.mgft")),
            "--concepts-file",
            p(&feats.join("concepts.txt")),
            "--boxes",
            p(&feats.join("boxes.json")),
            "--aggregate",
            "max",
            "-o",
            "{OUT}/scores.json",
        ]),
    );
    go(
        "eval",
        s(&["eval", "--gt", p(&gt), "--pred", p(&tree.join("predictions.json")), "--format", "json", "-o", "{OUT}/eval.json"]),
    );
    go("eval-text", s(&["eval", "--gt", p(&gt), "--pred", &format!("mine={}", p(&tree.join("predictions.json")))]));
    go("taxonomy", s(&["taxonomy", "check", "--manifest", p(&tree.join("manifest.toml"))]));
    go("gen-fixtures", s(&["gen-fixtures", "--out", "{OUT}", "--seed", "7"]));
    go("gen-fixtures-qc1000", s(&["gen-fixtures", "--out", "{OUT}", "--seed", "7", "--profile", "qc1000"]));
    results
}


/// Outputs of [`all_subcommands`] at both worker counts, or the first difference.
pub fn compare_worker_counts(tree: &Path, scratch: &Path) -> Result<usize, String> {
    // same scratch path for both runs: some commands echo their output paths
    let one = all_subcommands(tree, "1", scratch);
    std::fs::remove_dir_all(scratch).unwrap();
    let eight = all_subcommands(tree, "8", scratch);
    for (name, a) in &one {
        let b = &eight[name];
        if a != b {
            return Err(format!("{name} differs between 1 and 8 workers"));
        }
    }
    Ok(one.len())
}

// ---- geometry oracles ----

/// Connected components by union-find; each returned set is sorted.
pub fn components_union_find(w: usize, h: usize, values: &[u16], eight: bool) -> Vec<(u16, BTreeSet<(u32, u32)>)> {
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..values.len()).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if values[i] == 0 {
                continue;
            }
            let mut nbrs = vec![];
            if x + 1 < w {
                nbrs.push(i + 1);
            }
            if y + 1 < h {
                nbrs.push(i + w);
                if eight && x + 1 < w {
                    nbrs.push(i + w + 1);
                }
                if eight && x > 0 {
                    nbrs.push(i + w - 1);
                }
            }
            for n in nbrs {
                if values[n] == values[i] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, n));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, (u16, BTreeSet<(u32, u32)>)> = BTreeMap::new();
    for (i, &v) in values.iter().enumerate() {
        if v != 0 {
            let r = find(&mut parent, i);
            groups
                .entry(r)
                .or_insert_with(|| (v, BTreeSet::new()))
                .1
                .insert(((i % w) as u32, (i / w) as u32));
        }
    }
    groups.into_values().collect()
}

/// Pixel cells covered by an integral box.
pub fn box_cells(b: &BBox) -> BTreeSet<(i64, i64)> {
    let mut s = BTreeSet::new();
    for y in b.y as i64..(b.y + b.h) as i64 {
        for x in b.x as i64..(b.x + b.w) as i64 {
            s.insert((x, y));
        }
    }
    s
}

pub fn pixel_set_iou(a: &BBox, b: &BBox) -> f64 {
    let (ca, cb) = (box_cells(a), box_cells(b));
    let inter = ca.intersection(&cb).count();
    let union = ca.union(&cb).count();
    inter as f64 / union as f64
}

// ---- evaluation oracle ----

/// Integral box IoU as an exact fraction `(inter, union)`.
fn iou_fraction(a: &BBox, b: &BBox) -> (i64, i64) {
    let (ca, cb) = (box_cells(a), box_cells(b));
    (ca.intersection(&cb).count() as i64, ca.union(&cb).count() as i64)
}

/// AP over 101 recall points by direct enumeration of the PR curve.
pub fn oracle_ap(labels: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut points = vec![];
    let mut tp = 0usize;
    for (k, &l) in labels.iter().enumerate() {
        tp += l as usize;
        points.push((tp, k + 1));
    }
    let mut sum = 0.0;
    for j in 0..=100usize {
        let best = points
            .iter()
            .filter(|(tp, _)| tp * 100 >= j * n_gt)
            .map(|&(tp, n)| tp as f64 / n as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// Greedy match at an IoU threshold of `thr_pct` percent; returns labels in
/// global confidence order.
pub fn oracle_category_labels(
    gts: &[(u64, u64, BBox)],
    dets: &[(u64, u64, BBox, f64)],
    thr_pct: i64,
) -> (Vec<bool>, usize) {
    let mut order: Vec<&(u64, u64, BBox, f64)> = dets.iter().collect();
    order.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)));
    let mut used: BTreeSet<u64> = BTreeSet::new();
    let mut labels = vec![];
    for d in order {
        let mut best: Option<(i64, i64, u64)> = None;
        for g in gts.iter().filter(|g| g.1 == d.1 && !used.contains(&g.0)) {
            let (i, u) = iou_fraction(&d.2, &g.2);
            if i * 100 < thr_pct * u {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bu, bid)) => i * bu > bi * u || (i * bu == bi * u && g.0 < bid),
            };
            if better {
                best = Some((i, u, g.0));
            }
        }
        match best {
            Some((_, _, gid)) => {
                used.insert(gid);
                labels.push(true);
            }
            None => labels.push(false),
        }
    }
    (labels, gts.len())
}

/// Pooled AP and AP50 over categories with ground truth.
type OracleCell = (Vec<(u64, u64, BBox)>, Vec<(u64, u64, BBox, f64)>);

pub fn oracle_pooled(doc: &CocoDocument, dets: &[Detection]) -> (f64, f64) {
    let mut cats: BTreeMap<u64, OracleCell> = BTreeMap::new();
    for a in &doc.annotations {
        cats.entry(a.category_id).or_default().0.push((a.id, a.image_id, BBox::from(a.bbox)));
    }
    for d in dets {
        if let Some(c) = cats.get_mut(&d.category_id) {
            c.1.push((d.id.unwrap(), d.image_id, d.bbox, d.confidence));
        }
    }
    if cats.is_empty() {
        return (0.0, 0.0);
    }
    let (mut ap, mut ap50) = (0.0, 0.0);
    for (gts, ds) in cats.values() {
        let per: Vec<f64> = (0..10)
            .map(|t| {
                let (labels, n) = oracle_category_labels(gts, ds, 50 + 5 * t);
                oracle_ap(&labels, n)
            })
            .collect();
        ap += per.iter().sum::<f64>() / 10.0;
        ap50 += per[0];
    }
    let n = cats.len() as f64;
    (ap / n, ap50 / n)
}

// ---- random corpora ----

fn int_box<R: Rng>(rng: &mut R, w: u32, h: u32) -> BBox {
    let x = rng.random_range(0..w);
    let y = rng.random_range(0..h);
    let bw = rng.random_range(1..=w - x);
    let bh = rng.random_range(1..=h - y);
    BBox::new(x as f64, y as f64, bw as f64, bh as f64)
}

/// Small eval instance: ground truth document and detections with ids.
pub fn random_eval_instance<R: Rng>(rng: &mut R) -> (CocoDocument, Vec<Detection>) {
    let tax = Taxonomy::starter();
    let labels: Vec<String> = tax.fine_labels().map(str::to_string).collect();
    let n_images = rng.random_range(1..=3);
    let n_cats = rng.random_range(1..=2);
    let cats: Vec<&String> = labels.choose_multiple(rng, n_cats).collect();
    let modalities = ["CT", "MRI"];
    let mut corpus = GroundingCorpus::default();
    for i in 0..n_images {
        let (w, h) = (16, 16);
        let n_gt = rng.random_range(0..=4);
        let annotations = (0..n_gt)
            .map(|k| annotation(cats.choose(rng).unwrap(), int_box(rng, w, h), k as u32))
            .collect();
        corpus.entries.push(CorpusEntry {
            image: image(&format!("img_{i}.png"), modalities.choose(rng).unwrap(), w, h, None),
            annotations,
        });
    }
    let doc = medground::export::export_coco(&corpus, &tax).unwrap();
    let cat_ids: HashMap<&str, u64> = doc.categories.iter().map(|c| (c.name.as_str(), c.id)).collect();
    let mut dets = vec![];
    for img in &doc.images {
        let n = rng.random_range(0..=6);
        for _ in 0..n {
            let gt_here: Vec<_> = doc.annotations.iter().filter(|a| a.image_id == img.id).collect();
            let (cat, bbox) = if !gt_here.is_empty() && rng.random_bool(0.6) {
                let a = gt_here.choose(rng).unwrap();
                let b = BBox::from(a.bbox);
                let jitter = |v: f64, lim: f64, r: &mut R| (v + r.random_range(-1..=1) as f64).clamp(0.0, lim);
                let x = jitter(b.x, 15.0, rng);
                let y = jitter(b.y, 15.0, rng);
                let w = jitter(b.w, 16.0 - x, rng).max(1.0);
                let h = jitter(b.h, 16.0 - y, rng).max(1.0);
                (a.category_id, BBox::new(x, y, w, h))
            } else {
                (cat_ids[cats.choose(rng).unwrap().as_str()], int_box(rng, 16, 16))
            };
            // coarse confidences so ties occur
            let conf = rng.random_range(0..=10) as f64 / 10.0;
            dets.push(Detection {
                id: Some(dets.len() as u64 + 1),
                image_id: img.id,
                category_id: cat,
                bbox,
                confidence: conf,
            });
        }
    }
    (doc, dets)
}

pub fn image(file_name: &str, modality: &str, w: u32, h: u32, prov: Option<SliceProvenance>) -> ImageRecord {
    ImageRecord {
        file_name: file_name.to_string(),
        source_dataset: file_name.split('/').next().unwrap().to_string(),
        modality: modality.to_string(),
        width: w,
        height: h,
        provenance: prov,
    }
}

pub fn annotation(label: &str, bbox: BBox, component: u32) -> RegionAnnotation {
    RegionAnnotation {
        label: label.to_string(),
        raw_label: label.to_uppercase(),
        bbox,
        pixel_count: (bbox.w * bbox.h) as u64,
        mask_ref: MaskRef {
            mask: "mask.png".into(),
            value: 1,
            component,
        },
        rle: None,
    }
}

/// Random corpus in canonical order, optionally with RLE masks and slice
/// provenance.
pub fn random_corpus<R: Rng>(rng: &mut R, tax: &Taxonomy) -> GroundingCorpus {
    let labels: Vec<&str> = tax.fine_labels().collect();
    let modalities = ["CT", "MRI", "X-ray", "Ultrasound"];
    let n = rng.random_range(0..=8);
    let mut names: BTreeSet<String> = BTreeSet::new();
    while names.len() < n {
        names.insert(format!("ds{}/img_{:03}.png", rng.random_range(0..3), rng.random_range(0..500)));
    }
    let entries = names
        .into_iter()
        .map(|name| {
            let (w, h) = (rng.random_range(1..=40), rng.random_range(1..=40));
            let prov = rng.random_bool(0.5).then(|| SliceProvenance {
                volume: format!("vol_{}", rng.random_range(0..4)),
                axis: rng.random_range(0..3),
                index: rng.random_range(0..50),
            });
            let k = rng.random_range(0..=5);
            let annotations = (0..k)
                .map(|c| {
                    let b = int_box(rng, w, h);
                    let mut a = annotation(labels.choose(rng).unwrap(), b, c);
                    a.mask_ref.value = rng.random_range(1..=9);
                    if rng.random_bool(0.3) {
                        let pixels: Vec<(u32, u32)> = box_cells(&b).into_iter().map(|(x, y)| (x as u32, y as u32)).collect();
                        a.rle = Some(Rle::from_pixels(w, h, &pixels));
                    }
                    a
                })
                .collect();
            CorpusEntry {
                image: image(&name, modalities.choose(rng).unwrap(), w, h, prov),
                annotations,
            }
        })
        .collect();
    GroundingCorpus { entries }
}

// ---- numerics ----

/// Relative error with the scale floored at 1e-5, so values below that are
/// compared to an absolute 1e-10.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}
