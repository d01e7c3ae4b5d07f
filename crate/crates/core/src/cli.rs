//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 validation failure (including usage errors),
//! 2 I/O failure. Failures print one JSON record to stderr:
//! `{"error": "<code>", "kind": "validation" | "io", "message": "..."}`.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{ConfigFile, PipelineConfig};
use crate::error::{Error, ErrorKind, GroundingError};
use crate::eval::{evaluate_corpus, read_predictions, render_table};
use crate::export::{compute_stats, import_coco, CocoDocument};
use crate::fixtures::{self, Profile};
use crate::geometry::BBox;
use crate::grounding::{
    aggregate_phrase_probs, alignment_scores, build_prompt, read_matrix, tokenize_prompt, Aggregation, SubwordTable,
};
use crate::ingest::Manifest;
use crate::pipeline::{self, load_taxonomy, Pipeline};
use crate::qc::BoxMode;
use crate::taxonomy::Harmonized;

#[derive(Debug, Parser)]
#[command(name = "medground", version, about = "Build and evaluate medical grounding datasets")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "MEDGROUND_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "MEDGROUND_WORKERS")]
    workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv per-sample records).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoxModeArg {
    PerComponent,
    PerMask,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, env = "MEDGROUND_MANIFEST")]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "MEDGROUND_OUT")]
    out: Option<PathBuf>,
    /// Taxonomy file (default: built-in starter table).
    #[arg(long, env = "MEDGROUND_TAXONOMY")]
    taxonomy: Option<PathBuf>,
    #[arg(long, env = "MEDGROUND_MIN_AREA_FRACTION")]
    min_area_fraction: Option<f64>,
    /// 4 or 8.
    #[arg(long, env = "MEDGROUND_CONNECTIVITY")]
    connectivity: Option<u8>,
    #[arg(long, value_enum, env = "MEDGROUND_BBOX_MODE")]
    bbox_mode: Option<BoxModeArg>,
    /// Embed RLE masks in exported annotations.
    #[arg(long, env = "MEDGROUND_EMBED_RLE", num_args = 0..=1, default_missing_value = "true")]
    embed_rle: Option<bool>,
    /// Slicing axes for datasets whose manifest omits them.
    #[arg(long, value_delimiter = ',', env = "MEDGROUND_AXES")]
    axes: Option<Vec<usize>>,
}

impl PipelineArgs {
    fn overrides(&self) -> ConfigFile {
        ConfigFile {
            manifest: self.manifest.clone(),
            out: self.out.clone(),
            taxonomy: self.taxonomy.clone(),
            min_area_fraction: self.min_area_fraction,
            connectivity: self.connectivity,
            bbox_mode: self.bbox_mode.map(|b| match b {
                BoxModeArg::PerComponent => BoxMode::PerComponent,
                BoxModeArg::PerMask => BoxMode::PerMask,
            }),
            embed_rle: self.embed_rle,
            axes: self.axes.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan the manifest and write standardized volume slices.
    Ingest(PipelineArgs),
    /// Pair, validate and filter samples; print the QC report.
    Qc(PipelineArgs),
    /// Run QC and write the COCO-style grounding document.
    Export(PipelineArgs),
    /// Corpus statistics of an exported document.
    Stats {
        /// Grounding document (default: <out>/grounding.json).
        #[arg(long)]
        coco: Option<PathBuf>,
        #[arg(long, env = "MEDGROUND_OUT")]
        out: Option<PathBuf>,
        #[arg(long, env = "MEDGROUND_TAXONOMY")]
        taxonomy: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Write to this file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score regions against prompt phrases from feature files.
    GroundScore {
        /// Region features (N×d).
        #[arg(long)]
        regions: PathBuf,
        /// Token features (M×d).
        #[arg(long)]
        tokens: PathBuf,
        /// Prompt concept; repeat for several.
        #[arg(long = "concept")]
        concepts: Vec<String>,
        /// File with one concept per line.
        #[arg(long)]
        concepts_file: Option<PathBuf>,
        /// JSON object mapping a word to its subword pieces.
        #[arg(long)]
        subwords: Option<PathBuf>,
        /// JSON array of N region boxes `[x, y, w, h]`.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long, default_value = "mean")]
        aggregate: Aggregation,
        #[arg(long, default_value = "")]
        modality: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// AP / AP50 of prediction files against a grounding document.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        /// Prediction file, optionally `name=path`; repeat for several runs.
        #[arg(long = "pred", required = true)]
        preds: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Taxonomy utilities.
    Taxonomy {
        #[command(subcommand)]
        command: TaxonomyCommand,
    },
    /// Write a seeded synthetic fixture tree.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "MEDGROUND_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = "standard")]
        profile: Profile,
    },
}

#[derive(Debug, Subcommand)]
enum TaxonomyCommand {
    /// Validate a taxonomy and, with a manifest, that every raw label maps.
    Check {
        #[arg(long, env = "MEDGROUND_TAXONOMY")]
        taxonomy: Option<PathBuf>,
        #[arg(long, env = "MEDGROUND_MANIFEST")]
        manifest: Option<PathBuf>,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Error> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn file_config(path: Option<&Path>) -> Result<ConfigFile, Error> {
    path.map_or(Ok(ConfigFile::default()), ConfigFile::load)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

fn run_pipeline_command(cmd: &Command, cfg: &PipelineConfig) -> Result<(), Error> {
    let p = Pipeline::from_config(cfg)?;
    match cmd {
        Command::Ingest(_) => {
            let out = cfg.require_out()?;
            let summary = pipeline::write_slices(&p.scan()?, out)?;
            pipeline::write_file(&out.join(pipeline::INGEST_SUMMARY_FILE), summary.to_json().as_bytes())?;
            emit(None, &summary.to_text())
        }
        Command::Qc(_) => {
            let (_, report) = p.qc()?;
            if let Some(out) = &cfg.out {
                pipeline::write_qc_outputs(&report, out)?;
            }
            emit(None, &report.to_text())
        }
        Command::Export(_) => {
            let out = cfg.require_out()?;
            let (doc, report) = p.export()?;
            pipeline::write_qc_outputs(&report, out)?;
            let path = pipeline::write_coco(&doc, out)?;
            emit(
                None,
                &format!(
                    "wrote {} ({} images, {} annotations, {} categories)\n",
                    path.display(),
                    doc.images.len(),
                    doc.annotations.len(),
                    doc.categories.len()
                ),
            )
        }
        _ => unreachable!("not a pipeline command"),
    }
}

fn run_command(cli: Cli, file: ConfigFile) -> Result<(), Error> {
    match &cli.command {
        Command::Ingest(a) | Command::Qc(a) | Command::Export(a) => {
            let cfg = PipelineConfig::resolve(a.overrides().or(file))?;
            run_pipeline_command(&cli.command, &cfg)
        }
        Command::Stats {
            coco,
            out,
            taxonomy,
            format,
            output,
        } => {
            let merged = ConfigFile {
                out: out.clone(),
                taxonomy: taxonomy.clone(),
                ..Default::default()
            }
            .or(file);
            let path = match (coco, &merged.out) {
                (Some(c), _) => c.clone(),
                (None, Some(o)) => o.join(pipeline::COCO_FILE),
                (None, None) => return Err(Error::Config("stats needs --coco or --out".into())),
            };
            let tax = load_taxonomy(merged.taxonomy.as_deref())?;
            let corpus = import_coco(&CocoDocument::read(&path)?)?;
            let stats = compute_stats(&corpus, &tax)?;
            let text = match format {
                Format::Text => stats.to_text(),
                Format::Json => stats.to_json(),
            };
            emit(output.as_deref(), &text)
        }
        Command::GroundScore {
            regions,
            tokens,
            concepts,
            concepts_file,
            subwords,
            boxes,
            aggregate,
            modality,
            output,
        } => {
            let mut all = concepts.clone();
            if let Some(p) = concepts_file {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                all.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
            }
            let prompt = build_prompt(&all)?;
            let table: Option<SubwordTable> = subwords.as_deref().map(read_json).transpose()?;
            let f = read_matrix(regions)?;
            let t = read_matrix(tokens)?;
            let mut spans = tokenize_prompt(&prompt, table.as_ref());
            if t.rows() < spans.token_count() {
                return Err(GroundingError::ShapeMismatch(format!(
                    "token features have {} rows, prompt has {} tokens",
                    t.rows(),
                    spans.token_count()
                ))
                .into());
            }
            spans = spans.pad_to(t.rows());
            let boxes: Option<Vec<BBox>> = boxes.as_deref().map(read_json).transpose()?;
            if let Some(b) = &boxes {
                if b.len() != f.rows() {
                    return Err(GroundingError::ShapeMismatch(format!(
                        "{} boxes for {} regions",
                        b.len(),
                        f.rows()
                    ))
                    .into());
                }
            }
            let scores = alignment_scores(&f, &t)?;
            let probs = aggregate_phrase_probs(&scores, &spans, *aggregate)?;
            let regions: Vec<_> = (0..probs.rows())
                .map(|i| {
                    let row = probs.row(i);
                    let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                    json!({
                        "region": i,
                        "box": boxes.as_ref().map(|b| b[i]),
                        "phrase_probs": prompt.concepts.iter().zip(row).map(|(c, p)| json!({"phrase": c, "prob": p})).collect::<Vec<_>>(),
                        "best_phrase": prompt.concepts[best],
                    })
                })
                .collect();
            let doc = json!({
                "modality": modality,
                "prompt": prompt.text,
                "aggregation": aggregate,
                "span_map": spans,
                "regions": regions,
            });
            let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
            text.push('\n');
            emit(output.as_deref(), &text)
        }
        Command::Eval {
            gt,
            preds,
            format,
            output,
        } => {
            let gt_doc = CocoDocument::read(gt)?;
            let mut runs = Vec::new();
            for spec in preds {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let stem = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                        (stem, p)
                    }
                };
                let dets = read_predictions(&path)?;
                runs.push((name, evaluate_corpus(&dets, &gt_doc)?));
            }
            let text = match format {
                Format::Text => render_table(&runs),
                Format::Json => {
                    let v: serde_json::Map<String, serde_json::Value> = runs
                        .iter()
                        .map(|(n, r)| (n.clone(), serde_json::to_value(r).expect("result serializes")))
                        .collect();
                    let mut s = serde_json::to_string_pretty(&v).expect("json value serializes");
                    s.push('\n');
                    s
                }
            };
            emit(output.as_deref(), &text)
        }
        Command::Taxonomy {
            command: TaxonomyCommand::Check { taxonomy, manifest },
        } => {
            let merged = ConfigFile {
                taxonomy: taxonomy.clone(),
                manifest: manifest.clone(),
                ..Default::default()
            }
            .or(file);
            let tax = load_taxonomy(merged.taxonomy.as_deref())?;
            let mut text = String::new();
            if let Some(p) = merged.taxonomy.as_deref() {
                let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let canonical = raw == tax.serialize();
                text.push_str(&format!("canonical: {}\n", if canonical { "yes" } else { "no" }));
            }
            text.push_str(&format!(
                "fine labels: {}\ncategories: {}\nregions: {}\nsynonyms: {}\n",
                tax.fine_labels().count(),
                tax.categories().count(),
                tax.regions().len(),
                tax.synonym_count()
            ));
            let mut unmapped = Vec::new();
            if let Some(mp) = merged.manifest.as_deref() {
                let m = Manifest::load(mp)?;
                for d in &m.datasets {
                    for (v, raw) in &d.value_map {
                        if let Harmonized::Unmapped(_) = tax.harmonize(raw) {
                            unmapped.push(format!("{}:{v}={raw:?}", d.name));
                        }
                    }
                }
                text.push_str(&format!("unmapped manifest labels: {}\n", unmapped.len()));
                for u in &unmapped {
                    text.push_str(&format!("  {u}\n"));
                }
            }
            emit(None, &text)?;
            if unmapped.is_empty() {
                Ok(())
            } else {
                Err(crate::error::TaxonomyError::UnknownFineLabel(unmapped.join(", ")).into())
            }
        }
        Command::GenFixtures { out, seed, profile } => {
            let seed = seed.or(file.seed).unwrap_or(crate::config::DEFAULT_SEED);
            fixtures::generate(out, *profile, seed)?;
            emit(None, &format!("wrote {} fixtures to {} (seed {seed})\n", profile, out.display()))
        }
    }
}

fn error_record(code: &str, kind: &str, message: &str) -> String {
    json!({"error": code, "kind": kind, "message": message}).to_string()
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                kind => {
                    let _ = e.print();
                    let code = if kind == K::InvalidSubcommand { "UnknownSubcommand" } else { "Usage" };
                    eprintln!("{}", error_record(code, "validation", &kind.to_string()));
                    1
                }
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MEDGROUND_LOG")
        .format_timestamp(None)
        .try_init();

    let result = file_config(cli.config.as_deref()).and_then(|file| {
        let workers = match cli.workers.or(file.workers) {
            Some(0) => return Err(Error::Config("workers must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| run_command(cli, file))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Validation => ("validation", 1),
                ErrorKind::Io => ("io", 2),
            };
            eprintln!("{}", error_record(e.code(), kind, &e.to_string()));
            code
        }
    }
}
