//! Pipeline configuration.
//!
//! A TOML file; every key is optional. Relative paths resolve against the
//! file's directory.
//!
//! ```toml
//! manifest = "fixtures/manifest.toml"
//! out = "build"
//! taxonomy = "taxonomy.txt"         # default: built-in starter table
//! min_area_fraction = 0.015
//! connectivity = 8                  # 4 or 8
//! bbox_mode = "per-component"       # or "per-mask"
//! embed_rle = false
//! axes = [0, 1, 2]                  # for datasets whose manifest omits axes
//! workers = 4                       # default: available cores
//! seed = 7
//! ```
//!
//! Each key can also be set through a `MEDGROUND_<KEY>` environment variable
//! or the matching command-line flag. Flags override the environment, which
//! overrides the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::Error;
use crate::geometry::Connectivity;
use crate::qc::{BoxMode, QcOptions, DEFAULT_MIN_AREA_FRACTION};

pub const ENV_PREFIX: &str = "MEDGROUND_";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub min_area_fraction: Option<f64>,
    pub connectivity: Option<u8>,
    pub bbox_mode: Option<BoxMode>,
    pub embed_rle: Option<bool>,
    pub axes: Option<Vec<usize>>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let mut c: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut c.manifest, &mut c.out, &mut c.taxonomy].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Fill unset keys from `other`.
    pub fn or(self, other: ConfigFile) -> ConfigFile {
        ConfigFile {
            manifest: self.manifest.or(other.manifest),
            out: self.out.or(other.out),
            taxonomy: self.taxonomy.or(other.taxonomy),
            min_area_fraction: self.min_area_fraction.or(other.min_area_fraction),
            connectivity: self.connectivity.or(other.connectivity),
            bbox_mode: self.bbox_mode.or(other.bbox_mode),
            embed_rle: self.embed_rle.or(other.embed_rle),
            axes: self.axes.or(other.axes),
            workers: self.workers.or(other.workers),
            seed: self.seed.or(other.seed),
        }
    }
}

/// Resolved settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub min_area_fraction: f64,
    pub connectivity: Connectivity,
    pub bbox_mode: BoxMode,
    pub embed_rle: bool,
    pub axes: Option<Vec<usize>>,
    pub workers: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::resolve(ConfigFile::default()).expect("defaults are valid")
    }
}

impl PipelineConfig {
    /// Apply defaults and range checks.
    pub fn resolve(c: ConfigFile) -> Result<Self, Error> {
        let connectivity = match c.connectivity {
            None => Connectivity::default(),
            Some(n) => Connectivity::from_neighbors(n)
                .ok_or_else(|| Error::Config(format!("connectivity must be 4 or 8, got {n}")))?,
        };
        if let Some(axes) = &c.axes {
            if axes.is_empty() || axes.iter().any(|&a| a > 2) {
                return Err(Error::Config(format!("axes must be a nonempty subset of 0..=2, got {axes:?}")));
            }
        }
        let workers = match c.workers {
            Some(0) => return Err(Error::Config("workers must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let cfg = PipelineConfig {
            manifest: c.manifest,
            out: c.out,
            taxonomy: c.taxonomy,
            min_area_fraction: c.min_area_fraction.unwrap_or(DEFAULT_MIN_AREA_FRACTION),
            connectivity,
            bbox_mode: c.bbox_mode.unwrap_or_default(),
            embed_rle: c.embed_rle.unwrap_or(false),
            axes: c.axes,
            workers,
            seed: c.seed.unwrap_or(DEFAULT_SEED),
        };
        cfg.qc_options().validate().map_err(Error::Config)?;
        Ok(cfg)
    }

    pub fn qc_options(&self) -> QcOptions {
        QcOptions {
            min_area_fraction: self.min_area_fraction,
            connectivity: self.connectivity,
            box_mode: self.bbox_mode,
            embed_rle: self.embed_rle,
        }
    }

    pub fn require_manifest(&self) -> Result<&Path, Error> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest given (--manifest or config `manifest`)".into()))
    }

    pub fn require_out(&self) -> Result<&Path, Error> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given (--out or config `out`)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_resolve() {
        let c = ConfigFile::parse(
            "manifest = \"m.toml\"\nmin_area_fraction = 0.02\nconnectivity = 4\nbbox_mode = \"per-mask\"\nworkers = 2\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(c.manifest.as_deref(), Some(Path::new("/cfg/m.toml")));
        let p = PipelineConfig::resolve(c).unwrap();
        assert_eq!(p.connectivity, Connectivity::Four);
        assert_eq!(p.bbox_mode, BoxMode::PerMask);
        assert_eq!((p.workers, p.seed), (2, DEFAULT_SEED));
    }

    #[test]
    fn precedence_by_merge() {
        let flags = ConfigFile {
            min_area_fraction: Some(0.03),
            ..Default::default()
        };
        let file = ConfigFile {
            min_area_fraction: Some(0.01),
            seed: Some(3),
            ..Default::default()
        };
        let p = PipelineConfig::resolve(flags.or(file)).unwrap();
        assert_eq!((p.min_area_fraction, p.seed), (0.03, 3));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ConfigFile::parse("bogus = 1", Path::new(".")).is_err());
        for c in [
            ConfigFile { connectivity: Some(6), ..Default::default() },
            ConfigFile { min_area_fraction: Some(1.5), ..Default::default() },
            ConfigFile { workers: Some(0), ..Default::default() },
            ConfigFile { axes: Some(vec![3]), ..Default::default() },
        ] {
            assert!(PipelineConfig::resolve(c).is_err());
        }
    }
}
