//! Dataset manifest.
//!
//! A TOML document with one `[[dataset]]` table per source corpus:
//!
//! ```toml
//! version = 1
//!
//! [[dataset]]
//! name = "synth_ct"           # identifier recorded on every image
//! modality = "CT"
//! root = "datasets/synth_ct"  # relative to the manifest's directory
//! pairing = "filename-stem"   # or "manifest-listed"
//! images = "images"           # 2D image directory under root (optional)
//! masks = "masks"             # 2D mask directory under root (optional)
//! volumes = "volumes"         # NIfTI image volumes (optional)
//! volume_labels = "labels"    # NIfTI label volumes, same file names (optional)
//! axes = [0, 1, 2]            # slicing axes (default: all three)
//!
//! [dataset.value_map]         # mask value -> raw label string
//! 1 = "Liver"
//! 2 = "Left Kidney"
//!
//! [[dataset.pairs]]           # only for pairing = "manifest-listed"
//! image = "images/a.png"
//! masks = ["masks/a_liver.png"]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::IngestError;

use super::mask::ValueMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingRule {
    FilenameStem,
    ManifestListed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListedPair {
    pub image: PathBuf,
    pub masks: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub modality: String,
    #[serde(default)]
    pub root: PathBuf,
    pub pairing: PairingRule,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub masks: Option<PathBuf>,
    #[serde(default)]
    pub volumes: Option<PathBuf>,
    #[serde(default)]
    pub volume_labels: Option<PathBuf>,
    #[serde(default)]
    pub axes: Option<Vec<usize>>,
    #[serde(default, with = "value_map_keys")]
    pub value_map: ValueMap,
    #[serde(default)]
    pub pairs: Vec<ListedPair>,
}

/// TOML keys are strings; mask values are integers.
mod value_map_keys {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &ValueMap, s: S) -> Result<S::Ok, S::Error> {
        let as_str: BTreeMap<String, &String> = m.iter().map(|(k, v)| (k.to_string(), v)).collect();
        as_str.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ValueMap, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let key: u16 = k
                    .trim()
                    .parse()
                    .map_err(|_| D::Error::custom(format!("value_map key {k:?} is not a u16")))?;
                if key == 0 {
                    return Err(D::Error::custom("value_map key 0 is reserved for background"));
                }
                Ok((key, v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<DatasetSpec>,
    /// Directory the manifest was loaded from; dataset roots resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_version() -> u32 {
    1
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IngestError> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| IngestError::Manifest(e.to_string()))?;
        if m.version != 1 {
            return Err(IngestError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        m.base_dir = base_dir.to_path_buf();
        let mut names = std::collections::BTreeSet::new();
        for d in &m.datasets {
            if d.name.is_empty() || d.name.contains('/') {
                return Err(IngestError::Manifest(format!("invalid dataset name {:?}", d.name)));
            }
            if !names.insert(d.name.clone()) {
                return Err(IngestError::Manifest(format!("duplicate dataset {:?}", d.name)));
            }
            if let Some(axes) = &d.axes {
                if let Some(&bad) = axes.iter().find(|&&a| a > 2) {
                    return Err(IngestError::InvalidAxis(bad));
                }
            }
            if d.pairing == PairingRule::ManifestListed && d.pairs.is_empty() {
                return Err(IngestError::Manifest(format!(
                    "dataset {:?} uses manifest-listed pairing but lists no pairs",
                    d.name
                )));
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.into(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn dataset_root(&self, d: &DatasetSpec) -> PathBuf {
        self.base_dir.join(&d.root)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

impl DatasetSpec {
    pub fn slicing_axes(&self) -> Vec<usize> {
        let mut axes = self.axes.clone().unwrap_or_else(|| vec![0, 1, 2]);
        axes.sort_unstable();
        axes.dedup();
        axes
    }
}
