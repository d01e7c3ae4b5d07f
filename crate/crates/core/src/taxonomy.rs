//! Three-level label taxonomy: raw string → fine label → anatomical category
//! → body region.
//!
//! # File format
//!
//! ```text
//! medground-taxonomy v1
//!
//! [synonyms]
//! left hip = left hip joint
//!
//! [fine]
//! left hip joint = pelvis(hip)
//!
//! [categories]
//! pelvis(hip) = pelvis
//! ```
//!
//! The first line is the version header. Each section holds `key = value`
//! lines; `#` starts a comment line. Synonym and fine-label keys are
//! normalized on load (see [`normalize_label`]). The canonical serialization
//! emits the header, then the three sections in the order above with a blank
//! line before each, entries sorted by key, and a trailing newline.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::TaxonomyError;

pub const HEADER: &str = "medground-taxonomy v1";

/// Bundled starter table.
pub const STARTER: &str = include_str!("../data/taxonomy.txt");

/// Lowercase, map `_`/`-` to spaces, trim, and collapse runs of whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Harmonized {
    Fine(String),
    /// Normalized form of a string with no mapping.
    Unmapped(String),
}

impl Harmonized {
    pub fn fine(&self) -> Option<&str> {
        match self {
            Harmonized::Fine(s) => Some(s),
            Harmonized::Unmapped(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Taxonomy {
    synonyms: BTreeMap<String, String>,
    fine_to_category: BTreeMap<String, String>,
    category_to_region: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Rollup {
    pub categories: BTreeMap<String, u64>,
    pub regions: BTreeMap<String, u64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Synonyms,
    Fine,
    Categories,
}

impl Taxonomy {
    pub fn starter() -> Self {
        Taxonomy::parse(STARTER).expect("bundled taxonomy is valid")
    }

    pub fn from_maps(
        synonyms: BTreeMap<String, String>,
        fine_to_category: BTreeMap<String, String>,
        category_to_region: BTreeMap<String, String>,
    ) -> Result<Self, TaxonomyError> {
        let t = Taxonomy {
            synonyms: synonyms
                .into_iter()
                .map(|(k, v)| (normalize_label(&k), normalize_label(&v)))
                .collect(),
            fine_to_category: fine_to_category
                .into_iter()
                .map(|(k, v)| (normalize_label(&k), v.trim().to_string()))
                .collect(),
            category_to_region: category_to_region
                .into_iter()
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => {
                return Err(TaxonomyError::Parse {
                    line: 1,
                    message: format!("expected header {HEADER:?}"),
                })
            }
        }
        let mut section = None;
        let mut t = Taxonomy::default();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                section = Some(match line {
                    "[synonyms]" => Section::Synonyms,
                    "[fine]" => Section::Fine,
                    "[categories]" => Section::Categories,
                    other => {
                        return Err(TaxonomyError::Parse {
                            line: lineno,
                            message: format!("unknown section {other}"),
                        })
                    }
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TaxonomyError::Parse {
                line: lineno,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(TaxonomyError::Parse {
                    line: lineno,
                    message: "empty key or value".into(),
                });
            }
            let (map, key, value, what) = match section {
                None => {
                    return Err(TaxonomyError::Parse {
                        line: lineno,
                        message: "entry outside of a section".into(),
                    })
                }
                Some(Section::Synonyms) => (
                    &mut t.synonyms,
                    normalize_label(key),
                    normalize_label(value),
                    "synonym",
                ),
                Some(Section::Fine) => (
                    &mut t.fine_to_category,
                    normalize_label(key),
                    value.to_string(),
                    "fine label",
                ),
                Some(Section::Categories) => (
                    &mut t.category_to_region,
                    key.to_string(),
                    value.to_string(),
                    "category",
                ),
            };
            if let Some(prev) = map.get(&key) {
                return Err(TaxonomyError::Validation(format!(
                    "{what} {key:?} maps to both {prev:?} and {value:?} (line {lineno})"
                )));
            }
            map.insert(key, value);
        }
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        for (syn, fine) in &self.synonyms {
            if !self.fine_to_category.contains_key(fine) {
                return Err(TaxonomyError::Validation(format!(
                    "synonym {syn:?} targets unknown fine label {fine:?}"
                )));
            }
            if self.fine_to_category.contains_key(syn) && syn != fine {
                return Err(TaxonomyError::Validation(format!(
                    "synonym {syn:?} shadows a fine label"
                )));
            }
        }
        for (fine, cat) in &self.fine_to_category {
            if !self.category_to_region.contains_key(cat) {
                return Err(TaxonomyError::Validation(format!(
                    "fine label {fine:?} maps to undeclared category {cat:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (name, map) in [
            ("synonyms", &self.synonyms),
            ("fine", &self.fine_to_category),
            ("categories", &self.category_to_region),
        ] {
            out.push_str(&format!("\n[{name}]\n"));
            for (k, v) in map {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn harmonize(&self, raw: &str) -> Harmonized {
        let norm = normalize_label(raw);
        if self.fine_to_category.contains_key(&norm) {
            return Harmonized::Fine(norm);
        }
        match self.synonyms.get(&norm) {
            Some(fine) => Harmonized::Fine(fine.clone()),
            None => Harmonized::Unmapped(norm),
        }
    }

    pub fn is_fine_label(&self, label: &str) -> bool {
        self.fine_to_category.contains_key(label)
    }

    pub fn category_of(&self, fine: &str) -> Option<&str> {
        self.fine_to_category.get(fine).map(String::as_str)
    }

    pub fn region_of_category(&self, category: &str) -> Option<&str> {
        self.category_to_region.get(category).map(String::as_str)
    }

    pub fn region_of(&self, fine: &str) -> Option<&str> {
        self.category_of(fine).and_then(|c| self.region_of_category(c))
    }

    pub fn fine_labels(&self) -> impl Iterator<Item = &str> {
        self.fine_to_category.keys().map(String::as_str)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.category_to_region.keys().map(String::as_str)
    }

    pub fn regions(&self) -> BTreeSet<&str> {
        self.category_to_region.values().map(String::as_str).collect()
    }

    pub fn synonym_count(&self) -> usize {
        self.synonyms.len()
    }

    /// Roll per-fine-label counts up to categories and regions.
    pub fn rollup(&self, counts: &BTreeMap<String, u64>) -> Result<Rollup, TaxonomyError> {
        let mut r = Rollup::default();
        for (fine, &n) in counts {
            let cat = self
                .category_of(fine)
                .ok_or_else(|| TaxonomyError::UnknownFineLabel(fine.clone()))?;
            let region = self.region_of_category(cat).expect("validated at load");
            *r.categories.entry(cat.to_string()).or_default() += n;
            *r.regions.entry(region.to_string()).or_default() += n;
        }
        Ok(r)
    }
}

pub fn harmonize_label(raw: &str, tax: &Taxonomy) -> Harmonized {
    tax.harmonize(raw)
}

pub fn taxonomy_rollup(counts: &BTreeMap<String, u64>, tax: &Taxonomy) -> Result<Rollup, TaxonomyError> {
    tax.rollup(counts)
}
