use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::IngestError;

use super::raster::{decode_mask_raster, encode_mask_raster, MaskRaster};

/// Mask pixel value → raw label string, as declared by a dataset.
pub type ValueMap = BTreeMap<u16, String>;

/// A decoded label mask whose every nonzero value is named.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
    /// Entries for the values present in the mask only.
    pub value_map: ValueMap,
    /// Where the mask came from (relative path or slice name).
    pub source: String,
}

impl LabelMask {
    pub fn from_raster(
        raster: MaskRaster,
        value_map: &ValueMap,
        source: impl Into<String>,
    ) -> Result<Self, IngestError> {
        let present: BTreeSet<u16> = raster.values.iter().copied().filter(|&v| v != 0).collect();
        let mut used = ValueMap::new();
        for v in present {
            let name = value_map
                .get(&v)
                .ok_or(IngestError::UnknownLabelValue { value: v })?;
            used.insert(v, name.clone());
        }
        Ok(LabelMask {
            width: raster.width,
            height: raster.height,
            values: raster.values,
            value_map: used,
            source: source.into(),
        })
    }

    /// Distinct nonzero values with their raw label strings.
    pub fn labels(&self) -> impl Iterator<Item = (u16, &str)> {
        self.value_map.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.value_map.is_empty()
    }

    pub fn pixel_count(&self, value: u16) -> usize {
        self.values.iter().filter(|&&v| v == value).count()
    }

    pub fn to_raster(&self) -> MaskRaster {
        MaskRaster {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, String> {
        encode_mask_raster(&self.to_raster())
    }
}

pub fn decode_label_mask_bytes(
    bytes: &[u8],
    value_map: &ValueMap,
    source: &str,
) -> Result<LabelMask, IngestError> {
    let raster = decode_mask_raster(bytes).map_err(|reason| IngestError::DecodeFailure {
        path: source.into(),
        reason,
    })?;
    LabelMask::from_raster(raster, value_map, source)
}

pub fn decode_label_mask(path: &Path, value_map: &ValueMap) -> Result<LabelMask, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::DecodeFailure {
        path: path.into(),
        reason: e.to_string(),
    })?;
    decode_label_mask_bytes(&bytes, value_map, &path.to_string_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(u16, &str)]) -> ValueMap {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    fn png(values: Vec<u16>, w: u32, h: u32) -> Vec<u8> {
        encode_mask_raster(&MaskRaster {
            width: w,
            height: h,
            values,
        })
        .unwrap()
    }

    #[test]
    fn two_labels() {
        let bytes = png(vec![0, 1, 2, 2, 1, 0], 3, 2);
        let m = decode_label_mask_bytes(&bytes, &map(&[(1, "liver"), (2, "kidney")]), "m.png").unwrap();
        let labels: Vec<_> = m.labels().collect();
        assert_eq!(labels, vec![(1, "liver"), (2, "kidney")]);
        assert_eq!(m.pixel_count(2), 2);
    }

    #[test]
    fn unknown_value() {
        let bytes = png(vec![0, 3], 2, 1);
        let err = decode_label_mask_bytes(&bytes, &map(&[(1, "a"), (2, "b")]), "m").unwrap_err();
        assert!(matches!(err, IngestError::UnknownLabelValue { value: 3 }));
    }

    #[test]
    fn all_zero_is_empty() {
        let m = decode_label_mask_bytes(&png(vec![0; 4], 2, 2), &ValueMap::new(), "m").unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn garbage_is_decode_failure() {
        assert!(matches!(
            decode_label_mask_bytes(b"\x89PNG broken", &ValueMap::new(), "m"),
            Err(IngestError::DecodeFailure { .. })
        ));
    }
}
