//! Reading source corpora: NIfTI volumes, PNG images and masks, manifests.

pub mod corpus;
pub mod manifest;
pub mod mask;
pub mod nifti;
pub mod raster;
pub mod volume;

pub use corpus::{pair_corpus, scan_dataset, scan_manifest, DatasetScan, Duplicate, Pairing};
pub use manifest::{DatasetSpec, Manifest, PairingRule};
pub use mask::{decode_label_mask, LabelMask, ValueMap};
pub use nifti::{parse_volume_header, read_volume, write_volume, Datatype, Volume, VolumeMeta, VoxelData};
pub use volume::{slice_volume, stack_slices, Slice};
