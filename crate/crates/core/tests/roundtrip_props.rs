mod common;

use std::collections::BTreeMap;

use medground::export::{export_coco, import_coco, CocoDocument};
use medground::grounding::{decode_matrix, encode_matrix, FeatureDtype, Matrix};
use medground::ingest::mask::decode_label_mask_bytes;
use medground::ingest::raster::MaskRaster;
use medground::ingest::{read_volume, slice_volume, stack_slices, write_volume, LabelMask, ValueMap, Volume, VoxelData};
use medground::rle::Rle;
use medground::taxonomy::{normalize_label, Harmonized, Taxonomy, STARTER};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn volume() -> impl Strategy<Value = Volume> {
    (1usize..=7, 1usize..=7, 1usize..=7, 0u8..3).prop_flat_map(|(x, y, z, kind)| {
        let n = x * y * z;
        let data = match kind {
            0 => prop::collection::vec(any::<u8>(), n).prop_map(VoxelData::U8).boxed(),
            1 => prop::collection::vec(any::<i16>(), n).prop_map(VoxelData::I16).boxed(),
            _ => prop::collection::vec(-1e4f32..1e4, n).prop_map(VoxelData::F32).boxed(),
        };
        data.prop_map(move |d| Volume::new([x, y, z], d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn export_import_is_identity(seed in any::<u64>()) {
        let tax = Taxonomy::starter();
        let mut corpus = common::random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), &tax);
        let doc = export_coco(&corpus, &tax).unwrap();
        let reread = CocoDocument::from_json(&doc.to_json()).unwrap();
        prop_assert_eq!(&reread, &doc);
        corpus.sort();
        prop_assert_eq!(import_coco(&reread).unwrap(), corpus.clone());
        prop_assert_eq!(export_coco(&import_coco(&doc).unwrap(), &tax).unwrap().to_json(), doc.to_json());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn slicing_then_restacking_is_identity(vol in volume()) {
        for axis in 0..3 {
            let slices = slice_volume(&vol, axis).unwrap();
            prop_assert_eq!(slices.len(), vol.meta.dims[axis]);
            prop_assert_eq!(stack_slices(&slices, axis, vol.meta.dims).unwrap(), vol.data.clone());
        }
    }

    #[test]
    fn volume_file_roundtrip(vol in volume()) {
        prop_assert_eq!(read_volume(&write_volume(&vol)).unwrap(), vol);
    }
}

proptest! {
    #[test]
    fn label_mask_png_roundtrip(
        (w, h, values) in (1u32..=20, 1u32..=20, prop::sample::select(vec![9u16, 600])).prop_flat_map(|(w, h, max)| {
            (Just(w), Just(h), prop::collection::vec(0..=max, (w * h) as usize))
        })
    ) {
        let value_map: ValueMap = values.iter().filter(|&&v| v != 0).map(|&v| (v, format!("label {v}"))).collect();
        let m = LabelMask::from_raster(MaskRaster { width: w, height: h, values }, &value_map, "m.png").unwrap();
        let bytes = m.encode_png().unwrap();
        prop_assert_eq!(decode_label_mask_bytes(&bytes, &value_map, "m.png").unwrap(), m);
    }

    #[test]
    fn rle_roundtrip(w in 1u32..30, h in 1u32..30, bits in prop::collection::vec(any::<bool>(), 900)) {
        let pixels: Vec<(u32, u32)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| bits[(y * 30 + x) as usize])
            .collect();
        let rle = Rle::from_pixels(w, h, &pixels);
        prop_assert_eq!(rle.area(), pixels.len() as u64);
        let mut back = rle.to_pixels();
        back.sort_by_key(|&(x, y)| (y, x));
        prop_assert_eq!(back, pixels);
    }

    #[test]
    fn feature_matrix_roundtrip(rows in 0usize..6, cols in 0usize..6, vals in prop::collection::vec(-1e6..1e6f64, 36)) {
        let m = Matrix::new(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        prop_assert_eq!(decode_matrix(&encode_matrix(&m, FeatureDtype::F64)).unwrap(), m.clone());
        let f32s = decode_matrix(&encode_matrix(&m, FeatureDtype::F32)).unwrap();
        for (a, b) in f32s.data().iter().zip(m.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn harmonizing_is_idempotent(raw in "[ A-Za-z_-]{0,20}", pick in any::<prop::sample::Index>()) {
        let tax = Taxonomy::starter();
        if let Harmonized::Fine(f) = tax.harmonize(&raw) {
            prop_assert_eq!(tax.harmonize(&f), Harmonized::Fine(f.clone()));
        }
        let labels: Vec<&str> = tax.fine_labels().collect();
        let fine = labels[pick.index(labels.len())];
        prop_assert_eq!(tax.harmonize(fine), Harmonized::Fine(fine.to_string()));
        prop_assert_eq!(normalize_label(&normalize_label(&raw)), normalize_label(&raw));
    }

    #[test]
    fn rollup_conserves_counts(counts in prop::collection::vec(0u64..1000, 89)) {
        let tax = Taxonomy::starter();
        let per_label: BTreeMap<String, u64> = tax.fine_labels().zip(&counts).map(|(l, &n)| (l.to_string(), n)).collect();
        let r = tax.rollup(&per_label).unwrap();
        let total: u64 = per_label.values().sum();
        prop_assert_eq!(r.categories.values().sum::<u64>(), total);
        prop_assert_eq!(r.regions.values().sum::<u64>(), total);
        for (cat, &n) in &r.categories {
            let direct: u64 = per_label.iter().filter(|(l, _)| tax.category_of(l) == Some(cat.as_str())).map(|(_, &n)| n).sum();
            prop_assert_eq!(n, direct);
        }
    }
}

#[test]
fn taxonomy_serialization_is_byte_identical() {
    let tax = Taxonomy::parse(STARTER).unwrap();
    assert_eq!(tax.serialize(), STARTER);
    assert_eq!(Taxonomy::parse(&tax.serialize()).unwrap(), tax);
}
