mod common;

use std::collections::BTreeSet;

use medground::geometry::{bbox_of, bbox_of_pixels, connected_components, iou, BBox, Connectivity};
use proptest::prelude::*;

fn mask() -> impl Strategy<Value = (usize, usize, Vec<u16>)> {
    (1usize..=24, 1usize..=24).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), prop::collection::vec(prop::sample::select(vec![0u16, 0, 1, 2, 3]), w * h))
    })
}

fn boxes() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 0.01..30.0f64, 0.01..30.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

fn conn(eight: bool) -> Connectivity {
    if eight {
        Connectivity::Eight
    } else {
        Connectivity::Four
    }
}

proptest! {
    #[test]
    fn iou_symmetric_bounded_and_reflexive(a in boxes(), b in boxes()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn components_match_union_find((w, h, values) in mask(), eight in any::<bool>()) {
        let got: BTreeSet<(u16, BTreeSet<(u32, u32)>)> = connected_components(w as u32, h as u32, &values, conn(eight))
            .into_iter()
            .map(|c| (c.label, c.pixels.into_iter().collect()))
            .collect();
        let want: BTreeSet<_> = common::components_union_find(w, h, &values, eight).into_iter().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn component_counts_partition_labels((w, h, values) in mask(), eight in any::<bool>()) {
        let comps = connected_components(w as u32, h as u32, &values, conn(eight));
        for label in 1..=3u16 {
            let total = values.iter().filter(|&&v| v == label).count();
            let summed: usize = comps.iter().filter(|c| c.label == label).map(|c| c.pixel_count()).sum();
            prop_assert_eq!(total, summed);
        }
    }

    #[test]
    fn bbox_is_minimal_and_contains_component((w, h, values) in mask()) {
        for c in connected_components(w as u32, h as u32, &values, Connectivity::Eight) {
            let b = bbox_of(&c).unwrap();
            prop_assert!(b.fits_within(w as u32, h as u32));
            let inside = |b: &BBox, &(x, y): &(u32, u32)| {
                let (x, y) = (x as f64, y as f64);
                x >= b.x && y >= b.y && x < b.right() && y < b.bottom()
            };
            prop_assert!(c.pixels.iter().all(|p| inside(&b, p)));
            let shrunk = [
                BBox::new(b.x + 1.0, b.y, b.w - 1.0, b.h),
                BBox::new(b.x, b.y + 1.0, b.w, b.h - 1.0),
                BBox::new(b.x, b.y, b.w - 1.0, b.h),
                BBox::new(b.x, b.y, b.w, b.h - 1.0),
            ];
            for s in shrunk {
                prop_assert!(!c.pixels.iter().all(|p| inside(&s, p)));
            }
        }
    }

    #[test]
    fn translation_preserves_components_and_iou((w, h, values) in mask(), dx in 0usize..5, dy in 0usize..5) {
        let (w2, h2) = (w + dx, h + dy);
        let mut shifted = vec![0u16; w2 * h2];
        for y in 0..h {
            for x in 0..w {
                shifted[(y + dy) * w2 + x + dx] = values[y * w + x];
            }
        }
        let a = connected_components(w as u32, h as u32, &values, Connectivity::Eight);
        let b = connected_components(w2 as u32, h2 as u32, &shifted, Connectivity::Eight);
        prop_assert_eq!(a.len(), b.len());
        let counts = |v: &[medground::geometry::Component]| v.iter().map(|c| (c.label, c.pixel_count())).collect::<Vec<_>>();
        prop_assert_eq!(counts(&a), counts(&b));
        let boxes_a: Vec<BBox> = a.iter().map(|c| bbox_of(c).unwrap()).collect();
        let boxes_b: Vec<BBox> = b.iter().map(|c| bbox_of(c).unwrap()).collect();
        for i in 0..boxes_a.len() {
            prop_assert_eq!(boxes_a[i].translate(dx as f64, dy as f64), boxes_b[i]);
            for j in 0..boxes_a.len() {
                prop_assert!((iou(&boxes_a[i], &boxes_a[j]) - iou(&boxes_b[i], &boxes_b[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn component_box_iou_matches_pixel_sets((w, h, values) in mask()) {
        let boxes: Vec<BBox> = connected_components(w as u32, h as u32, &values, Connectivity::Four)
            .iter()
            .map(|c| bbox_of(c).unwrap())
            .collect();
        for a in &boxes {
            for b in &boxes {
                prop_assert!((iou(a, b) - common::pixel_set_iou(a, b)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn worked_iou_is_one_seventh() {
    let v = iou(&BBox::new(0.0, 0.0, 10.0, 10.0), &BBox::new(5.0, 5.0, 10.0, 10.0));
    assert_eq!(v, 1.0 / 7.0);
}

#[test]
fn empty_component_has_no_box() {
    assert!(bbox_of_pixels(&[]).is_err());
}
