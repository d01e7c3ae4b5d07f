mod common;

use common::rel_err;
use medground::geometry::BBox;
use medground::grounding::{
    aggregate_phrase_probs, alignment_scores, build_prompt, classification_loss, expand_targets, localization_loss,
    tokenize_prompt, Aggregation, ClsInput, LocLoss, LossOptions, Matrix, PhraseSpanMap,
};
use proptest::prelude::*;

/// Random span map: `m` tokens, phrases over disjoint nonempty index sets.
fn span_map() -> impl Strategy<Value = PhraseSpanMap> {
    (2usize..=10)
        .prop_flat_map(|m| (Just(m), prop::collection::vec(0usize..4, m), Just(()).prop_perturb(|_, mut r| r.random::<u64>())))
        .prop_map(|(m, owner, seed)| {
            // owner 0 means non-phrase; others pick a phrase bucket
            let mut spans: Vec<Vec<usize>> = vec![vec![]; 3];
            for (i, &o) in owner.iter().enumerate() {
                if o > 0 {
                    spans[o - 1].push(i);
                }
            }
            let mut spans: Vec<Vec<usize>> = spans.into_iter().filter(|s| !s.is_empty()).collect();
            if spans.is_empty() {
                spans.push(vec![(seed as usize) % m]);
            }
            let tokens = (0..m).map(|i| format!("t{i}")).collect();
            PhraseSpanMap::new(tokens, spans).unwrap()
        })
}

fn binary(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(prop::bool::ANY, rows * cols)
        .prop_map(move |v| Matrix::new(rows, cols, v.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
}

fn dense(rows: usize, cols: usize, lim: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-lim..lim, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn map_and_targets() -> impl Strategy<Value = (PhraseSpanMap, Matrix, Matrix)> {
    (span_map(), 1usize..=5).prop_flat_map(|(map, n)| {
        let c = map.phrase_count();
        (Just(map), binary(n, c), binary(n, c))
    })
}

fn or(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::new(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(x, y)| x.max(*y)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn expansion_support_and_row_counts((map, t, _) in map_and_targets()) {
        let e = expand_targets(&t, &map).unwrap();
        prop_assert_eq!(e.shape(), (t.rows(), map.token_count()));
        prop_assert!(e.is_binary());
        for i in 0..t.rows() {
            for &j in &map.non_phrase {
                prop_assert_eq!(e.get(i, j), 0.0);
            }
            let ones = e.row(i).iter().filter(|&&v| v == 1.0).count();
            let want: usize = (0..map.phrase_count()).filter(|&k| t.get(i, k) == 1.0).map(|k| map.spans[k].len()).sum();
            prop_assert_eq!(ones, want);
            for (k, span) in map.spans.iter().enumerate() {
                for &j in span {
                    prop_assert_eq!(e.get(i, j), t.get(i, k));
                }
            }
        }
    }

    #[test]
    fn expansion_commutes_with_or((map, a, b) in map_and_targets()) {
        let lhs = or(&expand_targets(&a, &map).unwrap(), &expand_targets(&b, &map).unwrap());
        prop_assert_eq!(lhs, expand_targets(&or(&a, &b), &map).unwrap());
    }
}

proptest! {
    #[test]
    fn scores_in_open_interval_and_transpose_symmetric(
        (f, t) in (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(n, m, d)| (dense(n, d, 20.0), dense(m, d, 20.0)))
    ) {
        let s = alignment_scores(&f, &t).unwrap();
        prop_assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert_eq!(s.transpose(), alignment_scores(&t, &f).unwrap());
    }

    #[test]
    fn aggregation_is_permutation_invariant_within_spans(
        (map, s, seed) in span_map().prop_flat_map(|m| { let k = m.token_count(); (Just(m), prop::collection::vec(0.0..1.0f64, 3 * k), any::<u64>()) })
    ) {
        let m = map.token_count();
        let s = Matrix::new(3, m, s).unwrap();
        let mut permuted = s.clone();
        for (k, span) in map.spans.iter().enumerate() {
            let mut rot = span.clone();
            rot.rotate_left((seed as usize + k) % span.len());
            for i in 0..3 {
                for (&src, &dst) in span.iter().zip(&rot) {
                    permuted.set(i, dst, s.get(i, src));
                }
            }
        }
        for how in [Aggregation::Mean, Aggregation::Max] {
            let a = aggregate_phrase_probs(&s, &map, how).unwrap();
            let b = aggregate_phrase_probs(&permuted, &map, how).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_spans_aggregate_to_identity(s in prop::collection::vec(0.0..1.0f64, 8)) {
        let tokens = (0..4).map(|i| format!("w{i}")).collect();
        let map = PhraseSpanMap::new(tokens, vec![vec![0], vec![2], vec![3]]).unwrap();
        let s = Matrix::new(2, 4, s).unwrap();
        for how in [Aggregation::Mean, Aggregation::Max] {
            let a = aggregate_phrase_probs(&s, &map, how).unwrap();
            for i in 0..2 {
                prop_assert_eq!(a.row(i), &[s.get(i, 0), s.get(i, 2), s.get(i, 3)][..]);
            }
        }
    }

    #[test]
    fn argmax_survives_positive_token_scaling(
        f in dense(3, 2, 1.0).prop_map(|m| m.map(|v| v.abs() + 0.01)),
        t in dense(6, 2, 1.0).prop_map(|m| m.map(|v| v.abs() + 0.01)),
        scale in 0.1..10.0f64,
    ) {
        let tokens = (0..6).map(|i| format!("w{i}")).collect();
        let pairs = PhraseSpanMap::new(tokens, vec![vec![0, 1], vec![2, 3], vec![4, 5]]).unwrap();
        let singles = PhraseSpanMap::new((0..6).map(|i| format!("w{i}")).collect(), vec![vec![0], vec![2], vec![4]]).unwrap();
        let argmax = |m: &Matrix, i: usize| {
            let r = m.row(i);
            (0..r.len()).fold(0, |b, k| if r[k] > r[b] { k } else { b })
        };
        // mean over multi-token spans is not order-preserving under scaling
        for (map, how) in [(&pairs, Aggregation::Max), (&singles, Aggregation::Mean), (&singles, Aggregation::Max)] {
        let a = aggregate_phrase_probs(&alignment_scores(&f, &t).unwrap(), map, how).unwrap();
        let b = aggregate_phrase_probs(&alignment_scores(&f, &t.scale(scale)).unwrap(), map, how).unwrap();
        for i in 0..3 {
            let (ra, rb) = (a.row(i), b.row(i));
            let mut sorted = ra.to_vec();
            sorted.sort_by(f64::total_cmp);
            // skip near-ties, where rounding decides
            prop_assume!(sorted[2] - sorted[1] > 1e-9);
            prop_assert_eq!(argmax(&a, i), argmax(&b, i), "{:?} vs {:?}", ra, rb);
        }
        }
    }

    #[test]
    fn prompt_preserves_concept_order(concepts in prop::collection::vec("[a-z]{1,8}( [a-z]{1,6})?", 1..5)) {
        let p = build_prompt(&concepts).unwrap();
        prop_assert_eq!(&p.text, &format!("Detect: {}", concepts.join(", ")));
        let map = tokenize_prompt(&p, None);
        prop_assert_eq!(map.phrase_count(), concepts.len());
        for (k, c) in concepts.iter().enumerate() {
            let words: Vec<&str> = c.split(' ').collect();
            let got: Vec<&str> = map.spans[k].iter().map(|&i| map.tokens[i].as_str()).collect();
            prop_assert_eq!(got, words);
        }
    }
}

const H: f64 = 1e-4;

/// Five-point central difference.
fn derivative(f: impl Fn(f64) -> f64) -> f64 {
    (f(-2.0 * H) - 8.0 * f(-H) + 8.0 * f(H) - f(2.0 * H)) / (12.0 * H)
}
const GRAD_TOL: f64 = 1e-5;

fn cls_instance() -> impl Strategy<Value = (Matrix, Matrix, bool)> {
    (1usize..=6, 1usize..=6)
        .prop_flat_map(|(n, m)| (dense(n, m, 6.0), binary(n, m), any::<bool>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn classification_gradient_matches_finite_differences((x, t, focal) in cls_instance()) {
        let opts = LossOptions { focal_gamma: focal.then_some(2.0), ..LossOptions::default() };
        let (_, grad) = classification_loss(ClsInput::Logits(&x), &t, &opts).unwrap();
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let fd = derivative(|d| {
                    let mut y = x.clone();
                    y.set(i, j, x.get(i, j) + d);
                    classification_loss(ClsInput::Logits(&y), &t, &opts).unwrap().0
                });
                prop_assert!(rel_err(fd, grad.get(i, j)) < GRAD_TOL, "cell ({i},{j}): fd {fd} analytic {}", grad.get(i, j));
            }
        }
    }

    #[test]
    fn localization_gradient_matches_finite_differences(
        pairs in prop::collection::vec((0.0..40.0f64, 0.0..40.0f64, 2.0..20.0f64, 2.0..20.0f64, -6.0..6.0f64, -6.0..6.0f64, -3.0..3.0f64, -3.0..3.0f64), 1..=6),
        which in 0usize..3,
    ) {
        let loss = [LocLoss::default(), LocLoss::L1, LocLoss::Giou][which];
        let pred: Vec<BBox> = pairs.iter().map(|p| BBox::new(p.0, p.1, p.2, p.3)).collect();
        let gt: Vec<BBox> = pairs.iter().map(|p| BBox::new(p.0 + p.4, p.1 + p.5, p.2 + p.6, p.3 + p.7)).collect();
        let matching: Vec<(usize, usize)> = (0..pred.len()).map(|i| (i, i)).collect();
        let size = (64, 48);
        let (_, grad) = localization_loss(&pred, &gt, &matching, size, loss).unwrap();
        for (b, g) in pred.iter().zip(&gt) {
            let (a, c) = (b.to_array(), g.to_array());
            // stay away from kinks, where the derivative is undefined
            if let LocLoss::SmoothL1 { beta } = loss {
                let scale = [64.0, 48.0, 64.0, 48.0];
                prop_assume!((0..4).all(|k| (((a[k] - c[k]) / scale[k]).abs() - beta).abs() > 1e-3));
            }
            prop_assume!((0..4).all(|k| (a[k] - c[k]).abs() > 1e-3));
            if loss == LocLoss::Giou {
                let edges_a = [b.x, b.y, b.right(), b.bottom()];
                let edges_b = [g.x, g.y, g.right(), g.bottom()];
                for ea in edges_a {
                    for eb in edges_b {
                        prop_assume!((ea - eb).abs() > 1e-3);
                    }
                }
            }
        }
        for i in 0..pred.len() {
            for k in 0..4 {
                let bump = |d: f64| {
                    let mut p = pred.clone();
                    let mut v = p[i].to_array();
                    v[k] += d;
                    p[i] = BBox::from(v);
                    localization_loss(&p, &gt, &matching, size, loss).unwrap().0
                };
                let fd = derivative(bump);
                prop_assert!(rel_err(fd, grad[i][k]) < GRAD_TOL, "{loss:?} box {i} coord {k}: fd {fd} analytic {}", grad[i][k]);
            }
        }
    }
}

#[test]
fn zero_regions_score_one_half() {
    let s = alignment_scores(&Matrix::zeros(3, 4), &Matrix::filled(5, 4, 2.5)).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.5));
}

#[test]
fn single_cell_bce_is_ln_two() {
    let p = Matrix::filled(1, 1, 0.5);
    let t = Matrix::filled(1, 1, 1.0);
    let (l, _) = classification_loss(ClsInput::Probabilities(&p), &t, &LossOptions::default()).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
}
