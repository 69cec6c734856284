mod common;

use proptest::prelude::*;

use common::*;
use predmodel::benchgen::gen_clustering;
use predmodel::benchgen::SyntheticWorld;
use predmodel::evaluation::{
    evaluate, f1_similarity, match_predicates, max_weight_matching, overlap_matrix, paired_ttest_one_sided,
    shuffle_band, smoothed_frequency, smoothed_from, surface_similarity, MockJudge,
};
use predmodel::grounding::{Grounder, Predicate};

fn columns(max_k: usize) -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<u8>>)> {
    (1usize..=30, 1usize..=max_k, 1usize..=max_k).prop_flat_map(|(n, a, b)| {
        let col = prop::collection::vec(0u8..=1, n);
        (prop::collection::vec(col.clone(), a), prop::collection::vec(col, b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matching_is_optimal((learned, refs) in columns(6)) {
        let m = match_predicates(&learned, &refs).unwrap();
        let w = overlap_matrix(&learned, &refs).unwrap();
        prop_assert_eq!(m.total_overlap, brute_force_matching(&w));
        prop_assert_eq!(m.pairs.len(), learned.len().min(refs.len()));
        let mut seen_l: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        let mut seen_r: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        seen_l.dedup();
        seen_r.sort_unstable();
        seen_r.dedup();
        prop_assert_eq!(seen_l.len(), m.pairs.len());
        prop_assert_eq!(seen_r.len(), m.pairs.len());
    }

    #[test]
    fn f1_is_bounded_and_exact_only_on_identity(a in prop::collection::vec(0u8..=1, 1..40), flip in any::<prop::sample::Index>()) {
        let f = f1_similarity(&a, &a);
        let positives = a.iter().any(|&v| v == 1);
        prop_assert_eq!(f, if positives { 1.0 } else { 0.0 });
        let mut b = a.clone();
        let i = flip.index(b.len());
        b[i] ^= 1;
        let g = f1_similarity(&a, &b);
        prop_assert!((0.0..1.0).contains(&g));
        prop_assert_eq!(g, f1_similarity(&b, &a));
    }

    #[test]
    fn smoothed_curve_stays_in_range(f0 in 0.0f64..=1.0, values in prop::collection::vec(0u8..=1, 1..300)) {
        let lo = values.iter().map(|&v| f64::from(v)).fold(f0, f64::min);
        let hi = values.iter().map(|&v| f64::from(v)).fold(f0, f64::max);
        for f in smoothed_from(f0, &values) {
            prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
        }
    }
}

#[test]
fn two_by_two_matching() {
    let m = max_weight_matching(&[vec![5, 1], vec![2, 4]]).unwrap();
    assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
    assert_eq!(m.total_overlap, 9);
}

#[test]
fn f1_hand_values() {
    assert!((f1_similarity(&[1, 1, 0, 0], &[1, 0, 0, 0]) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(f1_similarity(&[0, 0, 0], &[1, 0, 1]), 0.0);
}

#[test]
fn surface_examples() {
    let p = |s: &str| Predicate::new(s).unwrap();
    assert_eq!(surface_similarity(&p("has a topic of sports"), &p("has a topic of sports"), &MockJudge).unwrap(), 1.0);
    assert_eq!(surface_similarity(&p("schools"), &p("school"), &MockJudge).unwrap(), 1.0);
}

#[test]
fn smoothing_examples() {
    assert!(smoothed_frequency(&[1; 50]).iter().all(|&f| f == 1.0));
    assert!(smoothed_frequency(&[0; 50]).iter().all(|&f| f == 0.0));
    assert!((smoothed_from(0.0, &[1])[0] - 0.01).abs() < 1e-15);
}

#[test]
fn band_edges() {
    let (lo, hi) = shuffle_band(&[1; 40], 100, 3);
    assert!(lo.iter().chain(&hi).all(|&v| v == 1.0));

    let values: Vec<u8> = (0..200).map(|t| u8::from(t % 3 == 0)).collect();
    let (lo, hi) = shuffle_band(&values, 1, 9);
    assert_eq!(lo, hi);

    // A step from all-zeros to all-ones trends far outside any shuffle.
    let step: Vec<u8> = (0..400).map(|t| u8::from(t >= 200)).collect();
    let (lo, hi) = shuffle_band(&step, 100, 4);
    let curve = smoothed_frequency(&step);
    assert!(curve.iter().zip(lo.iter().zip(&hi)).any(|(&f, (&l, &h))| f < l || f > h));
}

#[test]
fn ttest_matches_reference_statistics() {
    // Reference values from scipy.stats.ttest_rel(a, b, alternative="greater").
    let a = [0.91, 0.85, 0.88, 0.93, 0.79, 0.86];
    let b = [0.72, 0.80, 0.75, 0.81, 0.70, 0.77];
    let t = paired_ttest_one_sided(&a, &b).unwrap();
    assert!((t.t - 5.757917931591449).abs() < 1e-9, "{}", t.t);
    assert!((t.p - 0.0011089906803523754).abs() < 1e-9, "{}", t.p);
    assert_eq!(t.df, 5.0);
}

#[test]
fn references_score_perfectly_against_themselves() {
    let inst = gen_clustering(&SyntheticWorld::news(), "location", 4, 256, 0.1, 2).unwrap();
    let report = evaluate(&inst.references, &inst.references, &inst.corpus, &Grounder::oracle(), &MockJudge, Some(2)).unwrap();
    assert_eq!(report.mean_f1, 1.0);
    assert_eq!(report.mean_surface, 1.0);
    assert!(report.pairs.iter().all(|p| p.learned_index == p.reference_index));
}

#[test]
fn missing_predicates_count_as_zero() {
    let inst = gen_clustering(&SyntheticWorld::news(), "topic", 4, 256, 0.1, 3).unwrap();
    let report = evaluate(&inst.references[..2], &inst.references, &inst.corpus, &Grounder::oracle(), &MockJudge, None).unwrap();
    assert_eq!(report.unmatched_reference.len(), 2);
    assert!((report.mean_f1 - 0.5).abs() < 1e-12);
}
