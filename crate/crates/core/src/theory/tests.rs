use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{CsbmParams, Graph};
use crate::tensor::Tensor;

fn params(p: f64, q: f64) -> CsbmParams {
    CsbmParams::symmetric(2, 1.0, p, q, 2000)
}

#[test]
fn expected_distance_examples() {
    assert_eq!(csbm_expected_distance(&params(0.3, 0.3)).unwrap(), 0.0);
    assert!((csbm_expected_distance(&params(0.8, 0.2)).unwrap() - 0.6).abs() < 1e-15);
    assert!(matches!(csbm_expected_distance(&params(0.0, 0.0)), Err(crate::Error::Undefined(_))));
}

#[test]
fn expected_distance_matches_simulation() {
    let mut pr = params(0.8, 0.2);
    pr.n_per_class = 1000;
    let w = theorem1_construct_witness(&pr, 2.0).unwrap();
    let report = theorem1_verify(&pr, &w, 1000, 20, 4).unwrap();
    let d = csbm_expected_distance(&pr).unwrap();
    assert!((report.empirical.unprompted - d).abs() <= report.half_width.unprompted, "{report:?}");
}

#[test]
fn max_ratio_examples() {
    let MaxRatio::Bounded(t) = theorem1_max_ratio(0.8, 0.2) else { panic!() };
    assert!((t - 7.0 / 3.0).abs() < 1e-12);
    assert_eq!(theorem1_max_ratio(0.7, 0.0), MaxRatio::Bounded(2.0));
    let MaxRatio::Bounded(t) = theorem1_max_ratio(0.5, 0.4) else { panic!() };
    assert!((t - 6.0).abs() < 1e-12);
    assert_eq!(theorem1_max_ratio(0.4, 0.4), MaxRatio::Unbounded);
}

#[test]
fn witness_examples() {
    let pr = params(0.8, 0.2);
    let w = theorem1_construct_witness(&pr, 7.0 / 3.0).unwrap();
    assert!((w.b11 - 1.0).abs() < 1e-12 && w.b22 == 0.0);
    let w = theorem1_construct_witness(&pr, 2.0).unwrap();
    assert!((w.b11 - 0.75).abs() < 1e-12 && w.b22 == 0.0 && w.b12 == 0.5 && w.b21 == 0.5);
    assert_eq!(w.anchors, [pr.mu1.clone(), pr.mu2.clone()]);
    let near_one = theorem1_construct_witness(&pr, 1.0 + 1e-17);
    assert!(near_one.is_err(), "1 + 1e-17 rounds to 1, which is outside the open interval");
    for bad in [3.0, 1.0, 0.5, f64::NAN] {
        let err = theorem1_construct_witness(&pr, bad).unwrap_err();
        assert!(matches!(&err, crate::Error::Range(m) if m.contains("2.333")), "{err}");
    }
    assert!(theorem1_construct_witness(&params(0.3, 0.3), 1.5).is_err());
}

proptest! {
    #[test]
    fn witnesses_satisfy_their_constraints(p in 0.01f64..1.0, q in 0.0f64..1.0, frac in 0.0f64..=1.0) {
        prop_assume!((p - q).abs() > 1e-6);
        let MaxRatio::Bounded(t_max) = theorem1_max_ratio(p, q) else { unreachable!() };
        let t = 1.0 + (t_max - 1.0) * frac;
        prop_assume!(t > 1.0);
        let w = theorem1_construct_witness(&params(p, q), t).unwrap();
        prop_assert!((0.0..=1.0).contains(&w.b11) && (0.0..=1.0).contains(&w.b22));
        prop_assert!((w.b11 - w.b22 - (t - 1.0) * (p - q) / p).abs() < 1e-12);
        prop_assert!(theorem1_construct_witness(&params(p, q), t_max * 1.001 + 1e-9).is_err());
    }
}

#[test]
fn simulated_ratio_tracks_the_target() {
    let pr = params(0.8, 0.2);
    for t in [1.5, 2.0, 7.0 / 3.0] {
        let w = theorem1_construct_witness(&pr, t).unwrap();
        let r = theorem1_verify(&pr, &w, 2000, 20, 1).unwrap();
        assert!(r.pass && (r.empirical.ratio - t).abs() <= RATIO_TOLERANCE, "{r:?}");
        assert!((r.analytic.ratio - t).abs() < 1e-12);
    }
}

#[test]
fn confidence_band_contains_target_and_shrinks() {
    let pr = params(0.8, 0.2);
    let w = theorem1_construct_witness(&pr, 2.0).unwrap();
    for seed in 0..5 {
        let r = theorem1_verify(&pr, &w, 400, 20, seed).unwrap();
        assert!(r.band_contains_target(), "{r:?}");
    }
    let small = theorem1_verify(&pr, &w, 200, 40, 9).unwrap();
    let large = theorem1_verify(&pr, &w, 800, 40, 9).unwrap();
    let shrink = large.half_width.ratio / small.half_width.ratio;
    assert!((0.3..0.8).contains(&shrink), "{shrink}");
}

#[test]
fn neutral_witnesses_leave_the_distance_unchanged() {
    let pr = params(0.8, 0.2);
    let mut w = theorem1_construct_witness(&pr, 2.0).unwrap();
    w.b11 = 0.3;
    w.b22 = 0.3;
    let r = theorem1_verify(&pr, &w, 500, 10, 2).unwrap();
    // Equal in expectation; per-node neighbour counts still fluctuate.
    assert!((r.empirical.ratio - 1.0).abs() < 1e-3, "{r:?}");
    w.anchors = [vec![0.0; 2], vec![0.0; 2]];
    w.b11 = 0.75;
    let r = theorem1_verify(&pr, &w, 500, 10, 2).unwrap();
    assert!((r.empirical.ratio - 1.0).abs() < 1e-12);
}

#[test]
fn report_serialises_with_expected_keys() {
    let pr = params(0.8, 0.2);
    let w = theorem1_construct_witness(&pr, 1.5).unwrap();
    let r = theorem1_verify(&pr, &w, 50, 3, 0).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for key in ["theorem", "params", "witness", "analytic", "empirical", "half_width", "pass"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

fn path(n: usize) -> Graph {
    let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
    Graph::from_edges(n, &edges, Tensor::ones(n, 2)).unwrap().0
}

#[test]
fn coefficient_examples() {
    let (g3, _) = Graph::from_edges(3, &[(0, 1)], Tensor::ones(3, 2)).unwrap();
    assert_eq!(lemma1_coefficient(&g3, 0.0).unwrap(), 2.5);
    assert_eq!(lemma1_coefficient(&path(2), 0.0).unwrap(), 2.0);
    let (tri, _) = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], Tensor::ones(3, 2)).unwrap();
    assert_eq!(lemma1_coefficient(&tri, 0.5).unwrap(), 1.75);
    let (empty, _) = Graph::from_edges(3, &[], Tensor::ones(3, 2)).unwrap();
    assert!(matches!(lemma1_coefficient(&empty, 0.0), Err(crate::Error::Undefined(_))));
    assert!(theorem2_equivalence_check(&empty, &Tensor::ones(1, 2), 0.0, &Tensor::identity(2)).is_err());
}

#[test]
fn equivalence_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, _) = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)], Tensor::uniform(6, 3, -1.0, 1.0, &mut rng)).unwrap();
    let w = Tensor::uniform(3, 2, -1.0, 1.0, &mut rng);
    assert_eq!(theorem2_equivalence_check(&g, &Tensor::zeros(1, 3), 0.0, &w).unwrap(), 0.0);
    let p = Tensor::uniform(1, 3, -1.0, 1.0, &mut rng);
    for eps in [0.0, 0.5] {
        assert!(theorem2_equivalence_check(&g, &p, eps, &w).unwrap() < 1e-9);
        let coef = lemma1_coefficient(&g, eps).unwrap();
        assert!(theorem2_residual(&g, &p, eps, &w, 1.1 * coef).unwrap() > 1e-3);
    }
}

#[test]
fn equivalence_holds_across_random_draws() {
    let r = theorem2_trials(&Theorem2Params::default()).unwrap();
    assert_eq!(r.residuals.len(), 100);
    assert!(r.pass, "max {} control {}", r.max_residual, r.min_control_residual);
    assert!(theorem2_trials(&Theorem2Params { max_nodes: 1, ..Theorem2Params::default() }).is_err());
}
