//! Property tests of module invariants.

use nalgebra::DMatrix;
use proptest::prelude::*;
use uplift_core::cate::{self, DmlConfig, FinalStage};
use uplift_core::dataset::{generate_synthetic, Dataset, SyntheticConfig};
use uplift_core::eval::{self, AuucMode};
use uplift_core::gcn::{GcnConfig, GcnModel};
use uplift_core::rng::SeededRng;
use uplift_core::structure::{
    self, hill_climb, is_acyclic, normalized_adjacency, random_dag, HillClimbOptions,
};
use uplift_core::teacher::SoftLabels;

fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SeededRng::new(seed);
    DMatrix::from_fn(n, d, |_, _| rng.standard_normal())
}

fn outcome_rows(n: usize, seed: u64) -> (Vec<u8>, Vec<f64>) {
    let mut rng = SeededRng::new(seed);
    let mut t: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.5) as u8).collect();
    t[0] = 1;
    t[1] = 0;
    let y = (0..n).map(|_| rng.standard_normal()).collect();
    (t, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn auuc_is_invariant_under_monotone_transforms(seed in 0u64..1000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let (t, y) = outcome_rows(60, seed);
        let scores: Vec<f64> = random_matrix(60, 1, seed + 1).iter().copied().collect();
        let moved: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
        for mode in [AuucMode::Raw, AuucMode::Normalized] {
            let a = eval::auuc(&scores, &t, &y, None, mode).unwrap();
            let b = eval::auuc(&moved, &t, &y, None, mode).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn curve_end_point_does_not_depend_on_scores(seed in 0u64..1000) {
        let (t, y) = outcome_rows(40, seed);
        let s1: Vec<f64> = random_matrix(40, 1, seed + 7).iter().copied().collect();
        let s2: Vec<f64> = random_matrix(40, 1, seed + 8).iter().copied().collect();
        let a = eval::uplift_curve(&s1, &t, &y).unwrap().final_value();
        let b = eval::uplift_curve(&s2, &t, &y).unwrap().final_value();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn rank_order_is_a_permutation(values in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let mut order = eval::rank_order(&values);
        for w in order.windows(2) {
            prop_assert!(values[w[0]] >= values[w[1]]);
        }
        order.sort_unstable();
        prop_assert_eq!(order, (0..values.len()).collect::<Vec<_>>());
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_unit_bounded_rows(seed in 0u64..1000, d in 1usize..10, p in 0.0f64..1.0) {
        let mut rng = SeededRng::new(seed);
        let adj = random_dag(d, p, 5, &mut rng);
        prop_assert!(is_acyclic(&adj));
        let a = normalized_adjacency(&adj).a_norm;
        for i in 0..d {
            prop_assert!(a[(i, i)] > 0.0);
            for j in 0..d {
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
                prop_assert!(a[(i, j)] >= 0.0 && a[(i, j)] <= 1.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn hill_climbing_returns_an_acyclic_graph_no_worse_than_empty(seed in 0u64..1000, d in 2usize..6) {
        let data = random_matrix(80, d, seed);
        let res = hill_climb(&data, &HillClimbOptions { restarts: 1, seed, ..Default::default() }).unwrap();
        prop_assert!(is_acyclic(&res.best.adj));
        let empty = structure::bic_total(&structure::DagStructure::empty(d), &data).unwrap();
        prop_assert!(res.best.score >= empty);
        prop_assert!((res.best.score - res.best.local_scores.iter().sum::<f64>()).abs() <= 1e-9);
    }

    /// Each head sees only its own column as treatment and the rest as
    /// controls, so reordering the columns reorders the heads.
    #[test]
    fn heads_follow_column_permutations(seed in 0u64..1000) {
        let n = 200;
        let x = random_matrix(n, 4, seed);
        let y: Vec<f64> = (0..n).map(|i| 1.5 * x[(i, 0)] - x[(i, 2)] + 0.3 * x[(i, 3)].powi(2)).collect();
        let soft = SoftLabels { y_hat: y };
        let cfg = DmlConfig { final_stage: FinalStage::Constant, seed, ..Default::default() };
        let base = cate::multi_head_cate(&x, &soft, &cfg).unwrap();
        let perm = [2usize, 0, 3, 1];
        let xp = DMatrix::from_fn(n, 4, |i, j| x[(i, perm[j])]);
        let moved = cate::multi_head_cate(&xp, &soft, &cfg).unwrap();
        for (j, &pj) in perm.iter().enumerate() {
            let a = base.heads[pj].constant_theta;
            let b = moved.heads[j].constant_theta;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "head {j}: {a} vs {b}");
        }
    }
}

fn path_model(d: usize, layers: usize) -> GcnModel {
    let mut adj = vec![vec![0u8; d]; d];
    for v in 0..d - 1 {
        adj[v][v + 1] = 1;
    }
    let cfg = GcnConfig {
        layers,
        seed: 5,
        ..Default::default()
    };
    GcnModel::init(&cfg, normalized_adjacency(&adj), 1).unwrap()
}

/// With L graph convolutions a node embedding depends only on nodes within L
/// hops.
#[test]
fn embeddings_have_layer_count_receptive_field() {
    let d = 7;
    let base: Vec<f64> = (0..d).map(|v| 0.3 + 0.1 * v as f64).collect();
    let mut moved = base.clone();
    moved[d - 1] += 2.0;
    for layers in 1..=3 {
        let model = path_model(d, layers);
        let h = model.config.hidden;
        let e0 = model
            .forward(&base, 1.0)
            .unwrap()
            .embeddings(model.config.leaky_slope);
        let e1 = model
            .forward(&moved, 1.0)
            .unwrap()
            .embeddings(model.config.leaky_slope);
        for v in 0..d {
            let same = e0[v * h..(v + 1) * h] == e1[v * h..(v + 1) * h];
            let hops = d - 1 - v;
            if hops > layers {
                assert!(same, "layers={layers}: node {v} at {hops} hops changed");
            } else if hops == layers {
                assert!(
                    !same,
                    "layers={layers}: node {v} at {hops} hops did not change"
                );
            }
        }
    }
}

#[test]
fn dataset_csv_round_trip_is_exact() {
    let ds = generate_synthetic(&SyntheticConfig::new(50, 5, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.write_csv(&path).unwrap();
    let back = Dataset::read_csv(&path).unwrap();
    assert_eq!(back.x, ds.x);
    assert_eq!(back.y, ds.y);
    assert_eq!(back.t, ds.t);
    assert_eq!(back.tau_true, ds.tau_true);
    assert_eq!(back.feature_names, ds.feature_names);
}
