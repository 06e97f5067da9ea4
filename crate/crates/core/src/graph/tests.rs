use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn feats(n: usize, d: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform(n, d, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_graph(n: usize, density: f64, seed: u64) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, feats(n, 3, seed)).unwrap().0
}

#[test]
fn smallest_graph_has_both_directions() {
    let (g, stats) = Graph::from_edges(2, &[(0, 1)], feats(2, 1, 0)).unwrap();
    assert_eq!(g.csr_offsets(), &[0, 1, 2]);
    assert_eq!(g.csr_targets(), &[1, 0]);
    assert_eq!(g.edge_ids(), &[0, 0]);
    assert_eq!(stats, EdgeStats::default());
    g.validate().unwrap();
}

#[test]
fn duplicates_and_self_loops_are_dropped() {
    let (g, stats) = Graph::from_edges(3, &[(0, 1), (1, 0), (0, 1), (2, 2)], feats(3, 1, 0)).unwrap();
    assert_eq!(g.num_edges(), 1);
    assert_eq!(stats.duplicates, 2);
    assert_eq!(stats.self_loops, 1);
    g.validate().unwrap();
}

#[test]
fn out_of_range_edge_is_an_index_error() {
    assert!(matches!(Graph::from_edges(2, &[(0, 2)], feats(2, 1, 0)), Err(Error::Index(_))));
}

proptest! {
    #[test]
    fn csr_is_symmetric_with_shared_ids(n in 1usize..12, density in 0.0f64..1.0, seed in any::<u64>()) {
        let g = random_graph(n, density, seed);
        prop_assert!(g.validate().is_ok());
        for i in 0..n {
            for k in g.csr_offsets()[i]..g.csr_offsets()[i + 1] {
                let j = g.csr_targets()[k];
                let r = g.entry(j, i).unwrap();
                prop_assert_eq!(g.edge_ids()[r], g.edge_ids()[k]);
            }
        }
    }
}

fn dense_normalized(g: &Graph<f64>) -> Tensor<f64> {
    let n = g.num_nodes();
    let mut a = g.dense_adjacency();
    for i in 0..n {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()));
        }
    }
    out
}

#[test]
fn normalized_single_edge_is_one_half() {
    let (g, _) = Graph::from_edges(2, &[(0, 1)], feats(2, 1, 0)).unwrap();
    let norm = normalized_adjacency(&g, true);
    assert_eq!(norm.edge_coeffs, vec![0.5, 0.5]);
    assert_eq!(norm.self_coeffs, Some(vec![0.5, 0.5]));
    assert!(norm.to_sparse(&g).to_dense().data().iter().all(|&v| v == 0.5));
}

#[test]
fn isolated_node_self_coefficient_is_one() {
    let (g, _) = Graph::from_edges(3, &[(0, 1)], feats(3, 1, 0)).unwrap();
    let norm = normalized_adjacency(&g, true);
    assert_eq!(norm.self_coeffs.unwrap()[2], 1.0);
}

#[test]
fn normalized_without_self_loops_uses_plain_degrees() {
    let (g, _) = Graph::from_edges(3, &[(0, 1), (1, 2)], feats(3, 1, 0)).unwrap();
    let norm = normalized_adjacency(&g, false);
    assert!(norm.self_coeffs.is_none());
    let expected = 1.0 / 2f64.sqrt();
    assert!(norm.edge_coeffs.iter().all(|&c| (c - expected).abs() < 1e-15));
}

#[test]
fn normalized_matches_dense_on_random_six_node_graph() {
    let g = random_graph(6, 0.5, 99);
    let got = normalized_adjacency(&g, true).to_sparse(&g).to_dense();
    let want = dense_normalized(&g);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn normalized_matches_dense_up_to_eight_nodes(n in 1usize..=8, density in 0.0f64..1.0, seed in any::<u64>()) {
        let g = random_graph(n, density, seed);
        let got = normalized_adjacency(&g, true).to_sparse(&g).to_dense();
        let want = dense_normalized(&g);
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn union_of_one_graph_is_identity() {
    let g = random_graph(5, 0.6, 3);
    let (u, offsets) = disjoint_union(&[&g]).unwrap();
    assert_eq!(u, g);
    assert_eq!(offsets, vec![0]);
}

#[test]
fn union_of_two_pairs_has_no_cross_edges() {
    let (a, _) = Graph::from_edges(2, &[(0, 1)], feats(2, 2, 1)).unwrap();
    let (b, _) = Graph::from_edges(2, &[(0, 1)], feats(2, 2, 2)).unwrap();
    let (u, offsets) = disjoint_union(&[&a, &b]).unwrap();
    assert_eq!(offsets, vec![0, 2]);
    assert_eq!(u.num_nodes(), 4);
    assert_eq!(u.undirected_edges(), vec![(0, 1), (2, 3)]);
    assert_eq!(u.edge_ids(), &[0, 0, 1, 1]);
    u.validate().unwrap();
}

#[test]
fn union_rejects_dimension_mismatch() {
    let (a, _) = Graph::from_edges(2, &[(0, 1)], feats(2, 2, 1)).unwrap();
    let (b, _) = Graph::from_edges(2, &[(0, 1)], feats(2, 3, 2)).unwrap();
    assert!(matches!(disjoint_union(&[&a, &b]), Err(Error::Shape(_))));
}

#[test]
fn csbm_complete_intra_no_inter() {
    let params = CsbmParams::symmetric(2, 1.0, 1.0, 0.0, 2);
    let (g, labels) = csbm_generate::<f64>(&params, 0).unwrap();
    assert_eq!(labels, vec![0, 0, 1, 1]);
    assert_eq!(g.undirected_edges(), vec![(0, 1), (2, 3)]);
}

#[test]
fn csbm_zero_probabilities_give_no_edges() {
    let params = CsbmParams::symmetric(2, 1.0, 0.0, 0.0, 10);
    let (g, _) = csbm_generate::<f64>(&params, 1).unwrap();
    assert_eq!(g.num_edges(), 0);
}

#[test]
fn csbm_rejects_bad_parameters() {
    assert!(csbm_generate::<f64>(&CsbmParams::symmetric(2, 1.0, 1.2, 0.0, 2), 0).is_err());
    assert!(csbm_generate::<f64>(&CsbmParams::symmetric(2, 0.0, 0.5, 0.1, 2), 0).is_err());
}

#[test]
fn csbm_edge_frequencies_match_probabilities() {
    let n = 500;
    let params = CsbmParams::symmetric(2, 1.0, 0.8, 0.2, n);
    let (g, labels) = csbm_generate::<f64>(&params, 7).unwrap();
    let (mut intra, mut inter) = (0usize, 0usize);
    for (i, j) in g.undirected_edges() {
        if labels[i] == labels[j] {
            intra += 1;
        } else {
            inter += 1;
        }
    }
    let intra_pairs = 2 * n * (n - 1) / 2;
    let inter_pairs = n * n;
    let fi = intra as f64 / intra_pairs as f64;
    let fx = inter as f64 / inter_pairs as f64;
    assert!((fi - 0.8).abs() < 0.01, "intra {fi}");
    assert!((fx - 0.2).abs() < 0.01, "inter {fx}");
}

#[test]
fn csbm_class_means_converge() {
    let n = 2000;
    let params = CsbmParams { mu1: vec![1.0, -0.5, 0.0], mu2: vec![-1.0, 0.25, 2.0], p: 0.0, q: 0.0, n_per_class: n };
    let (g, labels) = csbm_generate::<f64>(&params, 11).unwrap();
    let bound = 5.0 / (n as f64).sqrt();
    for (class, mu) in [&params.mu1, &params.mu2].into_iter().enumerate() {
        for (c, &m) in mu.iter().enumerate() {
            let mean: f64 = (0..2 * n).filter(|&i| labels[i] == class).map(|i| g.features().get(i, c)).sum::<f64>() / n as f64;
            assert!((mean - m).abs() < bound, "class {class} dim {c}: {mean} vs {m}");
        }
    }
}

fn node_dataset(sizes: &[usize], num_classes: usize) -> LabeledDataset {
    let mut labels = Vec::new();
    for (class, &count) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat_n(class, count));
    }
    let n = labels.len();
    let (g, _) = Graph::from_edges(n, &[], feats(n, 2, 0)).unwrap();
    LabeledDataset::node_task(vec![g], vec![labels], num_classes).unwrap()
}

#[test]
fn five_shot_on_seven_classes() {
    let ds = node_dataset(&[20; 7], 7);
    let split = kshot_sample(&ds, 5, 0).unwrap();
    assert_eq!(split.train_ids.len(), 35);
    assert_eq!(split.test_ids.len(), 140 - 35);
    let labels = ds.instance_labels();
    for class in 0..7 {
        assert_eq!(split.train_ids.iter().filter(|&&id| labels[id] == class).count(), 5);
    }
}

#[test]
fn zero_shot_puts_everything_in_test() {
    let ds = node_dataset(&[3, 4], 2);
    let split = kshot_sample(&ds, 0, 9).unwrap();
    assert!(split.train_ids.is_empty());
    assert_eq!(split.test_ids, (0..7).collect::<Vec<_>>());
}

#[test]
fn insufficient_class_is_named() {
    let ds = node_dataset(&[6, 2, 9], 3);
    let err = kshot_sample(&ds, 3, 0).unwrap_err();
    assert!(matches!(&err, Error::InsufficientData(m) if m.contains("class 1")), "{err}");
}

proptest! {
    #[test]
    fn kshot_is_deterministic_and_partitions(k in 0usize..5, seed in any::<u64>()) {
        let ds = node_dataset(&[8, 5, 12], 3);
        let a = kshot_sample(&ds, k, seed).unwrap();
        let b = kshot_sample(&ds, k, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mut all: Vec<usize> = a.train_ids.iter().chain(&a.test_ids).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..25).collect::<Vec<_>>());
    }
}

#[test]
fn different_seeds_usually_differ() {
    let ds = node_dataset(&[50, 50], 2);
    let distinct = (1..20u64)
        .filter(|&s| kshot_sample(&ds, 5, s).unwrap().train_ids != kshot_sample(&ds, 5, 0).unwrap().train_ids)
        .count();
    assert!(distinct >= 18);
}

#[test]
fn loads_smallest_container() {
    let text = r#"{"num_classes":2,"task":"node","graphs":[{"num_nodes":2,"edges":[[0,1]],"features":[[1.0],[2.0]],"node_labels":[0,1]}]}"#;
    let (ds, _) = dataset::parse_dataset(text).unwrap();
    assert_eq!(ds.graphs()[0].csr_offsets(), &[0, 1, 2]);
    assert!(ds.graph_labels().is_none());
}

#[test]
fn loader_collapses_duplicate_edges() {
    let text = r#"{"num_classes":1,"task":"node","graphs":[{"num_nodes":2,"edges":[[0,1],[0,1]],"features":[[0.0],[0.0]],"node_labels":[0,0]}]}"#;
    let (ds, stats) = dataset::parse_dataset(text).unwrap();
    assert_eq!(ds.graphs()[0].num_edges(), 1);
    assert_eq!(stats.duplicate_edges, 1);
}

#[test]
fn loader_rejects_unknown_keys_and_bad_labels() {
    let unknown = r#"{"num_classes":1,"task":"node","graphs":[],"extra":1}"#;
    assert!(matches!(dataset::parse_dataset(unknown), Err(Error::Parse(_))));
    let bad = r#"{"num_classes":2,"task":"graph","graphs":[{"num_nodes":1,"edges":[],"features":[[0.0]],"graph_label":2}]}"#;
    assert!(matches!(dataset::parse_dataset(bad), Err(Error::Validation(_))));
}

#[test]
fn malformed_container_reports_line() {
    let text = "{\"num_classes\":2,\n\"task\":\"node\",\n\"graphs\": [ {\"num_nodes\": \"x\"} ]}";
    let err = dataset::parse_dataset(text).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn graph_container_round_trips_bit_exact() {
    let graphs: Vec<_> = (0..10).map(|s| random_graph(4 + s as usize % 3, 0.5, s)).collect();
    let labels: Vec<usize> = (0..10).map(|s| s % 2).collect();
    let ds = LabeledDataset::graph_task(graphs, labels, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.graphs().len(), 10);
    assert!(back.node_labels().is_none());
    for (a, b) in ds.graphs().iter().zip(back.graphs()) {
        let bits = |t: &Tensor<f64>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.features()), bits(b.features()));
        assert_eq!(a.undirected_edges(), b.undirected_edges());
    }
}
