use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gnn::{GnnModel, LayerPrompt, Linear, ModelKind, Readout};
use crate::graph::{csbm_generate, kshot_sample, CsbmParams, FewShotSplit, Graph, LabeledDataset, Task};
use crate::tensor::{Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_graph(n: usize, density: f64, dim: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    let x = Tensor::uniform(n, dim, -1.0, 1.0, &mut r);
    Graph::from_edges(n, &edges, x).unwrap().0
}

fn gcn(dims: &[usize], seed: u64) -> GnnModel {
    GnnModel::new(ModelKind::Gcn, dims, &mut rng(seed)).unwrap()
}

fn randomized(params: &PromptParams, seed: u64) -> PromptParams {
    let mut out = params.clone();
    let mut r = rng(seed);
    for t in out.tensors_mut() {
        *t = Tensor::uniform(t.rows(), t.cols(), -0.5, 0.5, &mut r);
    }
    out
}

fn node_dataset(g: Graph, labels: Vec<usize>, classes: usize) -> LabeledDataset {
    LabeledDataset::node_task(vec![g], vec![labels], classes).unwrap()
}

fn split_of(train: Vec<usize>, test: Vec<usize>) -> FewShotSplit {
    FewShotSplit { train_ids: train, test_ids: test, shots_per_class: 1, seed: 0 }
}

#[test]
fn shared_prompt_materialises_one_row_per_entry() {
    let (g, _) = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], Tensor::ones(4, 3)).unwrap();
    let model = gcn(&[3, 2, 2], 1);
    let mut params = EdgePromptParams::zeros(&model);
    assert!(materialize_edgeprompt(&params, &model, &g).unwrap().layers.iter().all(|t| t.max_abs() == 0.0));
    params.layers[0] = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
    let bundle = materialize_edgeprompt(&params, &model, &g).unwrap();
    assert_eq!(bundle.layers[0].shape(), (6, 3));
    assert!(bundle.layers[0].to_rows().iter().all(|r| r == &vec![0.5, -1.0, 2.0]));
    params.layers[1] = Tensor::zeros(1, 3);
    assert!(matches!(materialize_edgeprompt(&params, &model, &g), Err(crate::Error::Shape(_))));
}

#[test]
fn shared_prompt_gradient_is_sum_of_per_entry_gradients() {
    let g = random_graph(7, 0.5, 3, 2);
    let model = gcn(&[3, 4, 2], 3);
    let ctx = model.context(&g);
    let p = Tensor::uniform(1, 3, -1.0, 1.0, &mut rng(4));
    let labels: Rc<[usize]> = (0..7).map(|i| i % 2).collect();

    let tape = Tape::new();
    let vars = model.attach(&tape, false);
    let pv = tape.param(p.clone());
    let out = vars
        .forward(&ctx, tape.constant(g.features().clone()), |l, _| Ok(if l == 0 { LayerPrompt::Shared(pv) } else { LayerPrompt::None }))
        .unwrap();
    let shared = tape.backward(&out.cross_entropy(Rc::clone(&labels)).unwrap()).unwrap().wrt(&pv);

    let tape = Tape::new();
    let vars = model.attach(&tape, false);
    let rows = tape.param(materialize_edgeprompt(&EdgePromptParams { layers: vec![p.clone(), Tensor::zeros(1, 4)] }, &model, &g).unwrap().layers[0].clone());
    let out = vars
        .forward(&ctx, tape.constant(g.features().clone()), |l, _| Ok(if l == 0 { LayerPrompt::PerEntry(rows) } else { LayerPrompt::None }))
        .unwrap();
    let per_entry = tape.backward(&out.cross_entropy(labels).unwrap()).unwrap().wrt(&rows);
    for c in 0..3 {
        let total: f64 = (0..per_entry.rows()).map(|r| per_entry.get(r, c)).sum();
        assert!((total - shared.get(0, c)).abs() < 1e-12);
    }
}

/// Scores straight from the formula, one entry at a time.
fn scores_reference(g: &Graph, h: &Tensor, w: &Tensor, slope: f64) -> Tensor {
    let d = h.cols();
    let m = w.cols();
    let mut out = Tensor::zeros(g.num_entries(), m);
    for i in 0..g.num_nodes() {
        for &j in g.neighbors(i) {
            let k = g.entry(i, j).unwrap();
            let cat: Vec<f64> = h.row(i).iter().chain(h.row(j)).copied().collect();
            let logits: Vec<f64> = (0..m)
                .map(|c| {
                    let z: f64 = (0..2 * d).map(|r| cat[r] * w.get(r, c)).sum();
                    if z > 0.0 { z } else { slope * z }
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            for c in 0..m {
                out.set(k, c, (logits[c] - max).exp() / denom);
            }
        }
    }
    out
}

#[test]
fn score_vector_examples() {
    let g = random_graph(6, 0.6, 3, 5);
    let model = gcn(&[3, 4], 1);
    let h = g.features().clone();
    let single = EdgePromptPlusParams::init(&model, 1, 0.2, &mut rng(2)).unwrap();
    assert!(score_vectors(&single, &model, &h, &g, 0).unwrap().data().iter().all(|&v| v == 1.0));
    let mut flat = EdgePromptPlusParams::init(&model, 4, 0.2, &mut rng(2)).unwrap();
    flat.score_weights[0] = Tensor::zeros(6, 4);
    assert!(score_vectors(&flat, &model, &h, &g, 0).unwrap().data().iter().all(|&v| v == 0.25));
    assert!(score_vectors(&flat, &model, &Tensor::zeros(6, 2), &g, 0).is_err());
    assert!(score_vectors(&flat, &model, &h, &g, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn scores_and_mixtures_match_the_formula(n in 1usize..9, m in 1usize..6, seed in any::<u64>()) {
        let g = random_graph(n, 0.6, 3, seed);
        let model = gcn(&[3, 4], seed);
        let mut params = EdgePromptPlusParams::init(&model, m, 0.2, &mut rng(seed ^ 1)).unwrap();
        params.score_weights[0] = Tensor::uniform(6, m, -2.0, 2.0, &mut rng(seed ^ 2));
        params.anchors[0] = Tensor::uniform(m, 3, -1.0, 1.0, &mut rng(seed ^ 3));
        let h = g.features().clone();
        let s = score_vectors(&params, &model, &h, &g, 0).unwrap();
        let want = scores_reference(&g, &h, &params.score_weights[0], 0.2);
        for (a, b) in s.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for r in 0..s.rows() {
            prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let prompts = materialize_edgeprompt_plus(&params, &model, &h, &g, 0).unwrap();
        let anchors = &params.anchors[0];
        for k in 0..prompts.rows() {
            for c in 0..3 {
                let brute: f64 = (0..m).map(|a| want.get(k, a) * anchors.get(a, c)).sum();
                prop_assert!((prompts.get(k, c) - brute).abs() < 1e-12);
                let lo = (0..m).map(|a| anchors.get(a, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..m).map(|a| anchors.get(a, c)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(prompts.get(k, c) >= lo - 1e-12 && prompts.get(k, c) <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn degenerate_anchor_sets() {
    let g = random_graph(7, 0.5, 3, 9);
    let model = gcn(&[3, 4], 1);
    let mut one = EdgePromptPlusParams::init(&model, 1, 0.2, &mut rng(1)).unwrap();
    one.anchors[0] = Tensor::from_rows(&[vec![0.3, -0.7, 1.9]]).unwrap();
    let rows = materialize_edgeprompt_plus(&one, &model, g.features(), &g, 0).unwrap();
    assert!(rows.to_rows().iter().all(|r| r == &vec![0.3, -0.7, 1.9]));

    let mut same = EdgePromptPlusParams::init(&model, 3, 0.2, &mut rng(1)).unwrap();
    same.anchors[0] = Tensor::from_rows(&vec![vec![0.3, -0.7, 1.9]; 3]).unwrap();
    let rows = materialize_edgeprompt_plus(&same, &model, g.features(), &g, 0).unwrap();
    for r in rows.to_rows() {
        for (a, b) in r.iter().zip([0.3, -0.7, 1.9]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn single_anchor_forward_equals_shared_prompt_bitwise(n in 1usize..10, seed in any::<u64>(), gin in any::<bool>()) {
        let kind = if gin { ModelKind::Gin } else { ModelKind::Gcn };
        let g = random_graph(n, 0.5, 3, seed);
        let model = GnnModel::new(kind, &[3, 5, 4], &mut rng(seed ^ 1)).unwrap();
        let plus = randomized(&PromptParams::init(Method::EdgePromptPlus, &model, 1, 0.2, &mut rng(2)).unwrap(), seed ^ 3);
        let PromptParams::EdgePlus(p) = &plus else { unreachable!() };
        let shared = PromptParams::Edge(EdgePromptParams { layers: p.anchors.clone() });
        let a = prompted_representations(&model, &plus, &g).unwrap();
        let b = prompted_representations(&model, &shared, &g).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn node_prompt_examples() {
    let x = Tensor::uniform(5, 3, -1.0, 1.0, &mut rng(1));
    let zero = NodePromptParams::Gpf { prompt: Tensor::zeros(1, 3) };
    assert_eq!(apply_node_prompt(&zero, &x).unwrap(), x);
    let p = Tensor::from_rows(&[vec![0.1, 0.2, -0.3]]).unwrap();
    let gpf = apply_node_prompt(&NodePromptParams::Gpf { prompt: p.clone() }, &x).unwrap();
    let plus = NodePromptParams::GpfPlus { basis: p.clone(), score: Tensor::uniform(3, 1, -1.0, 1.0, &mut rng(2)) };
    assert_eq!(apply_node_prompt(&plus, &x).unwrap(), gpf);
    assert!(apply_node_prompt(&NodePromptParams::Gpf { prompt: Tensor::zeros(1, 2) }, &x).is_err());
}

fn tiny_node_task(seed: u64) -> (LabeledDataset, Vec<usize>) {
    let g = random_graph(9, 0.4, 3, seed);
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    (node_dataset(g, labels, 3), (0..9).collect())
}

#[test]
fn tuning_loss_gradients_match_finite_differences() {
    for kind in [ModelKind::Gcn, ModelKind::Gin] {
        let (ds, ids) = tiny_node_task(10);
        let model = GnnModel::new(kind, &[3, 4, 4], &mut rng(11)).unwrap();
        for method in Method::ALL {
            let prompts = randomized(&PromptParams::init(method, &model, 3, 0.2, &mut rng(12)).unwrap(), 13);
            let head = Linear::glorot(4, 3, &mut rng(14));
            let c = PromptedClassifier { method, prompts, head, readout: Readout::Sum };
            for (name, err) in tuning_loss_gradient_errors(&model, &c, &ds, &ids, 1e-6).unwrap() {
                assert!(err < 1e-5, "{kind} {method} {name}: {err}");
            }
        }
    }
    let graphs: Vec<Graph> = (0..4).map(|k| random_graph(5, 0.5, 3, 20 + k)).collect();
    let ds = LabeledDataset::graph_task(graphs, vec![0, 1, 0, 1], 2).unwrap();
    let model = gcn(&[3, 4, 4], 21);
    for method in Method::ALL {
        let prompts = randomized(&PromptParams::init(method, &model, 2, 0.2, &mut rng(12)).unwrap(), 13);
        let c = PromptedClassifier { method, prompts, head: Linear::glorot(4, 2, &mut rng(3)), readout: Readout::Mean };
        for (name, err) in tuning_loss_gradient_errors(&model, &c, &ds, &[0, 1, 2, 3], 1e-6).unwrap() {
            assert!(err < 1e-5, "graph {method} {name}: {err}");
        }
    }
}

fn cfg(epochs: usize, anchors: usize, lr: f64) -> TuneConfig {
    TuneConfig { epochs, anchors, learning_rate: lr, seed: 5, ..TuneConfig::for_task(Task::Node) }
}

#[test]
fn classifier_only_fits_separable_representations() {
    // No edges: each representation is an affine map of its own features.
    let mut x = Tensor::zeros(20, 2);
    for i in 0..20 {
        let sign = if i < 10 { 1.0 } else { -1.0 };
        x.set(i, 0, sign * (1.0 + 0.1 * i as f64));
        x.set(i, 1, 0.05 * i as f64);
    }
    let (g, _) = Graph::from_edges(20, &[], x).unwrap();
    let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
    let ds = node_dataset(g, labels, 2);
    let model = gcn(&[2, 8, 8], 1);
    let split = split_of((0..20).collect(), vec![]);
    let tuned = tune_node_classification(&model, &ds, &split, Method::ClassifierOnly, &cfg(200, 1, 0.01)).unwrap();
    assert_eq!(tuned.history.len(), 200);
    assert_eq!(tuned.history.last().unwrap().train_acc, 1.0);
}

fn csbm_node_task(n: usize, seed: u64) -> LabeledDataset {
    let params = CsbmParams::symmetric(4, 1.0, 0.3, 0.05, n);
    let (g, labels) = csbm_generate(&params, seed).unwrap();
    node_dataset(g, labels, 2)
}

#[test]
fn single_anchor_tuning_reproduces_edgeprompt_and_backbone_stays_frozen() {
    let ds = csbm_node_task(20, 3);
    let split = kshot_sample(&ds, 3, 7).unwrap();
    let model = gcn(&[4, 8, 8], 2);
    let digest = model.digest();
    let ep = tune_node_classification(&model, &ds, &split, Method::EdgePrompt, &cfg(30, 1, 0.01)).unwrap();
    let plus = tune_node_classification(&model, &ds, &split, Method::EdgePromptPlus, &cfg(30, 1, 0.01)).unwrap();
    for (a, b) in ep.history.iter().zip(&plus.history) {
        assert!((a.loss - b.loss).abs() <= 1e-12 && a.train_acc == b.train_acc);
    }
    let PromptParams::Edge(p) = &ep.classifier.prompts else { unreachable!() };
    let PromptParams::EdgePlus(q) = &plus.classifier.prompts else { unreachable!() };
    assert_eq!(p.layers, q.anchors);
    assert_eq!(ep.classifier.head, plus.classifier.head);
    assert_eq!(model.digest(), digest);
}

#[test]
fn zero_prompts_start_at_the_classifier_only_loss() {
    let ds = csbm_node_task(15, 4);
    let split = kshot_sample(&ds, 2, 1).unwrap();
    let model = gcn(&[4, 6, 6], 2);
    let base = tune_node_classification(&model, &ds, &split, Method::ClassifierOnly, &cfg(1, 3, 0.01)).unwrap();
    for method in Method::ALL {
        let run = tune_node_classification(&model, &ds, &split, method, &cfg(1, 3, 0.01)).unwrap();
        assert!((run.history[0].loss - base.history[0].loss).abs() < 1e-12, "{method}");
    }
}

#[test]
fn tuning_rejects_mismatched_inputs() {
    let ds = csbm_node_task(10, 1);
    let split = kshot_sample(&ds, 2, 1).unwrap();
    let model = gcn(&[5, 4], 1);
    let err = tune_node_classification(&model, &ds, &split, Method::EdgePrompt, &cfg(1, 1, 0.01)).unwrap_err();
    assert!(matches!(err, crate::Error::Config(_)));
    let model = gcn(&[4, 4], 1);
    assert!(tune_graph_classification(&model, &ds, &split, Method::EdgePrompt, &cfg(1, 1, 0.01)).is_err());
    assert!(tune_node_classification(&model, &ds, &split_of(vec![], vec![]), Method::Gpf, &cfg(1, 1, 0.01)).is_err());
}

fn csbm_graph_task(count: usize, seed: u64) -> LabeledDataset {
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    for k in 0..count {
        let class = k % 2;
        let (p, q) = if class == 0 { (0.7, 0.1) } else { (0.3, 0.3) };
        let params = CsbmParams::symmetric(4, 1.0, p, q, 6);
        graphs.push(csbm_generate(&params, seed + k as u64).unwrap().0);
        labels.push(class);
    }
    LabeledDataset::graph_task(graphs, labels, 2).unwrap()
}

#[test]
fn graph_tuning_batches_match_single_graph_evaluation() {
    let ds = csbm_graph_task(10, 1);
    let model = gcn(&[4, 6, 6], 2);
    let split = kshot_sample(&ds, 3, 2).unwrap();
    let tuned = tune_graph_classification(&model, &ds, &split, Method::EdgePromptPlus, &TuneConfig { epochs: 3, batch_size: 4, ..TuneConfig::for_task(Task::Graph) }).unwrap();
    let ids: Vec<usize> = (0..10).collect();
    let together = tuned.classifier.logits(&model, &ds, &ids).unwrap();
    for &i in &ids {
        let alone = tuned.classifier.logits(&model, &ds, &[i]).unwrap();
        for c in 0..2 {
            assert!((alone.get(0, c) - together.get(i, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn edgeprompt_plus_fits_graph_training_sets_at_least_as_well() {
    let ds = csbm_graph_task(60, 100);
    let model = GnnModel::new(ModelKind::Gin, &[4, 16, 16], &mut rng(3)).unwrap();
    let digest = model.digest();
    let mut plus = 0.0;
    let mut base = 0.0;
    for seed in 0..5 {
        let split = kshot_sample(&ds, 10, seed).unwrap();
        let c = TuneConfig { seed, learning_rate: 0.01, ..TuneConfig::for_task(Task::Graph) };
        plus += tune_graph_classification(&model, &ds, &split, Method::EdgePromptPlus, &c).unwrap().history.last().unwrap().train_acc;
        base += tune_graph_classification(&model, &ds, &split, Method::ClassifierOnly, &c).unwrap().history.last().unwrap().train_acc;
    }
    assert!(plus >= base, "{} vs {}", plus / 5.0, base / 5.0);
    assert_eq!(model.digest(), digest);
}

#[test]
fn evaluation_examples() {
    // One-hot features, no edges, identity-like backbone.
    let (g, _) = Graph::from_edges(4, &[], Tensor::identity(4)).unwrap();
    let ds = node_dataset(g, vec![0, 1, 2, 3], 4);
    let layer = crate::gnn::Layer::Gcn { linear: Linear::new(Tensor::identity(4), Tensor::zeros(1, 4)).unwrap(), relu: false };
    let model = GnnModel::from_layers(ModelKind::Gcn, vec![layer]).unwrap();
    let perfect = PromptedClassifier {
        method: Method::ClassifierOnly,
        prompts: PromptParams::None,
        head: Linear::new(Tensor::identity(4), Tensor::zeros(1, 4)).unwrap(),
        readout: Readout::Sum,
    };
    assert_eq!(evaluate_accuracy(&model, &perfect, &ds, &[0, 1, 2, 3]).unwrap(), 1.0);
    assert!(matches!(evaluate_accuracy(&model, &perfect, &ds, &[]), Err(crate::Error::Config(_))));
    // Ties go to the lowest class.
    let flat = PromptedClassifier { head: Linear::zeros(4, 4), ..perfect.clone() };
    assert_eq!(evaluate_accuracy(&model, &flat, &ds, &[0, 1, 2, 3]).unwrap(), 0.25);

    let ds = csbm_node_task(250, 9);
    let model = gcn(&[4, 8, 8], 4);
    let ids: Vec<usize> = (0..500).collect();
    let mut accs = Vec::new();
    for seed in 0..10 {
        let random = PromptedClassifier { head: Linear::glorot(8, 2, &mut rng(seed)), ..perfect.clone() };
        let a = evaluate_accuracy(&model, &random, &ds, &ids).unwrap();
        assert_eq!(a, evaluate_accuracy(&model, &random, &ds, &ids).unwrap());
        accs.push(a);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "{accs:?}");
}

#[test]
fn prompt_files_round_trip_and_check_the_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let ds = csbm_node_task(10, 2);
    let split = kshot_sample(&ds, 2, 3).unwrap();
    let model = gcn(&[4, 6, 6], 1);
    for method in Method::ALL {
        let tuned = tune_node_classification(&model, &ds, &split, method, &cfg(2, 3, 0.01)).unwrap();
        let file = PromptFile::new(&model, tuned.classifier, Task::Node, 2, 3, 5);
        let path = dir.path().join(format!("{method}.bin"));
        save_prompt_file(&file, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], PROMPT_MAGIC);
        let back = load_prompt_file(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        back.check_backbone(&model).unwrap();
        let other = gcn(&[4, 6, 6], 2);
        assert!(matches!(back.check_backbone(&other), Err(crate::Error::Compatibility(_))));
        assert!(PromptFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn method_names_parse() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
    }
    assert!("prompt".parse::<Method>().is_err());
}
