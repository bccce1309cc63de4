mod common;

use bgrl::bgnn::{
    argmax, edge_pre_activation, edge_weight, train_gnn, BgnnConfig, BgnnModel, GnnTrainConfig,
    WeightMode,
};
use bgrl::eval::{
    confusion, metrics, run_experiment, EvaluationReport, ExperimentData, ExperimentSpec,
};
use bgrl::graph::{
    build_subgraphs, split_ids, BipartiteSubgraph, Gene, GeneExpressionTable, GeneRecord,
    MinMaxScaler, SynthConfig, GENE_COLUMNS,
};
use bgrl::labels::Diagnosis;
use bgrl::volume::{FeatureMatrix, FeatureRow};
use bgrl::{Task, Tensor};
use common::cases::micro_graphs;
use proptest::prelude::*;

fn small_model(mode: WeightMode, seed: u64) -> BgnnModel {
    let cfg = BgnnConfig {
        d_h: 4,
        a_dim: 3,
        mode,
        ..BgnnConfig::new(&Gene::ALL, 6, 2)
    };
    BgnnModel::init(cfg, seed).unwrap()
}

fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #[test]
    fn pre_activation_is_bilinear(
        xg in vecs(4), xi in vecs(5), z in vecs(20), a in -4.0f64..4.0, b in -4.0f64..4.0
    ) {
        let z = Tensor::new(&[4, 5], z).unwrap();
        let base = edge_pre_activation(&xg, &z, &xi).unwrap();
        let sxg: Vec<f64> = xg.iter().map(|v| a * v).collect();
        let sxi: Vec<f64> = xi.iter().map(|v| b * v).collect();
        let tol = 1e-10 * (1.0 + base.abs() * a.abs().max(b.abs()).max(1.0));
        prop_assert!((edge_pre_activation(&sxg, &z, &xi).unwrap() - a * base).abs() <= tol);
        prop_assert!((edge_pre_activation(&xg, &z, &sxi).unwrap() - b * base).abs() <= tol);
        prop_assert!(edge_weight(&xg, &z, &xi).unwrap() >= 0.0);
    }

    #[test]
    fn shifting_every_head_bias_keeps_the_prediction(seed in 0u64..1000, kappa in -50.0f64..50.0) {
        let mut m = small_model(WeightMode::Learned, seed);
        let sg = &micro_graphs(seed, &Gene::ALL, 6, 1)[0];
        let before = argmax(&m.predict(sg).unwrap());
        for b in m.head_mut().1.data_mut() {
            *b += kappa;
        }
        prop_assert_eq!(argmax(&m.predict(sg).unwrap()), before);
    }

    #[test]
    fn gene_node_order_does_not_change_the_embedding(seed in 0u64..1000, rot in 0usize..3) {
        let m = small_model(WeightMode::Learned, seed);
        let sg = micro_graphs(seed + 7, &Gene::ALL, 6, 1).remove(0);
        let mut nodes: Vec<(Gene, Vec<f64>)> =
            sg.gene_nodes.iter().map(|n| (n.gene, n.features.clone())).collect();
        nodes.rotate_left(rot);
        nodes.swap(0, 1);
        let permuted = BipartiteSubgraph::new(sg.sample_id.clone(), sg.diagnosis, nodes, sg.image.clone());
        let a = m.aggregate(&sg).unwrap();
        let b = m.aggregate(&permuted).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn stratified_split_arithmetic(
        sizes in prop::collection::vec(2usize..40, 3), seed in 0u64..10_000, task_i in 0usize..4
    ) {
        let task = [Task::AdVsCn, Task::AdVsMci, Task::CnVsMci, Task::ThreeWay][task_i];
        let ids: Vec<(String, Diagnosis)> = Diagnosis::ALL
            .iter()
            .zip(&sizes)
            .flat_map(|(&d, &n)| (0..n).map(move |i| (format!("{d}{i:03}"), d)))
            .collect();
        let p = split_ids(ids.iter().map(|(s, d)| (s.as_str(), *d)), seed, task, 0.2).unwrap();
        let in_task: Vec<&(String, Diagnosis)> =
            ids.iter().filter(|(_, d)| task.class_index(*d).is_some()).collect();
        let n = in_task.len();
        prop_assert_eq!(p.test.len(), (0.2 * n as f64).round() as usize);
        prop_assert_eq!(p.train.len() + p.test.len(), n);
        prop_assert!(p.train.iter().all(|id| !p.is_test(id)));
        for &c in task.classes() {
            let total = in_task.iter().filter(|(_, d)| *d == c).count();
            let tested = in_task.iter().filter(|(s, d)| *d == c && p.is_test(s)).count();
            let ideal = 0.2 * total as f64;
            prop_assert!((tested as f64 - ideal).abs() <= 1.0);
            prop_assert!(tested < total);
        }
        let again = split_ids(ids.iter().map(|(s, d)| (s.as_str(), *d)), seed, task, 0.2).unwrap();
        prop_assert_eq!(p, again);
    }

    #[test]
    fn normalized_train_columns_lie_in_unit_interval(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, GENE_COLUMNS), 2..30),
        n_train in 1usize..30
    ) {
        let table = gene_table(&rows);
        let n_train = n_train.min(rows.len());
        let train: Vec<String> = table.rows[..n_train].iter().map(|r| r.sample_id.clone()).collect();
        let scaler = MinMaxScaler::fit(&table, train.iter().map(String::as_str)).unwrap();
        let out = scaler.transform(&table);
        for r in &out.rows[..n_train] {
            prop_assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // refitting on the same ids is a pure recomputation
        prop_assert_eq!(&scaler, &MinMaxScaler::fit(&table, train.iter().map(String::as_str)).unwrap());
    }

    #[test]
    fn macro_equals_weighted_when_supports_are_equal(
        per_class in 1usize..20, k in 2usize..4, preds in prop::collection::vec(0usize..3, 60)
    ) {
        let truth: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat(c).take(per_class)).collect();
        let pred: Vec<usize> = truth.iter().zip(&preds).map(|(_, p)| p % k).collect();
        let m = metrics(&confusion(&truth, &pred, k).unwrap(), None).unwrap();
        prop_assert!((m.macro_f1 - m.weighted_f1).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_label_names(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..100), perm_i in 0usize..6
    ) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let p = perms[perm_i];
        let (t, q): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let tp: Vec<usize> = t.iter().map(|&c| p[c]).collect();
        let qp: Vec<usize> = q.iter().map(|&c| p[c]).collect();
        let a = metrics(&confusion(&t, &q, 3).unwrap(), None).unwrap().accuracy;
        let b = metrics(&confusion(&tp, &qp, 3).unwrap(), None).unwrap().accuracy;
        prop_assert_eq!(a, b);
    }
}

fn gene_table(rows: &[Vec<f64>]) -> GeneExpressionTable {
    GeneExpressionTable::new(
        rows.iter()
            .enumerate()
            .map(|(i, v)| GeneRecord {
                sample_id: format!("r{i:03}"),
                label: Diagnosis::ALL[i % 3],
                values: v.clone().try_into().unwrap(),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn normalization_degenerate_cases() {
    let mut rows = vec![vec![7.0; GENE_COLUMNS]; 4];
    for (i, r) in rows.iter_mut().enumerate().take(3) {
        r[0] = [0.0, 5.0, 10.0][i];
    }
    rows[3][0] = 20.0;
    let table = gene_table(&rows);
    let scaler = MinMaxScaler::fit(&table, ["r000", "r001", "r002"]).unwrap();
    let out = scaler.transform(&table);
    let col0: Vec<f64> = out.rows.iter().map(|r| r.values[0]).collect();
    assert_eq!(col0, vec![0.0, 0.5, 1.0, 2.0]);
    assert!(out
        .rows
        .iter()
        .all(|r| r.values[1..].iter().all(|&v| v == 0.0)));
}

#[test]
fn new_split_seed_refits_normalization() {
    let data = ExperimentData::synthetic(&SynthConfig {
        n: 40,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let ids = || {
        data.genes
            .rows
            .iter()
            .map(|r| (r.sample_id.as_str(), r.label))
    };
    let a = split_ids(ids(), 1, Task::AdVsCn, 0.2).unwrap();
    let b = split_ids(ids(), 2, Task::AdVsCn, 0.2).unwrap();
    assert_ne!(a.train, b.train);
    let fa = MinMaxScaler::fit(&data.genes, a.train.iter().map(String::as_str)).unwrap();
    let fb = MinMaxScaler::fit(&data.genes, b.train.iter().map(String::as_str)).unwrap();
    assert_ne!(fa, fb);
}

#[test]
fn subgraphs_do_not_depend_on_row_order() {
    let data = ExperimentData::synthetic(&SynthConfig {
        n: 16,
        seed: 5,
        image_dim: 8,
        ..Default::default()
    })
    .unwrap();
    let a = build_subgraphs(&data.genes, &data.images, &Gene::ALL).unwrap();
    let mut grows = data.genes.rows.clone();
    grows.reverse();
    let mut irows: Vec<FeatureRow> = data.images.rows().to_vec();
    irows.rotate_left(5);
    let b = build_subgraphs(
        &GeneExpressionTable::new(grows).unwrap(),
        &FeatureMatrix::new(irows).unwrap(),
        &Gene::ALL,
    )
    .unwrap();
    assert_eq!(a, b);
    for sg in &a {
        sg.validate(8).unwrap();
        assert_eq!(sg.edges.len(), 3);
    }
}

fn small_spec(mode: WeightMode) -> ExperimentSpec {
    ExperimentSpec {
        epochs: 40,
        d_h: 8,
        ..ExperimentSpec::new(Task::AdVsCn, mode, &Gene::ALL, &[1, 2])
    }
}

fn small_data() -> ExperimentData {
    ExperimentData::synthetic(&SynthConfig {
        n: 40,
        seed: 9,
        image_dim: 16,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn report_json_round_trips_bit_exactly() {
    let r = run_experiment(&small_data(), &small_spec(WeightMode::Learned)).unwrap();
    let text = r.to_json();
    let back = EvaluationReport::from_json(&text).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.to_json(), text);
}

#[test]
fn unit_mode_report_flags_unit_weights() {
    let r = run_experiment(&small_data(), &small_spec(WeightMode::Unit)).unwrap();
    assert!(r.edge_weights.all_unit);
    let l = run_experiment(&small_data(), &small_spec(WeightMode::Learned)).unwrap();
    assert!(!l.edge_weights.all_unit);
}

#[test]
fn experiments_are_deterministic() {
    let a = run_experiment(&small_data(), &small_spec(WeightMode::Learned)).unwrap();
    let b = run_experiment(&small_data(), &small_spec(WeightMode::Learned)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn training_leaves_alpha_and_unit_mode_phi_untouched() {
    let graphs = micro_graphs(4, &Gene::ALL, 6, 10);
    let refs: Vec<&BipartiteSubgraph> = graphs.iter().collect();
    let cfg = GnnTrainConfig {
        epochs: 20,
        ..GnnTrainConfig::new(Task::AdVsCn)
    };
    for mode in [WeightMode::Learned, WeightMode::Unit] {
        let mut m = small_model(mode, 1);
        let before = m.clone();
        train_gnn(&refs, &mut m, &cfg).unwrap();
        assert!(m.alpha().bit_eq(before.alpha()));
        assert!(!m.alpha().requires_grad());
        for g in Gene::ALL {
            let changed = !m.phi(g).unwrap().bit_eq(before.phi(g).unwrap());
            assert_eq!(changed, mode == WeightMode::Learned, "{mode} {g}");
        }
        assert!(!m.image_embedding_map().bit_eq(before.image_embedding_map()));
    }
}

#[test]
fn seeded_invariant_suite() {
    for (name, r) in common::invariants::all(100) {
        if let Err(e) = r {
            panic!("{name}: {e}");
        }
    }
}
