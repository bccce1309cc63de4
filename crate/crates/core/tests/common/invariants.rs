//! Seeded randomized invariant checks, each returning the number of cases run.

use bgrl::bgnn::{
    edge_pre_activation, train_gnn, BgnnConfig, BgnnModel, GnnTrainConfig, WeightMode,
};
use bgrl::eval::{confusion, metrics};
use bgrl::graph::{
    split_ids, BipartiteSubgraph, Gene, GeneExpressionTable, GeneRecord, MinMaxScaler, GENE_COLUMNS,
};
use bgrl::labels::Diagnosis;
use bgrl::{Task, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::cases::micro_graphs;
use super::{rng, uniform};

type Check = Result<usize, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn bilinearity(trials: usize) -> Check {
    let r = &mut rng(401);
    for t in 0..trials {
        let (dg, di) = (r.random_range(1..5), r.random_range(1..8));
        let xg: Vec<f64> = uniform(r, &[dg], -2.0, 2.0).into_data();
        let xi: Vec<f64> = uniform(r, &[di], -2.0, 2.0).into_data();
        let z = uniform(r, &[dg, di], -1.0, 1.0);
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let base = edge_pre_activation(&xg, &z, &xi).unwrap();
        let sa =
            edge_pre_activation(&xg.iter().map(|v| a * v).collect::<Vec<_>>(), &z, &xi).unwrap();
        let sb =
            edge_pre_activation(&xg, &z, &xi.iter().map(|v| b * v).collect::<Vec<_>>()).unwrap();
        let tol = 1e-12 * (1.0 + base.abs()) * 4.0;
        ensure(
            (sa - a * base).abs() <= tol && (sb - b * base).abs() <= tol,
            || format!("trial {t}: pre({a}·x)={sa} vs {}", a * base),
        )?;
    }
    Ok(trials)
}

pub fn frozen_prior(trials: usize) -> Check {
    for t in 0..trials as u64 {
        let graphs = micro_graphs(t, &Gene::ALL, 5, 8);
        let refs: Vec<&BipartiteSubgraph> = graphs.iter().collect();
        for mode in [WeightMode::Learned, WeightMode::Unit] {
            let cfg = BgnnConfig {
                d_h: 4,
                a_dim: 3,
                mode,
                ..BgnnConfig::new(&Gene::ALL, 5, 2)
            };
            let mut m = BgnnModel::init(cfg, t).unwrap();
            let before = m.clone();
            train_gnn(
                &refs,
                &mut m,
                &GnnTrainConfig {
                    epochs: 10,
                    ..GnnTrainConfig::new(Task::AdVsCn)
                },
            )
            .unwrap();
            ensure(m.alpha().bit_eq(before.alpha()), || {
                format!("trial {t}: alpha moved in {mode}")
            })?;
            if mode == WeightMode::Unit {
                for g in Gene::ALL {
                    ensure(m.phi(g).unwrap().bit_eq(before.phi(g).unwrap()), || {
                        format!("trial {t}: unit mode moved phi.{g}")
                    })?;
                }
            }
        }
    }
    Ok(trials)
}

pub fn gene_order_invariance(trials: usize) -> Check {
    let r = &mut rng(403);
    for t in 0..trials as u64 {
        let mode = if t % 2 == 0 {
            WeightMode::Learned
        } else {
            WeightMode::Unit
        };
        let cfg = BgnnConfig {
            d_h: 4,
            a_dim: 3,
            mode,
            ..BgnnConfig::new(&Gene::ALL, 6, 2)
        };
        let m = BgnnModel::init(cfg, t).unwrap();
        let sg = micro_graphs(t + 1000, &Gene::ALL, 6, 1).remove(0);
        let mut nodes: Vec<(Gene, Vec<f64>)> = sg
            .gene_nodes
            .iter()
            .map(|n| (n.gene, n.features.clone()))
            .collect();
        nodes.shuffle(r);
        let p = BipartiteSubgraph::new(sg.sample_id.clone(), sg.diagnosis, nodes, sg.image.clone());
        let (a, b) = (m.aggregate(&sg).unwrap(), m.aggregate(&p).unwrap());
        ensure(
            a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
            || format!("trial {t}: permuted gene nodes changed the embedding"),
        )?;
    }
    Ok(trials)
}

pub fn split_arithmetic(trials: usize) -> Check {
    let r = &mut rng(404);
    let tasks = [Task::AdVsCn, Task::AdVsMci, Task::CnVsMci, Task::ThreeWay];
    for t in 0..trials {
        let sizes: Vec<usize> = (0..3).map(|_| r.random_range(2..50)).collect();
        let ids: Vec<(String, Diagnosis)> = Diagnosis::ALL
            .iter()
            .zip(&sizes)
            .flat_map(|(&d, &n)| (0..n).map(move |i| (format!("{d}{i:03}"), d)))
            .collect();
        let task = tasks[t % 4];
        let seed = r.random_range(0..1_000_000);
        let p = split_ids(ids.iter().map(|(s, d)| (s.as_str(), *d)), seed, task, 0.2).unwrap();
        let n: usize = task
            .classes()
            .iter()
            .map(|c| sizes[Diagnosis::ALL.iter().position(|d| d == c).unwrap()])
            .sum();
        ensure(p.test.len() == (0.2 * n as f64).round() as usize, || {
            format!("trial {t}: |test| = {} for N = {n}", p.test.len())
        })?;
        ensure(p.train.len() + p.test.len() == n, || {
            format!("trial {t}: union is not the task set")
        })?;
        ensure(p.train.iter().all(|id| !p.is_test(id)), || {
            format!("trial {t}: overlap")
        })?;
        for c in task.classes() {
            let total = ids.iter().filter(|(_, d)| d == c).count();
            let tested = p.test.iter().filter(|s| s.starts_with(c.as_str())).count();
            ensure((tested as f64 - 0.2 * total as f64).abs() <= 1.0, || {
                format!("trial {t}: class {c} has {tested}/{total} in test")
            })?;
        }
    }
    Ok(trials)
}

pub fn normalization(trials: usize) -> Check {
    let r = &mut rng(405);
    for t in 0..trials {
        let n = r.random_range(2..20);
        let constant_col = r.random_range(0..GENE_COLUMNS);
        let rows: Vec<GeneRecord> = (0..n)
            .map(|i| {
                let mut values = [0.0; GENE_COLUMNS];
                for (j, v) in values.iter_mut().enumerate() {
                    *v = if j == constant_col {
                        7.0
                    } else {
                        r.random_range(-50.0..50.0)
                    };
                }
                GeneRecord {
                    sample_id: format!("r{i:02}"),
                    label: Diagnosis::CN,
                    values,
                }
            })
            .collect();
        let table = GeneExpressionTable::new(rows).unwrap();
        let k = r.random_range(1..=n);
        let train: Vec<&str> = table.rows[..k]
            .iter()
            .map(|r| r.sample_id.as_str())
            .collect();
        let scaler = MinMaxScaler::fit(&table, train.iter().copied()).unwrap();
        let out = scaler.transform(&table);
        for (i, row) in out.rows.iter().enumerate() {
            ensure(row.values[constant_col] == 0.0, || {
                format!("trial {t}: constant column not 0")
            })?;
            if i < k {
                ensure(row.values.iter().all(|v| (0.0..=1.0).contains(v)), || {
                    format!("trial {t}: train row {i} outside [0,1]")
                })?;
            }
        }
    }
    let col = Tensor::from_vec(vec![0.0, 5.0, 10.0]);
    let rows: Vec<GeneRecord> = col
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut values = [7.0; GENE_COLUMNS];
            values[0] = v;
            GeneRecord {
                sample_id: format!("c{i}"),
                label: Diagnosis::AD,
                values,
            }
        })
        .collect();
    let table = GeneExpressionTable::new(rows).unwrap();
    let s = MinMaxScaler::fit(&table, ["c0", "c1", "c2"]).unwrap();
    ensure(
        [0.0, 5.0, 10.0, 20.0].map(|x| s.apply(x, 0)) == [0.0, 0.5, 1.0, 2.0]
            && s.apply(7.0, 1) == 0.0,
        || "column [0,5,10] or constant column mapped wrongly".into(),
    )?;
    Ok(trials + 1)
}

pub fn metric_invariants(trials: usize) -> Check {
    let r = &mut rng(406);
    for t in 0..trials {
        let k = r.random_range(2..4);
        let per = r.random_range(1..15);
        let truth: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, per)).collect();
        let pred: Vec<usize> = truth.iter().map(|_| r.random_range(0..k)).collect();
        let m = metrics(&confusion(&truth, &pred, k).unwrap(), None).unwrap();
        ensure((m.macro_f1 - m.weighted_f1).abs() < 1e-12, || {
            format!("trial {t}: macro != weighted")
        })?;
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(r);
        let tp: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let mp = metrics(&confusion(&tp, &pp, k).unwrap(), None).unwrap();
        ensure(mp.accuracy == m.accuracy, || {
            format!("trial {t}: accuracy changed under relabeling")
        })?;
    }
    Ok(trials)
}

pub fn all(trials: usize) -> Vec<(&'static str, Check)> {
    vec![
        ("pre-activation bilinearity", bilinearity(trials)),
        (
            "frozen prior / untouched unit-mode phi",
            frozen_prior(trials.min(10)),
        ),
        (
            "gene-node permutation invariance",
            gene_order_invariance(trials),
        ),
        ("stratified split arithmetic", split_arithmetic(trials)),
        (
            "normalization incl. degenerate columns",
            normalization(trials),
        ),
        (
            "macro = weighted on equal support; relabeling",
            metric_invariants(trials),
        ),
    ]
}
