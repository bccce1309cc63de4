//! Finite-difference cases shared by the gradient tests and the acceptance run.

use bgrl::autograd::{Tape, Var};
use bgrl::bgnn::{one_hot_targets, BgnnConfig, BgnnModel, GraphBatch, WeightMode};
use bgrl::checkpoint::NamedTensors;
use bgrl::graph::{BipartiteSubgraph, Gene};
use bgrl::labels::Diagnosis;
use bgrl::ops::{BnMode, RunningStats};
use bgrl::volume::{AutoencoderConfig, AutoencoderModel};
use bgrl::{Task, Tensor};
use rand::Rng;

use super::{
    away_from_zero, distinct, fd_check, gradcheck, rng, uniform, weighted_sum, CheckStats,
};

pub type Case = (
    &'static str,
    Vec<Tensor>,
    Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
);

fn u(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    uniform(r, shape, -1.0, 1.0)
}

/// Every differentiable tape operation on one random micro-instance.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    let ws = seed + 1000;
    let mut cases: Vec<Case> = Vec::new();
    cases.push((
        "matmul",
        vec![u(r, &[2, 3]), u(r, &[3, 4])],
        Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "linear",
        vec![u(r, &[3, 4]), u(r, &[2, 4]), u(r, &[2])],
        Box::new(move |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "fully_connected",
        vec![u(r, &[5]), u(r, &[3, 5]), u(r, &[3])],
        Box::new(move |t, v| {
            let y = t.fully_connected(v[0], v[1], Some(v[2])).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "add_sub_mul_scale",
        vec![u(r, &[2, 3]), u(r, &[2, 3]), u(r, &[2, 3])],
        Box::new(move |t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let b = t.sub(a, v[2]).unwrap();
            let c = t.mul(b, v[0]).unwrap();
            let d = t.scale(c, -1.7);
            weighted_sum(t, d, ws)
        }),
    ));
    cases.push((
        "relu",
        vec![away_from_zero(r, &[3, 4])],
        Box::new(move |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "sum",
        vec![u(r, &[4])],
        Box::new(|t, v| {
            let sq = t.mul(v[0], v[0]).unwrap();
            t.sum(sq)
        }),
    ));
    cases.push((
        "mse_loss",
        vec![u(r, &[3, 2]), u(r, &[3, 2])],
        Box::new(|t, v| t.mse_loss(v[0], v[1]).unwrap()),
    ));
    cases.push((
        "reshape",
        vec![u(r, &[2, 6])],
        Box::new(move |t, v| {
            let y = t.reshape(v[0], &[3, 4]).unwrap();
            let y = t.mul(y, y).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "row_dot",
        vec![u(r, &[3, 5]), u(r, &[3, 5])],
        Box::new(move |t, v| {
            let y = t.row_dot(v[0], v[1]).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "scale_rows",
        vec![u(r, &[3]), u(r, &[3, 4])],
        Box::new(move |t, v| {
            let y = t.scale_rows(v[0], v[1]).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "conv3d_valid",
        vec![u(r, &[2, 2, 4, 4, 4]), u(r, &[3, 2, 3, 3, 3])],
        Box::new(move |t, v| {
            let y = t.conv3d(v[0], v[1], 0).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "conv3d_same",
        vec![u(r, &[1, 2, 3, 3, 3]), u(r, &[2, 2, 3, 3, 3])],
        Box::new(move |t, v| {
            let y = t.conv3d(v[0], v[1], 1).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "maxpool3d",
        vec![distinct(r, &[1, 2, 4, 4, 4])],
        Box::new(move |t, v| {
            let y = t.maxpool3d(v[0], 2).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "upsample3d",
        vec![u(r, &[1, 2, 2, 2, 2])],
        Box::new(move |t, v| {
            let y = t.upsample3d(v[0], 2).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    cases.push((
        "channel_bias",
        vec![u(r, &[2, 3, 2, 2, 2]), u(r, &[3])],
        Box::new(move |t, v| {
            let y = t.channel_bias(v[0], v[1]).unwrap();
            weighted_sum(t, y, ws)
        }),
    ));
    for (name, mode) in [
        ("batchnorm3d_train", BnMode::Train),
        ("batchnorm3d_eval", BnMode::Eval),
    ] {
        let mut stats = RunningStats::new(3);
        stats.mean = vec![0.2, -0.1, 0.05];
        stats.var = vec![0.7, 1.3, 0.9];
        cases.push((
            name,
            vec![
                u(r, &[2, 3, 2, 2, 2]),
                uniform(r, &[3], 0.5, 1.5),
                u(r, &[3]),
            ],
            Box::new(move |t, v| {
                let mut s = stats.clone();
                let y = t.batchnorm3d(v[0], v[1], v[2], mode, &mut s).unwrap();
                weighted_sum(t, y, ws)
            }),
        ));
    }
    cases
}

/// Random micro-batch of subgraphs over the given genes.
pub fn micro_graphs(
    seed: u64,
    genes: &[Gene],
    image_dim: usize,
    n: usize,
) -> Vec<BipartiteSubgraph> {
    let r = &mut rng(seed);
    (0..n)
        .map(|i| {
            let nodes = genes
                .iter()
                .map(|&g| (g, (0..g.dim()).map(|_| r.random_range(0.0..1.0)).collect()))
                .collect();
            let image = (0..image_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let dx = if i % 2 == 0 {
                Diagnosis::CN
            } else {
                Diagnosis::AD
            };
            BipartiteSubgraph::new(format!("g{i}"), dx, nodes, image)
        })
        .collect()
}

/// End-to-end BGNN loss: tape gradients of every parameter against central
/// differences taken through the checkpoint round trip.
pub fn bgnn_gradcheck(
    seed: u64,
    mode: WeightMode,
    include_self: bool,
    train_alpha: bool,
) -> Result<CheckStats, String> {
    let genes = [Gene::APOE, Gene::PSEN1];
    let graphs = micro_graphs(seed, &genes, 3, 4);
    let refs: Vec<&BipartiteSubgraph> = graphs.iter().collect();
    let cfg = BgnnConfig {
        d_h: 3,
        a_dim: 2,
        mode,
        include_self,
        train_alpha,
        ..BgnnConfig::new(&genes, 3, 2)
    };
    let model = BgnnModel::init(cfg.clone(), seed).map_err(|e| e.to_string())?;
    let batch = GraphBatch::from_subgraphs(&refs, &cfg).map_err(|e| e.to_string())?;
    let targets = one_hot_targets(&refs, Task::AdVsCn).map_err(|e| e.to_string())?;
    let (_, grads) = model
        .loss_gradients(&batch, &targets)
        .map_err(|e| e.to_string())?;
    let base = model.to_named();
    let loss_with = |name: &str, j: usize, delta: f64| -> f64 {
        let mut nt = NamedTensors::new();
        for (n, t) in &base.entries {
            let mut t = t.clone();
            if n == name {
                t.data_mut()[j] += delta;
            }
            nt.push(n.clone(), &t);
        }
        let m = BgnnModel::from_named(&nt).unwrap();
        m.loss_gradients(&batch, &targets).unwrap().0
    };
    let mut stats = CheckStats::default();
    for (name, g) in &grads {
        for (j, &a) in g.iter().enumerate() {
            stats.add(
                fd_check(a, |d| loss_with(name, j, d)).map_err(|e| format!("{name}[{j}]: {e}"))?,
            );
        }
    }
    let expect_phi = mode == WeightMode::Learned;
    if grads.iter().any(|(n, _)| n.starts_with("phi.")) != expect_phi {
        return Err(format!(
            "phi gradients present: {}, expected {expect_phi}",
            !expect_phi
        ));
    }
    if grads.iter().any(|(n, _)| n == "alpha") != (train_alpha && expect_phi) {
        return Err("alpha gradient presence does not match train_alpha".into());
    }
    if stats.checked == 0 {
        return Err("no gradients".into());
    }
    Ok(stats)
}

/// End-to-end autoencoder reconstruction loss on a micro config
/// (`2×1×8×8×8` batch, 2 channels per stage), with batch-norm in `mode`.
pub fn ae_gradcheck(seed: u64, mode: BnMode) -> Result<CheckStats, String> {
    let cfg = AutoencoderConfig {
        input_shape: [8, 8, 8],
        channels: vec![2, 2, 2],
        latent_dim: 4,
        ..AutoencoderConfig::default()
    };
    let r = &mut rng(seed);
    let noisy = uniform(r, &[2, 1, 8, 8, 8], -1.0, 2.0);
    let clean = uniform(r, &[2, 1, 8, 8, 8], 0.0, 1.0);
    let mut model = AutoencoderModel::new(cfg, seed).map_err(|e| e.to_string())?;
    if mode == BnMode::Eval {
        // settle running statistics so eval mode is not a trivial identity
        model
            .loss_gradients(&noisy, &clean, BnMode::Train)
            .map_err(|e| e.to_string())?;
    }
    let base = model.to_named();
    let (_, grads) = model
        .clone()
        .loss_gradients(&noisy, &clean, mode)
        .map_err(|e| e.to_string())?;
    let loss_with = |name: &str, j: usize, delta: f64| -> f64 {
        let mut nt = NamedTensors::new();
        for (n, t) in &base.entries {
            let mut t = t.clone();
            if n == name {
                t.data_mut()[j] += delta;
            }
            nt.push(n.clone(), &t);
        }
        let mut m = AutoencoderModel::from_named(&nt).unwrap();
        m.loss_gradients(&noisy, &clean, mode).unwrap().0
    };
    let mut stats = CheckStats::default();
    for (name, g) in &grads {
        for (j, &a) in g.iter().enumerate() {
            stats.add(
                fd_check(a, |d| loss_with(name, j, d)).map_err(|e| format!("{name}[{j}]: {e}"))?,
            );
        }
    }
    if grads.iter().any(|(n, _)| n.starts_with("latent.")) {
        return Err("reconstruction loss reached the latent head".into());
    }
    Ok(stats)
}

pub const BGNN_VARIANTS: [(&str, WeightMode, bool, bool); 4] = [
    ("bgnn_learned", WeightMode::Learned, true, false),
    ("bgnn_unit", WeightMode::Unit, true, false),
    ("bgnn_no_self", WeightMode::Learned, false, false),
    ("bgnn_train_alpha", WeightMode::Learned, true, true),
];

/// Runs every op case and BGNN variant on `seeds`; one entry per case and seed.
pub fn run_all(seeds: &[u64]) -> Vec<(String, Result<CheckStats, String>)> {
    let mut out = Vec::new();
    for &s in seeds {
        for (name, inputs, f) in op_cases(s) {
            out.push((format!("{name}/seed{s}"), gradcheck(&inputs, f)));
        }
        for (name, mode, include_self, train_alpha) in BGNN_VARIANTS {
            out.push((
                format!("{name}/seed{s}"),
                bgnn_gradcheck(s, mode, include_self, train_alpha),
            ));
        }
        out.push((
            format!("autoencoder_train/seed{s}"),
            ae_gradcheck(s, BnMode::Train),
        ));
        out.push((
            format!("autoencoder_eval/seed{s}"),
            ae_gradcheck(s, BnMode::Eval),
        ));
    }
    out
}
