use log::debug;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::graph::BipartiteSubgraph;
use crate::labels::Task;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

use super::model::{argmax, BgnnModel, GraphBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct GnnTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub task: Task,
    pub adam: AdamConfig,
}

impl GnnTrainConfig {
    pub fn new(task: Task) -> Self {
        Self {
            epochs: 800,
            lr: 9e-3,
            task,
            adam: AdamConfig::default(),
        }
    }
}

/// One-hot targets for `graphs` under `task`.
pub fn one_hot_targets(graphs: &[&BipartiteSubgraph], task: Task) -> Result<Tensor> {
    let k = task.n_classes();
    let mut data = vec![0.0; graphs.len() * k];
    for (i, g) in graphs.iter().enumerate() {
        let c = g.label(task).ok_or_else(|| {
            Error::contract(format!(
                "`{}` ({}) is not part of task {task}",
                g.sample_id, g.diagnosis
            ))
        })?;
        data[i * k + c] = 1.0;
    }
    Tensor::new(&[graphs.len(), k], data)
}

/// Full-batch Adam on the mean squared error between class scores and
/// one-hot targets. Returns the per-epoch loss trace.
pub fn train_gnn(
    train: &[&BipartiteSubgraph],
    model: &mut BgnnModel,
    cfg: &GnnTrainConfig,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::contract("cannot train on an empty train set"));
    }
    if cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::contract("epochs and learning rate must be positive"));
    }
    if model.config.n_classes != cfg.task.n_classes() {
        return Err(Error::contract(format!(
            "model has {} classes, task {} has {}",
            model.config.n_classes,
            cfg.task,
            cfg.task.n_classes()
        )));
    }
    let batch = GraphBatch::from_subgraphs(train, &model.config)?;
    let targets = one_hot_targets(train, cfg.task)?;
    let trainable = model.trainable();
    let mut adam = AdamState::new(
        &trainable
            .iter()
            .map(|&id| model.param(id))
            .collect::<Vec<_>>(),
        cfg.adam.clone(),
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let fw = model.forward(&mut tape, &batch)?;
        let y = tape.constant(targets.clone());
        let loss = tape.mse_loss(fw.scores, y)?;
        trace.push(tape.value(loss).data()[0]);
        let grads = tape.backward(loss)?;
        for &(id, v) in &fw.params {
            if trainable.contains(&id) {
                let p = model.param_mut(id);
                p.zero_grad();
                grads.accumulate_into(v, p);
            }
        }
        adam.step(&mut model_params_mut(model, &trainable), cfg.lr);
        if epoch % 100 == 0 {
            debug!("gnn epoch {} loss {:.6}", epoch + 1, trace[epoch]);
        }
    }
    Ok(trace)
}

fn model_params_mut<'a>(
    model: &'a mut BgnnModel,
    ids: &[super::model::ParamId],
) -> Vec<&'a mut Tensor> {
    use super::model::ParamId;
    let BgnnModel {
        alpha,
        phi,
        v_gene,
        v_img,
        head_w,
        head_b,
        ..
    } = model;
    let mut phi: Vec<Option<&mut Tensor>> = phi.iter_mut().map(Some).collect();
    let mut v_gene: Vec<Option<&mut Tensor>> = v_gene.iter_mut().map(Some).collect();
    let mut alpha = Some(alpha);
    let mut v_img = Some(v_img);
    let mut head_w = Some(head_w);
    let mut head_b = Some(head_b);
    ids.iter()
        .map(|id| {
            match *id {
                ParamId::Alpha => alpha.take(),
                ParamId::Phi(i) => phi[i].take(),
                ParamId::VGene(i) => v_gene[i].take(),
                ParamId::VImg => v_img.take(),
                ParamId::HeadW => head_w.take(),
                ParamId::HeadB => head_b.take(),
            }
            .expect("parameter ids are unique")
        })
        .collect()
}

/// Predicted class per subgraph (argmax of scores, lower index on ties).
pub fn predict_classes(model: &BgnnModel, graphs: &[&BipartiteSubgraph]) -> Result<Vec<usize>> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    let batch = GraphBatch::from_subgraphs(graphs, &model.config)?;
    let mut tape = Tape::new();
    let fw = model.forward(&mut tape, &batch)?;
    let scores = tape.value(fw.scores);
    Ok((0..graphs.len()).map(|i| argmax(scores.row(i))).collect())
}

/// Fraction of `graphs` whose predicted class matches the task label.
pub fn accuracy(model: &BgnnModel, graphs: &[&BipartiteSubgraph], task: Task) -> Result<f64> {
    let preds = predict_classes(model, graphs)?;
    let correct = graphs
        .iter()
        .zip(&preds)
        .filter(|(g, &p)| g.label(task) == Some(p))
        .count();
    Ok(correct as f64 / graphs.len().max(1) as f64)
}
