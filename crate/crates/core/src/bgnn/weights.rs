use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::graph::{BipartiteSubgraph, Gene};
use crate::labels::Task;

use super::model::{argmax, BgnnModel, GraphBatch};

/// Edge weights of one test subgraph along with its prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightRecord {
    pub sample_id: String,
    /// One entry per edge type, in canonical gene order.
    pub weights: Vec<(Gene, f64)>,
    pub predicted: usize,
    pub truth: usize,
}

pub fn collect_edge_weights(
    graphs: &[&BipartiteSubgraph],
    model: &BgnnModel,
    task: Task,
) -> Result<Vec<EdgeWeightRecord>> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    let batch = GraphBatch::from_subgraphs(graphs, &model.config)?;
    let mut tape = Tape::new();
    let fw = model.forward(&mut tape, &batch)?;
    let scores = tape.value(fw.scores);
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let truth = g.label(task).ok_or_else(|| {
                Error::contract(format!("`{}` is not part of task {task}", g.sample_id))
            })?;
            let weights = model
                .config
                .genes
                .iter()
                .zip(&fw.edge_weights)
                .map(|(&gene, e)| (gene, e.map_or(1.0, |v| tape.value(v).data()[i])))
                .collect();
            Ok(EdgeWeightRecord {
                sample_id: g.sample_id.clone(),
                weights,
                predicted: argmax(scores.row(i)),
                truth,
            })
        })
        .collect()
}

/// Averaged weight of one edge type over the subgraphs of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedWeight {
    pub gene: Gene,
    /// Sum of the class's weights divided by the gene's feature dimension.
    pub sum_over_dim: f64,
    /// Sum of the class's weights divided by the number of subgraphs.
    pub per_sample_mean: f64,
    pub count: usize,
}

/// Averages the records whose true class is `class`.
pub fn average_weights(records: &[EdgeWeightRecord], class: usize) -> Result<Vec<AveragedWeight>> {
    let members: Vec<&EdgeWeightRecord> = records.iter().filter(|r| r.truth == class).collect();
    let Some(first) = members.first() else {
        return Err(Error::UndefinedAverage(format!(
            "no records of class {class}"
        )));
    };
    let n = members.len();
    first
        .weights
        .iter()
        .enumerate()
        .map(|(k, &(gene, _))| {
            let mut total = 0.0;
            for r in &members {
                match r.weights.get(k) {
                    Some(&(g, w)) if g == gene => total += w,
                    _ => {
                        return Err(Error::contract(format!(
                            "record `{}` lacks a {gene} weight",
                            r.sample_id
                        )))
                    }
                }
            }
            Ok(AveragedWeight {
                gene,
                sum_over_dim: total / gene.dim() as f64,
                per_sample_mean: total / n as f64,
                count: n,
            })
        })
        .collect()
}
