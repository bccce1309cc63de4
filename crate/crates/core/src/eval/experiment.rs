//! Seeded end-to-end experiments and the ablation grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bgnn::{
    average_weights, collect_edge_weights, train_gnn, AveragedWeight, BgnnConfig, BgnnModel,
    EdgeWeightRecord, GnnTrainConfig, WeightMode,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{
    build_subgraphs, generate_synthetic, split_ids, BipartiteSubgraph, DatasetPartition, Gene,
    GeneExpressionTable, MinMaxScaler, SynthConfig,
};
use crate::labels::Task;
use crate::optim::AdamConfig;
use crate::volume::FeatureMatrix;

use super::metrics::{confusion, metrics, ConfusionMatrix, MetricSet};

/// Raw (unnormalized) gene table plus image features.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub genes: GeneExpressionTable,
    pub images: FeatureMatrix,
}

impl ExperimentData {
    pub fn synthetic(cfg: &SynthConfig) -> Result<Self> {
        let d = generate_synthetic(cfg)?;
        Ok(Self {
            genes: d.genes,
            images: d.images,
        })
    }
}

/// Everything that defines one experiment besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub task: Task,
    pub mode: WeightMode,
    pub gene_subset: Vec<Gene>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    pub d_h: usize,
    pub a_dim: usize,
    pub include_self: bool,
    pub train_alpha: bool,
    pub test_fraction: f64,
    pub adam: AdamConfig,
}

impl ExperimentSpec {
    pub fn new(task: Task, mode: WeightMode, gene_subset: &[Gene], seeds: &[u64]) -> Self {
        let mut gene_subset = gene_subset.to_vec();
        gene_subset.sort();
        gene_subset.dedup();
        Self {
            task,
            mode,
            gene_subset,
            seeds: seeds.to_vec(),
            epochs: 800,
            lr: 9e-3,
            d_h: 64,
            a_dim: 16,
            include_self: true,
            train_alpha: false,
            test_fraction: 0.2,
            adam: AdamConfig::default(),
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            task: cfg.task,
            mode: cfg.mode,
            gene_subset: cfg.gene_subset.clone(),
            seeds: cfg.seeds.clone(),
            epochs: cfg.epochs_gnn,
            lr: cfg.lr_gnn,
            d_h: cfg.d_h,
            a_dim: cfg.a_dim,
            include_self: cfg.include_self,
            train_alpha: cfg.train_alpha,
            test_fraction: 1.0 - cfg.train_fraction,
            adam: AdamConfig {
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
            },
        }
    }

    pub fn model_config(&self, image_dim: usize) -> BgnnConfig {
        BgnnConfig {
            d_h: self.d_h,
            a_dim: self.a_dim,
            mode: self.mode,
            include_self: self.include_self,
            train_alpha: self.train_alpha,
            ..BgnnConfig::new(&self.gene_subset, image_dim, self.task.n_classes())
        }
    }

    pub fn train_config(&self) -> GnnTrainConfig {
        GnnTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            task: self.task,
            adam: self.adam.clone(),
        }
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.to_string());
        put("mode", self.mode.to_string());
        put("gene_subset", gene_csv(&self.gene_subset));
        put(
            "seeds",
            self.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("epochs_gnn", self.epochs.to_string());
        put("lr_gnn", self.lr.to_string());
        put("d_h", self.d_h.to_string());
        put("a_dim", self.a_dim.to_string());
        put("include_self", self.include_self.to_string());
        put("train_alpha", self.train_alpha.to_string());
        put("train_fraction", (1.0 - self.test_fraction).to_string());
        m
    }
}

fn gene_csv(genes: &[Gene]) -> String {
    genes
        .iter()
        .map(|g| g.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

/// Averaged edge weights of one true class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub class: usize,
    pub label: String,
    pub weights: Vec<AveragedWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
    pub final_train_loss: f64,
    /// Classes absent from the test set are omitted.
    pub edge_weights: Vec<ClassWeights>,
}

/// Headline numbers of one run: the positive class's F1/recall/precision for
/// binary tasks, macro averages of the per-class values otherwise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl Summary {
    pub fn of(m: &MetricSet) -> Self {
        let (f1, recall, precision) = match &m.positive {
            Some(p) => (p.f1.value, p.recall.value, p.precision.value),
            None => {
                let k = m.per_class.len() as f64;
                let mean = |f: &dyn Fn(&super::metrics::ClassMetrics) -> f64| {
                    m.per_class.iter().map(f).sum::<f64>() / k
                };
                (
                    mean(&|c| c.f1.value),
                    mean(&|c| c.recall.value),
                    mean(&|c| c.precision.value),
                )
            }
        };
        Self {
            f1,
            recall,
            precision,
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            weighted_f1: m.weighted_f1,
        }
    }

    fn fields(&self) -> [f64; 6] {
        [
            self.f1,
            self.recall,
            self.precision,
            self.accuracy,
            self.macro_f1,
            self.weighted_f1,
        ]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        let [f1, recall, precision, accuracy, macro_f1, weighted_f1] = f;
        Self {
            f1,
            recall,
            precision,
            accuracy,
            macro_f1,
            weighted_f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub mean: Summary,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: Summary,
    pub per_seed: Vec<SeedResult>,
}

/// Edge-weight averages pooled across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub class: usize,
    pub label: String,
    pub gene: Gene,
    pub mean_sum_over_dim: f64,
    pub mean_per_sample: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightBlock {
    /// True when every recorded weight is exactly 1 (unit-weights mode).
    pub all_unit: bool,
    pub mean_over_seeds: Vec<WeightSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub mode: WeightMode,
    pub gene_subset: Vec<Gene>,
    pub seeds: Vec<u64>,
    pub metrics: MetricsBlock,
    pub edge_weights: EdgeWeightBlock,
    pub config: BTreeMap<String, String>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Output of one seed's training, kept for checkpointing and weight reports.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub partition: DatasetPartition,
    pub scaler: MinMaxScaler,
    pub model: BgnnModel,
    pub loss_trace: Vec<f64>,
    pub test_graphs: Vec<BipartiteSubgraph>,
}

/// Split, normalize on train, build subgraphs and train one model.
pub fn train_one(data: &ExperimentData, spec: &ExperimentSpec, seed: u64) -> Result<TrainedRun> {
    let shared: Vec<(&str, crate::labels::Diagnosis)> = data
        .genes
        .rows
        .iter()
        .filter(|r| data.images.get(&r.sample_id).is_some())
        .map(|r| (r.sample_id.as_str(), r.label))
        .collect();
    if shared.is_empty() {
        return Err(Error::EmptyDataset(
            "no sample ids shared by the gene and image tables".into(),
        ));
    }
    let partition = split_ids(shared, seed, spec.task, spec.test_fraction)?;
    let scaler = MinMaxScaler::fit(&data.genes, partition.train.iter().map(String::as_str))?;
    let genes = scaler.transform(&data.genes);
    let graphs = build_subgraphs(&genes, &data.images, &spec.gene_subset)?;
    let train: Vec<&BipartiteSubgraph> = partition.train_items(&graphs, |g| &g.sample_id);
    let mut model = BgnnModel::init(spec.model_config(data.images.dim()), seed)?;
    let loss_trace = train_gnn(&train, &mut model, &spec.train_config())?;
    let test_graphs = partition
        .test_items(&graphs, |g| &g.sample_id)
        .into_iter()
        .cloned()
        .collect();
    Ok(TrainedRun {
        partition,
        scaler,
        model,
        loss_trace,
        test_graphs,
    })
}

/// Confusion, metrics and per-class averaged edge weights on test graphs.
pub fn evaluate(
    model: &BgnnModel,
    test: &[&BipartiteSubgraph],
    task: Task,
) -> Result<(
    ConfusionMatrix,
    MetricSet,
    Vec<EdgeWeightRecord>,
    Vec<ClassWeights>,
)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test partition is empty".into()));
    }
    let records = collect_edge_weights(test, model, task)?;
    let truth: Vec<usize> = records.iter().map(|r| r.truth).collect();
    let pred: Vec<usize> = records.iter().map(|r| r.predicted).collect();
    let cm = confusion(&truth, &pred, task.n_classes())?;
    let ms = metrics(&cm, task.positive_class())?;
    let mut weights = Vec::new();
    for (class, label) in task.classes().iter().enumerate() {
        if truth.contains(&class) {
            weights.push(ClassWeights {
                class,
                label: label.to_string(),
                weights: average_weights(&records, class)?,
            });
        }
    }
    Ok((cm, ms, records, weights))
}

/// Scores a trained model on its test graphs. The flag is true when every
/// recorded edge weight is exactly 1.
pub fn seed_result(
    seed: u64,
    partition: &DatasetPartition,
    model: &BgnnModel,
    final_train_loss: f64,
    test: &[&BipartiteSubgraph],
    task: Task,
) -> Result<(SeedResult, bool)> {
    let (cm, ms, records, weights) = evaluate(model, test, task)?;
    let all_unit = records
        .iter()
        .all(|r| r.weights.iter().all(|&(_, w)| w == 1.0));
    Ok((
        SeedResult {
            seed,
            n_train: partition.train.len(),
            n_test: partition.test.len(),
            confusion: cm,
            metrics: ms,
            final_train_loss,
            edge_weights: weights,
        },
        all_unit,
    ))
}

fn run_seed(data: &ExperimentData, spec: &ExperimentSpec, seed: u64) -> Result<(SeedResult, bool)> {
    let run = train_one(data, spec, seed)?;
    let test: Vec<&BipartiteSubgraph> = run.test_graphs.iter().collect();
    let loss = *run.loss_trace.last().expect("epochs ≥ 1");
    seed_result(seed, &run.partition, &run.model, loss, &test, spec.task)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the full pipeline once per seed (split and init both use the seed)
/// and aggregates the results.
pub fn run_experiment(data: &ExperimentData, spec: &ExperimentSpec) -> Result<EvaluationReport> {
    if spec.seeds.is_empty() {
        return Err(Error::contract("experiment needs at least one seed"));
    }
    let results = spec
        .seeds
        .iter()
        .map(|&s| run_seed(data, spec, s))
        .collect::<Result<Vec<_>>>()?;
    let all_unit = results.iter().all(|(_, u)| *u);
    let per_seed: Vec<SeedResult> = results.into_iter().map(|(r, _)| r).collect();
    Ok(assemble_report(spec, per_seed, all_unit))
}

/// Mean and sample standard deviation of the headline metrics, and edge
/// weights pooled over seeds.
pub fn assemble_report(
    spec: &ExperimentSpec,
    per_seed: Vec<SeedResult>,
    all_unit: bool,
) -> EvaluationReport {
    let summaries: Vec<[f64; 6]> = per_seed
        .iter()
        .map(|r| Summary::of(&r.metrics).fields())
        .collect();
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for k in 0..6 {
        let col: Vec<f64> = summaries.iter().map(|s| s[k]).collect();
        (mean[k], std[k]) = mean_std(&col);
    }

    type Pool = (String, Vec<f64>, Vec<f64>);
    let mut pooled: BTreeMap<(usize, Gene), Pool> = BTreeMap::new();
    for r in &per_seed {
        for cw in &r.edge_weights {
            for w in &cw.weights {
                let e = pooled
                    .entry((cw.class, w.gene))
                    .or_insert_with(|| (cw.label.clone(), Vec::new(), Vec::new()));
                e.1.push(w.sum_over_dim);
                e.2.push(w.per_sample_mean);
            }
        }
    }
    let mean_over_seeds = pooled
        .into_iter()
        .map(|((class, gene), (label, sod, psm))| WeightSummary {
            class,
            label,
            gene,
            mean_sum_over_dim: mean_std(&sod).0,
            mean_per_sample: mean_std(&psm).0,
        })
        .collect();

    EvaluationReport {
        task: spec.task,
        mode: spec.mode,
        gene_subset: spec.gene_subset.clone(),
        seeds: spec.seeds.clone(),
        metrics: MetricsBlock {
            mean: Summary::from_fields(mean),
            std: Summary::from_fields(std),
            per_seed,
        },
        edge_weights: EdgeWeightBlock {
            all_unit,
            mean_over_seeds,
        },
        config: spec.snapshot(),
    }
}

/// The gene subsets of the ablation grid: all three genes, then each pair.
pub fn ablation_subsets() -> Vec<Vec<Gene>> {
    use Gene::*;
    vec![
        vec![APOE, PSEN1, PSEN2],
        vec![APOE, PSEN1],
        vec![APOE, PSEN2],
        vec![PSEN1, PSEN2],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: WeightMode,
    pub gene_subset: Vec<Gene>,
    pub mean: Summary,
    pub std: Summary,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// `{learned, unit} × {all genes, each pair}`, run on up to `jobs` threads.
/// Row order is fixed: learned rows first, subsets in [`ablation_subsets`]
/// order.
pub fn ablation_suite(
    data: &ExperimentData,
    base: &ExperimentSpec,
    jobs: usize,
) -> Result<AblationTable> {
    if data.genes.is_empty() {
        return Err(Error::EmptyDataset("gene table is empty".into()));
    }
    let grid: Vec<(WeightMode, Vec<Gene>)> = [WeightMode::Learned, WeightMode::Unit]
        .into_iter()
        .flat_map(|m| ablation_subsets().into_iter().map(move |s| (m, s)))
        .collect();
    let run = |(mode, subset): &(WeightMode, Vec<Gene>)| -> Result<AblationRow> {
        let spec = ExperimentSpec {
            mode: *mode,
            gene_subset: subset.clone(),
            ..base.clone()
        };
        let report = run_experiment(data, &spec)?;
        Ok(AblationRow {
            mode: *mode,
            gene_subset: subset.clone(),
            mean: report.metrics.mean.clone(),
            std: report.metrics.std.clone(),
            report,
        })
    };
    let rows = if jobs <= 1 {
        grid.iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
        pool.install(|| grid.par_iter().map(run).collect::<Result<Vec<_>>>())?
    };
    Ok(AblationTable {
        task: base.task,
        seeds: base.seeds.clone(),
        rows,
    })
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// Aligned text table: one row per mode × subset, columns F1, recall,
    /// precision, accuracy, macro and weighted F1 as `mean ± sd` percentages.
    pub fn render(&self) -> String {
        let header = [
            "Mode",
            "Genes",
            "F1",
            "Recall",
            "Precision",
            "Accuracy",
            "Macro Avg",
            "Weighted Avg",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut row = vec![
                match r.mode {
                    WeightMode::Learned => "w/ weights".to_string(),
                    WeightMode::Unit => "w/o weights".to_string(),
                },
                format!(
                    "{{{}, MRI}}",
                    r.gene_subset
                        .iter()
                        .map(|g| g.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            ];
            for (m, s) in r.mean.fields().iter().zip(r.std.fields()) {
                row.push(format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s));
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = format!(
            "task {} | seeds {}\n",
            self.task,
            self.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        );
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}", w = w))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}

/// Plain-text rendering of one report: summary metrics and the averaged
/// edge weights per class.
pub fn render_report(r: &EvaluationReport) -> String {
    let mut out = format!(
        "task {} | mode {} | genes {} | seeds {}\n",
        r.task,
        r.mode,
        gene_csv(&r.gene_subset),
        r.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    let names = [
        "F1",
        "Recall",
        "Precision",
        "Accuracy",
        "Macro Avg",
        "Weighted Avg",
    ];
    for ((n, m), s) in names
        .iter()
        .zip(r.metrics.mean.fields())
        .zip(r.metrics.std.fields())
    {
        out.push_str(&format!("{n:<13}{:>6.1} ± {:.1}\n", 100.0 * m, 100.0 * s));
    }
    out.push_str(&render_weights(&r.edge_weights));
    out
}

pub fn render_weights(w: &EdgeWeightBlock) -> String {
    let mut out = String::from("edge weights (mean over seeds)\n");
    out.push_str(&format!(
        "{:<6}{:<7}{:>16}{:>18}\n",
        "class", "gene", "sum/d_gene", "per-sample mean"
    ));
    for s in &w.mean_over_seeds {
        out.push_str(&format!(
            "{:<6}{:<7}{:>16.6}{:>18.6}\n",
            s.label, s.gene, s.mean_sum_over_dim, s.mean_per_sample
        ));
    }
    if w.all_unit {
        out.push_str("all edge weights are 1 (unit-weights mode)\n");
    }
    out
}
