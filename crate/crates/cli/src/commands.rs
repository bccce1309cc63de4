use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use bgrl::bgnn::{BgnnModel, BGNN_MAGIC};
use bgrl::checkpoint::NamedTensors;
use bgrl::config::RunConfig;
use bgrl::eval::{
    ablation_suite, assemble_report, render_report, render_weights, seed_result, train_one,
    EvaluationReport, ExperimentData, ExperimentSpec,
};
use bgrl::graph::{
    build_subgraphs, generate_synthetic, parse_gene_list, DatasetPartition, GeneExpressionTable,
    MinMaxScaler, SynthConfig,
};
use bgrl::optim::AdamConfig;
use bgrl::volume::{
    extract_features, phantom_volumes, slice_rank_select, train_autoencoder, AeTrainConfig,
    AutoencoderConfig, AutoencoderModel, FeatureMatrix, VolumeSample, AE_MAGIC,
};
use bgrl::{Diagnosis, Tensor};
use log::info;

use crate::artifacts::{read_volume_dir, write_volume_dir, Layout};
use crate::{AblateArgs, Cli, Command, GnnArgs, ReportArgs, StageArgs, SynthArgs};

const GENES: &str = "genes.csv";
const FEATURES: &str = "features.csv";
const TRUTH: &str = "truth.csv";
const RAW_VOLUMES: &str = "volumes";
const PREPROCESSED: &str = "preprocessed";
const AE_CKPT: &str = "ae.ckpt";
const GNN_CKPT: &str = "gnn.ckpt";
const SPLIT: &str = "split.csv";
const REPORT: &str = "report.json";

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let layout = Layout {
        dir: cli
            .dir
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| ".".into()),
    };
    match &cli.command {
        Command::Synth(a) => synth(&cli, cfg, &layout, a),
        Command::Preprocess(a) => preprocess(&cfg, &layout, a),
        Command::TrainAe(a) => train_ae(&cfg, &layout, a),
        Command::Extract(a) => extract(&layout, a),
        Command::TrainGnn(a) => train_gnn(cfg, &layout, a),
        Command::Eval => eval(cfg, &layout),
        Command::Ablate(a) => ablate(&cli, cfg, &layout, a),
        Command::ReportWeights(a) => report_weights(&layout, a),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("`--set {kv}`: expected KEY=VALUE"))?;
        cfg.set_override(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents).with_context(|| format!("cannot write `{}`", path.display()))
}

fn load_data(cfg: &RunConfig, layout: &Layout) -> Result<ExperimentData> {
    let genes = cfg.genes_csv.clone().unwrap_or_else(|| layout.file(GENES));
    let features = cfg
        .features_csv
        .clone()
        .unwrap_or_else(|| layout.file(FEATURES));
    Ok(ExperimentData {
        genes: GeneExpressionTable::load(&genes)?,
        images: FeatureMatrix::load(&features)?,
    })
}

fn synth(cli: &Cli, cfg: RunConfig, layout: &Layout, a: &SynthArgs) -> Result<()> {
    let sc = SynthConfig {
        n: a.n.unwrap_or(cfg.synth_n),
        seed: cli.seed.unwrap_or(cfg.synth_seed),
        signal: a.signal.unwrap_or(cfg.synth_signal),
        carriers: match &a.carriers {
            Some(c) => parse_gene_list(c)?,
            None => cfg.synth_carriers.clone(),
        },
        ..Default::default()
    };
    let data = generate_synthetic(&sc)?;
    layout.create()?;
    data.genes.save(&layout.file(GENES))?;
    data.images.save(&layout.file(FEATURES))?;
    write(layout.file(TRUTH), &data.truth_manifest())?;
    let ad = data.truth.iter().filter(|(_, y)| *y == 1).count();
    println!(
        "wrote {} subjects ({} CN, {ad} AD), {} image features, to {}",
        data.truth.len(),
        data.truth.len() - ad,
        data.images.dim(),
        layout.dir.display()
    );
    if a.volumes {
        let subjects: Vec<(String, Diagnosis)> = data
            .genes
            .rows
            .iter()
            .map(|r| (r.sample_id.clone(), r.label))
            .collect();
        let vols = phantom_volumes(&subjects, a.size, sc.seed);
        write_volume_dir(&layout.file(RAW_VOLUMES), &vols)?;
        println!("wrote {} phantom volumes of side {}", vols.len(), a.size);
    }
    Ok(())
}

fn volume_input(a: &StageArgs, default: PathBuf) -> PathBuf {
    a.input.clone().unwrap_or(default)
}

fn preprocess(cfg: &RunConfig, layout: &Layout, a: &StageArgs) -> Result<()> {
    let input = a
        .input
        .clone()
        .or_else(|| cfg.volumes_dir.clone())
        .unwrap_or_else(|| layout.file(RAW_VOLUMES));
    let out: Vec<VolumeSample> = read_volume_dir(&input)?
        .into_iter()
        .map(|s| {
            let kept = slice_rank_select(&s.volume, cfg.slice_k)
                .with_context(|| format!("`{}` (slice_k = {})", s.sample_id, cfg.slice_k))?;
            Ok(VolumeSample::new(s.sample_id, kept, s.label)?)
        })
        .collect::<Result<_>>()?;
    write_volume_dir(&layout.file(PREPROCESSED), &out)?;
    println!("kept {} slices of {} volumes", cfg.slice_k, out.len());
    Ok(())
}

fn ae_config(cfg: &RunConfig) -> AeTrainConfig {
    AeTrainConfig {
        arch: AutoencoderConfig {
            input_shape: cfg.ae_input,
            channels: cfg.ae_channels.clone(),
            kernel: cfg.ae_kernel,
            padding: cfg.ae_padding,
            pool: cfg.ae_pool,
            latent_dim: cfg.latent_dim,
        },
        epochs: cfg.epochs_ae,
        lr: cfg.lr_ae,
        min_lr: cfg.min_lr_ae,
        batch_size: cfg.batch_ae,
        seed: cfg.seed,
        adam: AdamConfig {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        },
    }
}

fn train_ae(cfg: &RunConfig, layout: &Layout, a: &StageArgs) -> Result<()> {
    let vols = read_volume_dir(&volume_input(a, layout.file(PREPROCESSED)))?;
    let tc = ae_config(cfg);
    if let Some(s) = vols
        .iter()
        .find(|s| s.volume.shape() != tc.arch.input_shape)
    {
        return Err(bgrl::Error::Config {
            key: "ae_input".into(),
            line: 0,
            msg: format!(
                "`{}` has shape {:?} but the autoencoder expects {:?}",
                s.sample_id,
                s.volume.shape(),
                tc.arch.input_shape
            ),
        }
        .into());
    }
    let (model, trace) = train_autoencoder(&vols, &tc)?;
    model.to_named().save(&layout.file(AE_CKPT), AE_MAGIC)?;
    write(layout.file("ae_loss.csv"), &loss_csv(&trace))?;
    println!(
        "autoencoder: {} epochs, loss {:.5} -> {:.5}",
        trace.len(),
        trace[0],
        trace[trace.len() - 1]
    );
    Ok(())
}

fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

fn extract(layout: &Layout, a: &StageArgs) -> Result<()> {
    let model =
        AutoencoderModel::from_named(&NamedTensors::load(&layout.file(AE_CKPT), AE_MAGIC)?)?;
    let vols = read_volume_dir(&volume_input(a, layout.file(PREPROCESSED)))?;
    let features = extract_features(&model, &vols)?;
    features.save(&layout.file(FEATURES))?;
    println!("extracted {} x {} features", features.len(), features.dim());
    Ok(())
}

fn train_gnn(mut cfg: RunConfig, layout: &Layout, a: &GnnArgs) -> Result<()> {
    if let Some(m) = &a.mode {
        cfg.set_override("mode", m)?;
    }
    if let Some(g) = &a.genes {
        cfg.set_override("gene_subset", g)?;
    }
    let data = load_data(&cfg, layout)?;
    let spec = ExperimentSpec::from_config(&cfg);
    let run = train_one(&data, &spec, cfg.seed)?;
    let final_loss = run.loss_trace[run.loss_trace.len() - 1];
    let mut nt = run.model.to_named();
    nt.push("norm.min", &Tensor::from_vec(run.scaler.min.clone()));
    nt.push("norm.max", &Tensor::from_vec(run.scaler.max.clone()));
    nt.push("train.seed", &Tensor::from_vec(vec![cfg.seed as f64]));
    nt.push("train.final_loss", &Tensor::from_vec(vec![final_loss]));
    layout.create()?;
    nt.save(&layout.file(GNN_CKPT), BGNN_MAGIC)?;
    run.partition.save_manifest(&layout.file(SPLIT))?;
    write(layout.file("gnn_loss.csv"), &loss_csv(&run.loss_trace))?;
    println!(
        "trained {} BGNN on {} ({} train / {} test), final loss {final_loss:.5}",
        cfg.mode,
        cfg.gene_subset_name(),
        run.partition.train.len(),
        run.partition.test.len()
    );
    Ok(())
}

fn eval(mut cfg: RunConfig, layout: &Layout) -> Result<()> {
    let ckpt = layout.file(GNN_CKPT);
    let nt = NamedTensors::load(&ckpt, BGNN_MAGIC)?;
    let model = BgnnModel::from_named(&nt)?;
    let scaler = MinMaxScaler {
        min: nt.get("norm.min")?.data().to_vec(),
        max: nt.get("norm.max")?.data().to_vec(),
    };
    let seed = nt.get("train.seed")?.data()[0] as u64;
    let final_loss = nt.get("train.final_loss")?.data()[0];
    if model.config.n_classes != cfg.task.n_classes() {
        bail!(
            "checkpoint `{}` has {} classes but task {} has {}",
            ckpt.display(),
            model.config.n_classes,
            cfg.task,
            cfg.task.n_classes()
        );
    }
    let partition = DatasetPartition::load_manifest(&layout.file(SPLIT), seed, cfg.task)?;
    let data = load_data(&cfg, layout)?;
    let genes = scaler.transform(&data.genes);
    let graphs = build_subgraphs(&genes, &data.images, &model.config.genes)?;
    let test = partition.test_items(&graphs, |g| &g.sample_id);
    if test.len() != partition.test.len() {
        bail!(
            "{} of {} test subjects are missing from the gene or feature table",
            partition.test.len() - test.len(),
            partition.test.len()
        );
    }
    let (result, all_unit) = seed_result(seed, &partition, &model, final_loss, &test, cfg.task)?;

    cfg.mode = model.config.mode;
    cfg.gene_subset = model.config.genes.clone();
    cfg.seed = seed;
    cfg.seeds = vec![seed];
    let mut report = assemble_report(&ExperimentSpec::from_config(&cfg), vec![result], all_unit);
    report.config = cfg.snapshot();
    write(layout.file(REPORT), &report.to_json())?;
    let text = render_report(&report);
    write(layout.file("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn ablate(cli: &Cli, mut cfg: RunConfig, layout: &Layout, a: &AblateArgs) -> Result<()> {
    if let Some(s) = &a.seeds {
        cfg.set_override("seeds", s)?;
    } else if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if a.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let data = load_data(&cfg, layout)?;
    info!("ablation over seeds {:?} with {} jobs", cfg.seeds, a.jobs);
    let table = ablation_suite(&data, &ExperimentSpec::from_config(&cfg), a.jobs)?;
    layout.create()?;
    write(layout.file("ablation.json"), &table.to_json())?;
    let text = table.render();
    write(layout.file("ablation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn report_weights(layout: &Layout, a: &ReportArgs) -> Result<()> {
    let path = a.report.clone().unwrap_or_else(|| layout.file(REPORT));
    if !path.exists() {
        return Err(bgrl::Error::MissingArtifact(path).into());
    }
    let report = EvaluationReport::from_json(&std::fs::read_to_string(&path)?)
        .with_context(|| format!("reading `{}`", path.display()))?;
    print!("{}", render_weights(&report.edge_weights));
    Ok(())
}
