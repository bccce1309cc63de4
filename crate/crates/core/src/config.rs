//! Run configuration: a line-based `key = value` file with `#` comments.
//!
//! Absent keys take the defaults below. Unknown keys, unparseable values and
//! out-of-range values are rejected with the key and line number.
//!
//! | key | default |
//! |-----|---------|
//! | `task` | `AD-vs-CN` |
//! | `mode` | `learned` |
//! | `gene_subset` | `APOE,PSEN1,PSEN2` |
//! | `epochs_ae` / `lr_ae` / `min_lr_ae` / `batch_ae` | `100` / `9e-4` / `0` / `4` |
//! | `ae_input` / `ae_channels` | `64,64,64` / `8,16,32` |
//! | `ae_kernel` / `ae_padding` / `ae_pool` | `3` / `1` / `2` |
//! | `latent_dim` / `slice_k` | `512` / `64` |
//! | `epochs_gnn` / `lr_gnn` | `800` / `9e-3` |
//! | `a_dim` / `d_h` | `16` / `64` |
//! | `include_self` / `train_alpha` | `true` / `false` |
//! | `train_fraction` | `0.8` |
//! | `n_classes` | derived from `task` |
//! | `seed` / `seeds` | `0` / `1,2,3,4,5` |
//! | `synth_n` / `synth_signal` / `synth_carriers` / `synth_seed` | `120` / `1.0` / `PSEN1,PSEN2` / `0` |
//! | `adam_beta1` / `adam_beta2` / `adam_eps` | `0.9` / `0.999` / `1e-8` |
//! | `genes_csv` / `features_csv` / `volumes_dir` / `out_dir` | unset |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bgnn::WeightMode;
use crate::error::{Error, Result};
use crate::graph::{gene_list_name, parse_gene_list, Gene};
use crate::labels::Task;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub mode: WeightMode,
    pub gene_subset: Vec<Gene>,
    pub epochs_ae: usize,
    pub lr_ae: f64,
    pub min_lr_ae: f64,
    pub batch_ae: usize,
    pub ae_input: [usize; 3],
    pub ae_channels: Vec<usize>,
    pub ae_kernel: usize,
    pub ae_padding: usize,
    pub ae_pool: usize,
    pub latent_dim: usize,
    pub slice_k: usize,
    pub epochs_gnn: usize,
    pub lr_gnn: f64,
    pub a_dim: usize,
    pub d_h: usize,
    pub include_self: bool,
    pub train_alpha: bool,
    pub train_fraction: f64,
    pub n_classes: Option<usize>,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub synth_n: usize,
    pub synth_signal: f64,
    pub synth_carriers: Vec<Gene>,
    pub synth_seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub genes_csv: Option<PathBuf>,
    pub features_csv: Option<PathBuf>,
    pub volumes_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::AdVsCn,
            mode: WeightMode::Learned,
            gene_subset: Gene::ALL.to_vec(),
            epochs_ae: 100,
            lr_ae: 9e-4,
            min_lr_ae: 0.0,
            batch_ae: 4,
            ae_input: [64, 64, 64],
            ae_channels: vec![8, 16, 32],
            ae_kernel: 3,
            ae_padding: 1,
            ae_pool: 2,
            latent_dim: 512,
            slice_k: 64,
            epochs_gnn: 800,
            lr_gnn: 9e-3,
            a_dim: 16,
            d_h: 64,
            include_self: true,
            train_alpha: false,
            train_fraction: 0.8,
            n_classes: None,
            seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            synth_n: 120,
            synth_signal: 1.0,
            synth_carriers: vec![Gene::PSEN1, Gene::PSEN2],
            synth_seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            genes_csv: None,
            features_csv: None,
            volumes_dir: None,
            out_dir: None,
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key from its textual value; the error names only the
    /// problem, callers add key and line.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "task" => self.task = v.parse().map_err(|e: Error| e.to_string())?,
            "mode" => self.mode = v.parse().map_err(|e: Error| e.to_string())?,
            "gene_subset" => self.gene_subset = parse_gene_list(v).map_err(|e| e.to_string())?,
            "epochs_ae" => self.epochs_ae = parse_num(v)?,
            "lr_ae" => self.lr_ae = parse_num(v)?,
            "min_lr_ae" => self.min_lr_ae = parse_num(v)?,
            "batch_ae" => self.batch_ae = parse_num(v)?,
            "ae_input" => {
                let dims: Vec<usize> = parse_list(v)?;
                self.ae_input = dims
                    .try_into()
                    .map_err(|_| "ae_input needs three comma-separated sizes".to_string())?;
            }
            "ae_channels" => self.ae_channels = parse_list(v)?,
            "ae_kernel" => self.ae_kernel = parse_num(v)?,
            "ae_padding" => self.ae_padding = parse_num(v)?,
            "ae_pool" => self.ae_pool = parse_num(v)?,
            "latent_dim" => self.latent_dim = parse_num(v)?,
            "slice_k" => self.slice_k = parse_num(v)?,
            "epochs_gnn" => self.epochs_gnn = parse_num(v)?,
            "lr_gnn" => self.lr_gnn = parse_num(v)?,
            "a_dim" => self.a_dim = parse_num(v)?,
            "d_h" => self.d_h = parse_num(v)?,
            "include_self" => self.include_self = parse_bool(v)?,
            "train_alpha" => self.train_alpha = parse_bool(v)?,
            "train_fraction" => self.train_fraction = parse_num(v)?,
            "n_classes" => {
                self.n_classes = if v.is_empty() {
                    None
                } else {
                    Some(parse_num(v)?)
                }
            }
            "seed" => self.seed = parse_num(v)?,
            "seeds" => self.seeds = parse_list(v)?,
            "synth_n" => self.synth_n = parse_num(v)?,
            "synth_signal" => self.synth_signal = parse_num(v)?,
            "synth_carriers" => {
                self.synth_carriers = if v.is_empty() {
                    Vec::new()
                } else {
                    parse_gene_list(v).map_err(|e| e.to_string())?
                }
            }
            "synth_seed" => self.synth_seed = parse_num(v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(v)?,
            "adam_eps" => self.adam_eps = parse_num(v)?,
            "genes_csv" => self.genes_csv = opt_path(v),
            "features_csv" => self.features_csv = opt_path(v),
            "volumes_dir" => self.volumes_dir = opt_path(v),
            "out_dir" => self.out_dir = opt_path(v),
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Like [`set`](Self::set), for values that do not come from a file
    /// (command-line overrides). The error carries line 0.
    pub fn set_override(&mut self, key: &str, v: &str) -> Result<()> {
        self.set(key, v).map_err(|msg| Error::Config {
            key: key.to_string(),
            line: 0,
            msg,
        })
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("task", self.task.to_string()),
            ("mode", self.mode.to_string()),
            ("gene_subset", join(&self.gene_subset)),
            ("epochs_ae", self.epochs_ae.to_string()),
            ("lr_ae", self.lr_ae.to_string()),
            ("min_lr_ae", self.min_lr_ae.to_string()),
            ("batch_ae", self.batch_ae.to_string()),
            ("ae_input", join(&self.ae_input)),
            ("ae_channels", join(&self.ae_channels)),
            ("ae_kernel", self.ae_kernel.to_string()),
            ("ae_padding", self.ae_padding.to_string()),
            ("ae_pool", self.ae_pool.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("slice_k", self.slice_k.to_string()),
            ("epochs_gnn", self.epochs_gnn.to_string()),
            ("lr_gnn", self.lr_gnn.to_string()),
            ("a_dim", self.a_dim.to_string()),
            ("d_h", self.d_h.to_string()),
            ("include_self", self.include_self.to_string()),
            ("train_alpha", self.train_alpha.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("n_classes", self.n_classes().to_string()),
            ("seed", self.seed.to_string()),
            ("seeds", join(&self.seeds)),
            ("synth_n", self.synth_n.to_string()),
            ("synth_signal", self.synth_signal.to_string()),
            ("synth_carriers", join(&self.synth_carriers)),
            ("synth_seed", self.synth_seed.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("genes_csv", path_str(&self.genes_csv)),
            ("features_csv", path_str(&self.features_csv)),
            ("volumes_dir", path_str(&self.volumes_dir)),
            ("out_dir", path_str(&self.out_dir)),
        ]
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes.unwrap_or_else(|| self.task.n_classes())
    }

    /// Range checks; the error names the offending key (line 0).
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: key.into(),
            line: 0,
            msg,
        };
        for (key, rate) in [("lr_ae", self.lr_ae), ("lr_gnn", self.lr_gnn)] {
            if !(rate > 0.0) {
                return Err(bad(key, format!("rate must be > 0, got {rate}")));
            }
        }
        if self.min_lr_ae < 0.0 || self.min_lr_ae > self.lr_ae {
            return Err(bad("min_lr_ae", "must lie in [0, lr_ae]".into()));
        }
        for (key, n) in [
            ("epochs_ae", self.epochs_ae),
            ("epochs_gnn", self.epochs_gnn),
            ("batch_ae", self.batch_ae),
            ("latent_dim", self.latent_dim),
            ("slice_k", self.slice_k),
            ("a_dim", self.a_dim),
            ("d_h", self.d_h),
            ("ae_kernel", self.ae_kernel),
            ("ae_pool", self.ae_pool),
            ("synth_n", self.synth_n),
        ] {
            if n < 1 {
                return Err(bad(key, format!("must be ≥ 1, got {n}")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(bad(
                "train_fraction",
                "must lie strictly between 0 and 1".into(),
            ));
        }
        if self.n_classes() != self.task.n_classes() {
            return Err(bad(
                "n_classes",
                format!("task {} has {} classes", self.task, self.task.n_classes()),
            ));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "needs at least one seed".into()));
        }
        if self.ae_channels.is_empty() || self.ae_channels.contains(&0) {
            return Err(bad("ae_channels", "needs positive channel counts".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(bad("adam_beta1", "Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(bad("adam_eps", "must be > 0".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut lines_of = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    key: content.to_string(),
                    line,
                    msg: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(|msg| Error::Config {
                key: key.to_string(),
                line,
                msg,
            })?;
            lines_of.insert(key.to_string(), line);
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { key, msg, .. } => Error::Config {
                line: lines_of.get(&key).copied().unwrap_or(0),
                key,
                msg,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the effective configuration in the file format.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn gene_subset_name(&self) -> String {
        gene_list_name(&self.gene_subset)
    }
}
