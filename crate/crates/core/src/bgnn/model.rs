//! Heterogeneous bipartite GNN with prior-generated edge weights.
//!
//! For each edge type (one per gene) a learnable linear map φ turns the
//! shared frozen prior α into a bilinear form `z = reshape(φ·α)` of shape
//! `d_gene × d_img`. The weight of an edge is `relu(x_geneᵀ · z · x_img)`.
//! Node features are embedded per node type (`h = V·x`, no bias) and the
//! image node is updated once:
//!
//! ```text
//! h_img' = relu(V_img·x_img + Σ_g e_g · V_g·x_g)
//! ```
//!
//! with the sum taken in canonical gene order. The prediction head is an
//! affine map of `h_img'` to class scores.

use serde::{Deserialize, Serialize};

use crate::autograd::{NamedGrads, Tape, Var};
use crate::checkpoint::NamedTensors;
use crate::error::{Error, Result};
use crate::graph::{BipartiteSubgraph, Gene};
use crate::rng::{fan_in_uniform, rng_for, seeded_randn, stream};
use crate::tensor::Tensor;

pub const BGNN_MAGIC: &[u8; 4] = b"BGNN";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Edge weights from the bilinear forms.
    Learned,
    /// Every edge weight fixed at 1.
    Unit,
}

impl WeightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::Learned => "learned",
            WeightMode::Unit => "unit",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "learned" => Ok(WeightMode::Learned),
            "unit" => Ok(WeightMode::Unit),
            other => Err(Error::contract(format!(
                "unknown mode `{other}` (expected learned or unit)"
            ))),
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BgnnConfig {
    /// Gene node types, kept sorted.
    pub genes: Vec<Gene>,
    pub image_dim: usize,
    pub d_h: usize,
    pub a_dim: usize,
    pub n_classes: usize,
    pub mode: WeightMode,
    pub include_self: bool,
    pub train_alpha: bool,
}

impl BgnnConfig {
    pub fn new(genes: &[Gene], image_dim: usize, n_classes: usize) -> Self {
        let mut genes = genes.to_vec();
        genes.sort();
        genes.dedup();
        Self {
            genes,
            image_dim,
            d_h: 64,
            a_dim: 16,
            n_classes,
            mode: WeightMode::Learned,
            include_self: true,
            train_alpha: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.genes.is_empty() {
            return Err(Error::contract("model needs at least one gene type"));
        }
        if self.image_dim == 0 || self.d_h == 0 || self.a_dim == 0 || self.n_classes < 2 {
            return Err(Error::contract(
                "image_dim, d_h and a_dim must be positive and n_classes at least 2",
            ));
        }
        if self.genes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("gene list must be sorted and unique"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BgnnModel {
    pub config: BgnnConfig,
    pub(crate) alpha: Tensor,
    /// Per gene: `(d_g·d_img) × a_dim`.
    pub(crate) phi: Vec<Tensor>,
    /// Per gene: `d_h × d_g`.
    pub(crate) v_gene: Vec<Tensor>,
    pub(crate) v_img: Tensor,
    pub(crate) head_w: Tensor,
    pub(crate) head_b: Tensor,
}

/// Dense per-type feature matrices for a batch of subgraphs.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub image: Tensor,
    /// Aligned with the model's gene list.
    pub genes: Vec<Tensor>,
}

impl GraphBatch {
    pub fn from_subgraphs(graphs: &[&BipartiteSubgraph], cfg: &BgnnConfig) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::EmptyDataset("no subgraphs in batch".into()));
        }
        let n = graphs.len();
        let mut image = Vec::with_capacity(n * cfg.image_dim);
        let mut genes: Vec<Vec<f64>> = cfg
            .genes
            .iter()
            .map(|g| Vec::with_capacity(n * g.dim()))
            .collect();
        for sg in graphs {
            sg.validate(cfg.image_dim)?;
            if sg.gene_nodes.len() != cfg.genes.len() {
                return Err(Error::dim(format!(
                    "`{}` has {} gene nodes, model expects {:?}",
                    sg.sample_id,
                    sg.gene_nodes.len(),
                    cfg.genes
                )));
            }
            image.extend_from_slice(&sg.image);
            for (g, buf) in cfg.genes.iter().zip(&mut genes) {
                let f = sg
                    .gene_features(*g)
                    .ok_or_else(|| Error::dim(format!("`{}` lacks a {g} node", sg.sample_id)))?;
                buf.extend_from_slice(f);
            }
        }
        Ok(Self {
            image: Tensor::new(&[n, cfg.image_dim], image)?,
            genes: cfg
                .genes
                .iter()
                .zip(genes)
                .map(|(g, data)| Tensor::new(&[n, g.dim()], data))
                .collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles of one forward pass.
pub struct BgnnForward {
    pub scores: Var,
    /// Updated image embedding `N×d_h`.
    pub embedding: Var,
    /// Per gene: post-ReLU edge weights (`N`), absent in unit mode.
    pub edge_weights: Vec<Option<Var>>,
    pub(crate) params: Vec<(ParamId, Var)>,
}

/// Identifies a parameter tensor of [`BgnnModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ParamId {
    Alpha,
    Phi(usize),
    VGene(usize),
    VImg,
    HeadW,
    HeadB,
}

/// Pre-activation edge score `x_geneᵀ · z · x_img`.
pub fn edge_pre_activation(x_gene: &[f64], z: &Tensor, x_img: &[f64]) -> Result<f64> {
    match *z.shape() {
        [r, c] if r == x_gene.len() && c == x_img.len() => {}
        ref s => {
            return Err(Error::dim(format!(
                "edge weight: z {s:?} does not match gene dim {} and image dim {}",
                x_gene.len(),
                x_img.len()
            )))
        }
    }
    let mut total = 0.0;
    for (i, &xg) in x_gene.iter().enumerate() {
        let row = z.row(i);
        let dot: f64 = row.iter().zip(x_img).map(|(a, b)| a * b).sum();
        total += xg * dot;
    }
    Ok(total)
}

/// `relu(x_geneᵀ · z · x_img)`.
pub fn edge_weight(x_gene: &[f64], z: &Tensor, x_img: &[f64]) -> Result<f64> {
    Ok(edge_pre_activation(x_gene, z, x_img)?.max(0.0))
}

impl BgnnModel {
    /// α ~ N(0, 1) from the seed, frozen unless `train_alpha`; φ, V and the
    /// head use fan-in uniform initialization. The head bias starts at zero.
    pub fn init(config: BgnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut alpha = seeded_randn(&[config.a_dim], seed);
        if config.train_alpha {
            alpha.set_requires_grad(true);
        }
        let mut rng = rng_for(seed, stream::INIT);
        let (dimg, dh, a) = (config.image_dim, config.d_h, config.a_dim);
        let phi = config
            .genes
            .iter()
            .map(|g| fan_in_uniform(&mut rng, &[g.dim() * dimg, a], a).with_requires_grad())
            .collect();
        let v_gene = config
            .genes
            .iter()
            .map(|g| fan_in_uniform(&mut rng, &[dh, g.dim()], g.dim()).with_requires_grad())
            .collect();
        let v_img = fan_in_uniform(&mut rng, &[dh, dimg], dimg).with_requires_grad();
        let head_w = fan_in_uniform(&mut rng, &[config.n_classes, dh], dh).with_requires_grad();
        let head_b = Tensor::zeros(&[config.n_classes]).with_requires_grad();
        Ok(Self {
            config,
            alpha,
            phi,
            v_gene,
            v_img,
            head_w,
            head_b,
        })
    }

    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }

    pub fn phi(&self, gene: Gene) -> Option<&Tensor> {
        self.gene_slot(gene).map(|i| &self.phi[i])
    }

    pub fn embedding_map(&self, gene: Gene) -> Option<&Tensor> {
        self.gene_slot(gene).map(|i| &self.v_gene[i])
    }

    pub fn image_embedding_map(&self) -> &Tensor {
        &self.v_img
    }

    pub fn head(&self) -> (&Tensor, &Tensor) {
        (&self.head_w, &self.head_b)
    }

    pub fn head_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.head_w, &mut self.head_b)
    }

    fn gene_slot(&self, gene: Gene) -> Option<usize> {
        self.config.genes.iter().position(|&g| g == gene)
    }

    /// The bilinear form `z_t = reshape(φ_t·α)` of shape `d_gene × d_img`.
    pub fn z(&self, gene: Gene) -> Result<Tensor> {
        let i = self
            .gene_slot(gene)
            .ok_or_else(|| Error::contract(format!("model has no {gene} edge type")))?;
        let a = self.alpha.reshape(&[1, self.config.a_dim])?;
        crate::ops::linear(&a, &self.phi[i], None)?.reshape(&[gene.dim(), self.config.image_dim])
    }

    pub(crate) fn param(&self, id: ParamId) -> &Tensor {
        match id {
            ParamId::Alpha => &self.alpha,
            ParamId::Phi(i) => &self.phi[i],
            ParamId::VGene(i) => &self.v_gene[i],
            ParamId::VImg => &self.v_img,
            ParamId::HeadW => &self.head_w,
            ParamId::HeadB => &self.head_b,
        }
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        match id {
            ParamId::Alpha => &mut self.alpha,
            ParamId::Phi(i) => &mut self.phi[i],
            ParamId::VGene(i) => &mut self.v_gene[i],
            ParamId::VImg => &mut self.v_img,
            ParamId::HeadW => &mut self.head_w,
            ParamId::HeadB => &mut self.head_b,
        }
    }

    /// Parameters the optimizer updates: α only with `train_alpha`, φ only
    /// in learned mode.
    pub(crate) fn trainable(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if self.config.train_alpha && self.config.mode == WeightMode::Learned {
            ids.push(ParamId::Alpha);
        }
        if self.config.mode == WeightMode::Learned {
            ids.extend((0..self.phi.len()).map(ParamId::Phi));
        }
        ids.extend((0..self.v_gene.len()).map(ParamId::VGene));
        ids.extend([ParamId::VImg, ParamId::HeadW, ParamId::HeadB]);
        ids
    }

    /// Checkpoint name of a parameter.
    pub(crate) fn param_name(&self, id: ParamId) -> String {
        match id {
            ParamId::Alpha => "alpha".into(),
            ParamId::Phi(i) => format!("phi.{}", self.config.genes[i]),
            ParamId::VGene(i) => format!("v.{}", self.config.genes[i]),
            ParamId::VImg => "v.image".into(),
            ParamId::HeadW => "head.w".into(),
            ParamId::HeadB => "head.b".into(),
        }
    }

    /// MSE loss against `targets` (`N × n_classes`) and the gradient of
    /// every parameter that requires one, keyed by checkpoint name.
    pub fn loss_gradients(
        &self,
        batch: &GraphBatch,
        targets: &Tensor,
    ) -> Result<(f64, NamedGrads)> {
        let mut tape = Tape::new();
        let fw = self.forward(&mut tape, batch)?;
        let y = tape.constant(targets.clone());
        let loss = tape.mse_loss(fw.scores, y)?;
        let grads = tape.backward(loss)?;
        let named = fw
            .params
            .iter()
            .filter_map(|&(id, v)| grads.get(v).map(|g| (self.param_name(id), g.to_vec())))
            .collect();
        Ok((tape.value(loss).data()[0], named))
    }

    /// Records the forward pass for a batch.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<BgnnForward> {
        let cfg = &self.config;
        if batch.genes.len() != cfg.genes.len() {
            return Err(Error::dim("batch gene types do not match the model"));
        }
        let mut params = Vec::new();
        let mut reg = |tape: &mut Tape, id: ParamId| {
            let v = tape.param(self.param(id));
            params.push((id, v));
            v
        };
        let n = batch.len();
        let x_img = tape.constant(batch.image.clone());
        let v_img = reg(tape, ParamId::VImg);
        let h_img = tape.linear(x_img, v_img, None)?;

        let alpha_row = match cfg.mode {
            WeightMode::Learned => {
                let a = reg(tape, ParamId::Alpha);
                Some(tape.reshape(a, &[1, cfg.a_dim])?)
            }
            WeightMode::Unit => None,
        };

        let mut acc = cfg.include_self.then_some(h_img);
        let mut edge_weights = Vec::with_capacity(cfg.genes.len());
        for (i, gene) in cfg.genes.iter().enumerate() {
            let x_g = tape.constant(batch.genes[i].clone());
            let v_g = reg(tape, ParamId::VGene(i));
            let h_g = tape.linear(x_g, v_g, None)?;
            let msg = match alpha_row {
                Some(a) => {
                    let phi = reg(tape, ParamId::Phi(i));
                    let z_flat = tape.linear(a, phi, None)?;
                    let z = tape.reshape(z_flat, &[gene.dim(), cfg.image_dim])?;
                    let proj = tape.matmul(x_g, z)?;
                    let pre = tape.row_dot(proj, x_img)?;
                    let e = tape.relu(pre);
                    edge_weights.push(Some(e));
                    tape.scale_rows(e, h_g)?
                }
                None => {
                    edge_weights.push(None);
                    h_g
                }
            };
            acc = Some(match acc {
                Some(prev) => tape.add(prev, msg)?,
                None => msg,
            });
        }
        let pre_embed = acc.expect("at least one gene");
        let embedding = tape.relu(pre_embed);
        debug_assert_eq!(tape.value(embedding).shape(), &[n, cfg.d_h]);
        let hw = reg(tape, ParamId::HeadW);
        let hb = reg(tape, ParamId::HeadB);
        let scores = tape.linear(embedding, hw, Some(hb))?;
        Ok(BgnnForward {
            scores,
            embedding,
            edge_weights,
            params,
        })
    }

    fn run_single(&self, sg: &BipartiteSubgraph) -> Result<(Tape, BgnnForward)> {
        let batch = GraphBatch::from_subgraphs(&[sg], &self.config)?;
        let mut tape = Tape::new();
        let fw = self.forward(&mut tape, &batch)?;
        Ok((tape, fw))
    }

    /// Updated image-node embedding for one subgraph.
    pub fn aggregate(&self, sg: &BipartiteSubgraph) -> Result<Vec<f64>> {
        let (tape, fw) = self.run_single(sg)?;
        Ok(tape.value(fw.embedding).data().to_vec())
    }

    /// Class scores for one subgraph.
    pub fn predict(&self, sg: &BipartiteSubgraph) -> Result<Vec<f64>> {
        let (tape, fw) = self.run_single(sg)?;
        Ok(tape.value(fw.scores).data().to_vec())
    }

    /// Edge weights for one subgraph in model gene order (1 in unit mode).
    pub fn edge_weights(&self, sg: &BipartiteSubgraph) -> Result<Vec<f64>> {
        let (tape, fw) = self.run_single(sg)?;
        Ok(fw
            .edge_weights
            .iter()
            .map(|e| e.map_or(1.0, |v| tape.value(v).data()[0]))
            .collect())
    }

    pub fn to_named(&self) -> NamedTensors {
        let c = &self.config;
        let mut nt = NamedTensors::new();
        let gene_mask: Vec<f64> = Gene::ALL
            .iter()
            .map(|g| if c.genes.contains(g) { 1.0 } else { 0.0 })
            .collect();
        nt.push("meta.genes", &Tensor::from_vec(gene_mask));
        let flags = [
            c.image_dim as f64,
            c.d_h as f64,
            c.a_dim as f64,
            c.n_classes as f64,
            f64::from(u8::from(c.mode == WeightMode::Unit)),
            f64::from(u8::from(c.include_self)),
            f64::from(u8::from(c.train_alpha)),
        ];
        nt.push("meta.config", &Tensor::from_vec(flags.to_vec()));
        nt.push("alpha", &self.alpha);
        for (i, g) in c.genes.iter().enumerate() {
            nt.push(format!("phi.{g}"), &self.phi[i]);
            nt.push(format!("v.{g}"), &self.v_gene[i]);
        }
        nt.push("v.image", &self.v_img);
        nt.push("head.w", &self.head_w);
        nt.push("head.b", &self.head_b);
        nt
    }

    pub fn from_named(nt: &NamedTensors) -> Result<Self> {
        let genes: Vec<Gene> = Gene::ALL
            .iter()
            .zip(nt.get("meta.genes")?.data())
            .filter(|(_, &m)| m != 0.0)
            .map(|(g, _)| *g)
            .collect();
        let meta = nt.get("meta.config")?.data().to_vec();
        let [image_dim, d_h, a_dim, n_classes, unit, include_self, train_alpha] = meta[..] else {
            return Err(Error::Format("meta.config must hold 7 values".into()));
        };
        let config = BgnnConfig {
            genes,
            image_dim: image_dim as usize,
            d_h: d_h as usize,
            a_dim: a_dim as usize,
            n_classes: n_classes as usize,
            mode: if unit != 0.0 {
                WeightMode::Unit
            } else {
                WeightMode::Learned
            },
            include_self: include_self != 0.0,
            train_alpha: train_alpha != 0.0,
        };
        let mut m = Self::init(config, 0)?;
        let load = |name: String, t: &mut Tensor| -> Result<()> {
            let src = nt.get(&name)?;
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
            Ok(())
        };
        load("alpha".into(), &mut m.alpha)?;
        let genes = m.config.genes.clone();
        for (i, g) in genes.iter().enumerate() {
            load(format!("phi.{g}"), &mut m.phi[i])?;
            load(format!("v.{g}"), &mut m.v_gene[i])?;
        }
        load("v.image".into(), &mut m.v_img)?;
        load("head.w".into(), &mut m.head_w)?;
        load("head.b".into(), &mut m.head_b)?;
        Ok(m)
    }
}

/// Index of the largest score; the lower index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
