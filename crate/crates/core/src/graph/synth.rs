use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::labels::Diagnosis;
use crate::rng::{rng_for, stream};
use crate::volume::{FeatureMatrix, FeatureRow};

use super::genes::{Gene, GeneExpressionTable, GeneRecord, GENE_COLUMNS};

/// Parameters of the planted-signal generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub signal: f64,
    pub carriers: Vec<Gene>,
    pub image_dim: usize,
    pub gene_noise: f64,
    pub image_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 120,
            seed: 0,
            signal: 1.0,
            carriers: Gene::ALL.to_vec(),
            image_dim: 512,
            gene_noise: 0.3,
            image_noise: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub genes: GeneExpressionTable,
    pub images: FeatureMatrix,
    /// `(sample_id, y)` with `y = 1` for AD and `0` for CN.
    pub truth: Vec<(String, usize)>,
}

impl SyntheticData {
    /// CSV `sample_id,label,y`.
    pub fn truth_manifest(&self) -> String {
        let mut s = String::from("sample_id,label,y\n");
        for (id, y) in &self.truth {
            let label = if *y == 1 {
                Diagnosis::AD
            } else {
                Diagnosis::CN
            };
            let _ = writeln!(s, "{id},{label},{y}");
        }
        s
    }
}

/// Two-class (CN/AD) data with a shared latent `u = signal·(2y − 1)`.
///
/// Carrier genes get `u·dir_g + N(0, gene_noise²)` along a fixed random unit
/// direction, other genes are pure `N(0, 1)`, and image features are
/// `u·dir_img + N(0, image_noise²)` with a fixed random unit direction.
/// Classes are balanced (`⌈n/2⌉` CN) and shuffled.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    if cfg.n < 8 {
        return Err(Error::contract(format!(
            "synthetic data needs n ≥ 8, got {}",
            cfg.n
        )));
    }
    if cfg.image_dim == 0 {
        return Err(Error::contract("image_dim must be positive"));
    }
    let mut rng = rng_for(cfg.seed, stream::SYNTH);
    let gene_dirs: Vec<Vec<f64>> = Gene::ALL
        .iter()
        .map(|g| unit_direction(&mut rng, g.dim()))
        .collect();
    let image_dir = unit_direction(&mut rng, cfg.image_dim);

    let mut labels: Vec<usize> = (0..cfg.n)
        .map(|i| usize::from(i >= cfg.n.div_ceil(2)))
        .collect();
    labels.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(cfg.n);
    let mut feats = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for (i, &y) in labels.iter().enumerate() {
        let id = format!("s{i:04}");
        let label = if y == 1 { Diagnosis::AD } else { Diagnosis::CN };
        let u = cfg.signal * (2.0 * y as f64 - 1.0);
        let mut values = [0.0; GENE_COLUMNS];
        for g in Gene::ALL {
            let off = g.column_offset();
            let carrier = cfg.carriers.contains(&g);
            for (k, dir) in gene_dirs[g.index()].iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                values[off + k] = if carrier {
                    u * dir + cfg.gene_noise * z
                } else {
                    z
                };
            }
        }
        let features = image_dir
            .iter()
            .map(|d| {
                let z: f64 = rng.sample(StandardNormal);
                u * d + cfg.image_noise * z
            })
            .collect();
        rows.push(GeneRecord {
            sample_id: id.clone(),
            label,
            values,
        });
        feats.push(FeatureRow {
            sample_id: id.clone(),
            label,
            features,
        });
        truth.push((id, y));
    }
    Ok(SyntheticData {
        genes: GeneExpressionTable::new(rows)?,
        images: FeatureMatrix::new(feats)?,
        truth,
    })
}

fn unit_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
