use std::collections::HashMap;

use log::warn;

use crate::error::{Error, Result};
use crate::labels::{Diagnosis, Task};
use crate::volume::FeatureMatrix;

use super::genes::{Gene, GeneExpressionTable};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneNode {
    pub gene: Gene,
    pub features: Vec<f64>,
}

/// Directed gene → image edge; its type is the gene of its source node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub gene_node: usize,
    pub edge_type: Gene,
}

/// One subject's star graph: gene nodes each linked to the single image node.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteSubgraph {
    pub sample_id: String,
    pub diagnosis: Diagnosis,
    pub gene_nodes: Vec<GeneNode>,
    pub image: Vec<f64>,
    pub edges: Vec<Edge>,
}

impl BipartiteSubgraph {
    /// Star graph with one edge per gene node, in the given order.
    pub fn new(
        sample_id: impl Into<String>,
        diagnosis: Diagnosis,
        genes: Vec<(Gene, Vec<f64>)>,
        image: Vec<f64>,
    ) -> Self {
        let edges = genes
            .iter()
            .enumerate()
            .map(|(i, (g, _))| Edge {
                gene_node: i,
                edge_type: *g,
            })
            .collect();
        Self {
            sample_id: sample_id.into(),
            diagnosis,
            gene_nodes: genes
                .into_iter()
                .map(|(gene, features)| GeneNode { gene, features })
                .collect(),
            image,
            edges,
        }
    }

    /// Class index under `task`, `None` if the task excludes this subject.
    pub fn label(&self, task: Task) -> Option<usize> {
        task.class_index(self.diagnosis)
    }

    pub fn genes(&self) -> Vec<Gene> {
        self.gene_nodes.iter().map(|n| n.gene).collect()
    }

    pub fn gene_features(&self, g: Gene) -> Option<&[f64]> {
        self.gene_nodes
            .iter()
            .find(|n| n.gene == g)
            .map(|n| n.features.as_slice())
    }

    pub fn validate(&self, image_dim: usize) -> Result<()> {
        if self.edges.len() != self.gene_nodes.len() {
            return Err(Error::contract(format!(
                "`{}`: {} edges for {} gene nodes",
                self.sample_id,
                self.edges.len(),
                self.gene_nodes.len()
            )));
        }
        for n in &self.gene_nodes {
            if n.features.len() != n.gene.dim() {
                return Err(Error::dim(format!(
                    "`{}`: {} has {} features, expected {}",
                    self.sample_id,
                    n.gene,
                    n.features.len(),
                    n.gene.dim()
                )));
            }
        }
        for e in &self.edges {
            let Some(src) = self.gene_nodes.get(e.gene_node) else {
                return Err(Error::contract(format!(
                    "`{}`: dangling edge",
                    self.sample_id
                )));
            };
            if src.gene != e.edge_type {
                return Err(Error::contract(format!(
                    "`{}`: mistyped edge",
                    self.sample_id
                )));
            }
        }
        if self.image.len() != image_dim {
            return Err(Error::dim(format!(
                "`{}`: image has {} features, expected {image_dim}",
                self.sample_id,
                self.image.len()
            )));
        }
        Ok(())
    }
}

/// One subgraph per sample present in both tables, sorted by sample id.
/// `gene_subset` selects which gene nodes to keep.
pub fn build_subgraphs(
    genes: &GeneExpressionTable,
    images: &FeatureMatrix,
    gene_subset: &[Gene],
) -> Result<Vec<BipartiteSubgraph>> {
    let mut subset = gene_subset.to_vec();
    subset.sort();
    subset.dedup();
    if subset.is_empty() {
        return Err(Error::contract("gene subset must not be empty"));
    }
    let image_by_id: HashMap<&str, _> = images
        .rows()
        .iter()
        .map(|r| (r.sample_id.as_str(), r))
        .collect();
    let mut out = Vec::new();
    for rec in &genes.rows {
        let Some(img) = image_by_id.get(rec.sample_id.as_str()) else {
            warn!(
                "`{}` has gene data but no image features; skipped",
                rec.sample_id
            );
            continue;
        };
        if img.label != rec.label {
            warn!(
                "`{}` labelled {} in genes but {} in images; using the gene label",
                rec.sample_id, rec.label, img.label
            );
        }
        let gene_nodes: Vec<GeneNode> = subset
            .iter()
            .map(|&g| GeneNode {
                gene: g,
                features: rec.gene(g).to_vec(),
            })
            .collect();
        let edges = subset
            .iter()
            .enumerate()
            .map(|(i, &g)| Edge {
                gene_node: i,
                edge_type: g,
            })
            .collect();
        out.push(BipartiteSubgraph {
            sample_id: rec.sample_id.clone(),
            diagnosis: rec.label,
            gene_nodes,
            image: img.features.clone(),
            edges,
        });
    }
    let gene_ids: std::collections::HashSet<&str> =
        genes.rows.iter().map(|r| r.sample_id.as_str()).collect();
    for r in images.rows() {
        if !gene_ids.contains(r.sample_id.as_str()) {
            warn!(
                "`{}` has image features but no gene data; skipped",
                r.sample_id
            );
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(
            "no sample ids shared by the gene and image tables".into(),
        ));
    }
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(out)
}
