//! Radiogenomic bipartite graph learning.
//!
//! The pipeline has three stages:
//!
//! 1. [`volume`]: slice selection on MRI volumes and a 3D denoising
//!    autoencoder whose latent vector becomes each subject's image feature.
//! 2. [`graph`]: gene-expression ingest, train-fitted min-max scaling and
//!    one bipartite star subgraph per subject (gene nodes → image node).
//! 3. [`bgnn`]: a heterogeneous GNN whose edge weights are bilinear forms
//!    generated from a frozen Gaussian prior, trained with MSE on one-hot
//!    targets.
//!
//! [`eval`] wraps these into seeded experiments, the learned-vs-unit weight
//! and gene-subset ablation grid, and JSON/plain-text reports.

pub mod autograd;
pub mod bgnn;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod labels;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
pub use labels::{Diagnosis, Task};
pub use tensor::Tensor;
