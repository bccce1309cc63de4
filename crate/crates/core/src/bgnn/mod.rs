//! The heterogeneous bipartite GNN.

mod model;
mod train;
mod weights;

pub use model::{
    argmax, edge_pre_activation, edge_weight, BgnnConfig, BgnnForward, BgnnModel, GraphBatch,
    WeightMode, BGNN_MAGIC,
};
pub use train::{accuracy, one_hot_targets, predict_classes, train_gnn, GnnTrainConfig};
pub use weights::{average_weights, collect_edge_weights, AveragedWeight, EdgeWeightRecord};
