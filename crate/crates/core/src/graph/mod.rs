//! Gene-expression ingest, normalization, subgraph construction, splits and
//! synthetic data.

mod genes;
mod split;
mod subgraph;
mod synth;

pub use genes::{
    gene_list_name, load_gene_csv, min_max_normalize, parse_gene_list, Exclusion, Gene,
    GeneExpressionTable, GeneRecord, MinMaxScaler, GENE_COLUMNS, GENE_CSV_HEADER,
};
pub use split::{split_dataset, split_ids, DatasetPartition};
pub use subgraph::{build_subgraphs, BipartiteSubgraph, Edge, GeneNode};
pub use synth::{generate_synthetic, SynthConfig, SyntheticData};
