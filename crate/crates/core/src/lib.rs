//! Binary node embeddings for attributed networks, and fast Hamming-distance
//! similarity search over them.
//!
//! The pipeline:
//!
//! 1. [`graph`] loads the edge list, the sparse node-attribute matrix and
//!    optional class labels.
//! 2. [`walks`] runs truncated random walks and counts windowed
//!    (center, context) node pairs.
//! 3. [`model`] trains a three-layer network whose hidden layer is
//!    `tanh(β·W_in)`, predicting context nodes and node attributes with
//!    negative sampling ([`sampler`]) while β is annealed towards a sign
//!    activation.
//! 4. [`codes`] thresholds `W_in` into bit-packed codes.
//! 5. [`search`] answers top-K queries by popcount over XOR-ed words;
//!    [`eval`] scores the rankings with precision@K and MAP@K.
//!
//! ```no_run
//! use binaryne::{graph, walks, model, codes, search};
//!
//! # fn main() -> binaryne::Result<()> {
//! let g = graph::Graph::load_edge_list("cora.edges", graph::Delimiter::Whitespace)?;
//! let x = graph::AttributeMatrix::load("cora.attrs", &g, graph::Delimiter::Whitespace, false)?;
//! let pairs = walks::PairCounts::collect(&g, &walks::WalkConfig::default())?;
//! let cfg = model::TrainConfig { max_iters: 20_000_000, ..Default::default() };
//! let params = model::train(&g, &pairs, &x, &cfg)?;
//! let codes = codes::binarize(&params);
//! let hits = search::top_k(&codes, &search::Query::node(graph::NodeId(0), 10))?;
//! # Ok(())
//! # }
//! ```

pub mod codes;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod sampler;
pub mod search;
pub mod synthetic;
pub mod walks;

pub use codes::{binarize, CodeMatrix};
pub use error::{Error, Result};
pub use eval::{run_benchmark, EvalConfig, EvalReport};
pub use graph::{AttributeMatrix, Delimiter, Graph, LabelMap, NodeId, Vocab};
pub use model::{train, BetaCurve, ModelParams, PartialGradient, TrainConfig, Trainer};
pub use sampler::{AliasTable, NoiseDistribution};
pub use search::{hamming, top_k, top_k_euclidean, DenseMatrix, Query, RankedResult};
pub use walks::{generate_walks, PairCounts, WalkConfig, WalkSet};
