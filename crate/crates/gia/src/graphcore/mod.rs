//! Graph data model, adjacency normalization, feature unification, line-graph
//! task unification, graph distances, synthetic corpus generation, and I/O.
//!
//! Graphs are immutable after load or generation; everything here is a pure
//! function and safe to evaluate concurrently.

mod corpus;
mod distance;
mod graph;
pub mod io;
mod linegraph;
mod svd;

pub use corpus::{generate_corpus, parse_corpus_spec, Corpus, CorpusSpec, DomainSpec};
pub use distance::graph_distance;
pub use graph::{normalize_adjacency, Graph, KnowledgeGraph, UNLABELED};
pub use linegraph::line_graph_transform;
pub use svd::{jacobi_svd, spectral_norm, unify_features};
