//! Few-shot in-context classification on heterogeneous graphs.
//!
//! The model is pretrained once on a corpus of graphs and then frozen: a new
//! graph is handled entirely through a small labeled support set, which
//! drives a gradient-fingerprint domain embedding, domain-conditioned FiLM
//! alignment of features and label prototypes, and prompt-aware attention
//! scoring of queries. No parameter is updated at inference time.

pub mod aligners;
pub mod cli;
pub mod dpaa;
pub mod embedder;
pub mod encoder;
mod error;
pub mod graphcore;
pub mod inference;
pub mod numkernel;
pub mod selftest;
pub mod trainer;

pub use error::{Error, Result};
