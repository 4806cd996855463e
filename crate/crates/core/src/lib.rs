//! Knowledge-graph-guided retrieval-augmented question answering.
//!
//! The loop: answer the question over the accepted references, extract
//! evidence triples from the answer, score each against the knowledge graph
//! with complex-embedding link prediction, and compare the aggregate
//! reliability against a growing per-turn threshold. Unreliable answers
//! trigger another round: the retrieval query is augmented with graph
//! entities related to it, every registered knowledge model writes one
//! pseudo-reference per query variant, and candidates pass a relevance check
//! plus a triple-consistency ranking before joining the reference set for
//! the next answer.
//!
//! Modules by stage:
//! - [`kg`]: TSV triple store, indexes, alias-based entity linking
//! - [`kge`]: complex embedding training, scoring, reliability, prediction
//! - [`controller`]: threshold schedule and stop/continue decisions
//! - [`augment`]: related-entity search and query augmentation
//! - [`gateway`]: model roles, prompt templates, fixture/HTTP backends
//! - [`pipeline`]: the closed loop and per-run trace records
//! - [`eval`]: datasets, EM/F1, turn distribution, reference usage
//! - [`config`]: TOML run configuration and pipeline assembly

pub mod augment;
pub mod config;
pub mod controller;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod kg;
pub mod kge;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
