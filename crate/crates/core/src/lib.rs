//! Translation-based knowledge-graph embeddings with relation paths.
//!
//! The crate covers the full pipeline: loading triple files, mining
//! two-hop relation paths with resource allocation, training TransE,
//! TransR and PTransR by margin-based SGD, and entity-prediction
//! evaluation under the raw and filter protocols.

pub mod error;
pub mod evaluator;
mod io;
pub mod kgdata;
pub mod models;
pub mod paths;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use evaluator::{evaluate, EvalConfig, Evaluation, RankReport, Split, TiePolicy};
pub use kgdata::{augment_inverse, load_dataset, ColumnOrder, KnowledgeGraph, Triple};
pub use models::{ModelParams, Norm};
pub use paths::{PathConfig, PathTable};
pub use trainer::{train, Stage, TrainConfig, TrainOptions, TrainOutcome};
