//! Few-shot drug recommendation for newly introduced drugs.
//!
//! Patients are encoded as a set of phenotype vectors, drugs through
//! attention over their ontology ancestors, and a query patient is scored
//! against positive and negative prototypes with drug-dependent phenotype
//! weights.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod knowledge;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::RunConfig;
pub use data::{DatasetSplit, Episode, EpisodeMode, EpisodeSampler, EpisodeShape, PatientRecord};
pub use error::{Error, Result};
pub use evaluation::{EvalConfig, EvaluationReport};
pub use knowledge::{AssetPaths, Assets, CodeId, Vocabulary};
pub use model::{Ablation, Checkpoint, Distance, Hyperparams, MissingPhenotype, ModelParams, ABLATION_VARIANTS};
pub use pipeline::Corpus;
pub use synthgen::GeneratorSpec;
pub use training::{TrainConfig, TrainOutcome};
