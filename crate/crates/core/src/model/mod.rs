//! Learnable components and the forward scoring path.

mod checkpoint;
mod drug;
mod gru;
mod params;
mod patient;
mod score;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use drug::{backward_drug, encode_drug, DrugCache, DrugGrad};
pub use gru::{GruCache, GruStep};
pub use params::{Distance, GruParams, Hyperparams, MissingPhenotype, ModelParams, N_TENSORS};
pub use patient::{
    backward_patient, backward_prototypes, compute_prototypes, encode_patient, DropoutMask, PatientCache, PatientGrad,
    PhenotypeSet, PhenotypeSetGrad,
};
pub use score::{
    distance, distance_backward, drug_importance, drug_importance_backward, drug_view, phenotype_distances,
    probability_from_sets, recommend_probability, score_query, weighted_distance, weighted_distance_backward, Ablation,
    DrugView, ABLATION_VARIANTS,
};

#[cfg(test)]
mod tests;
