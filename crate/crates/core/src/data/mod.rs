//! Patient records, drug-introduction splits and episode sampling.

mod record;
mod sampler;
mod split;

pub use record::{load_records, save_records, write_records, PatientRecord};
pub use sampler::{Episode, EpisodeMode, EpisodeSampler, EpisodeShape};
pub use split::{first_years, split_by_introduction, DatasetSplit, Partition};
