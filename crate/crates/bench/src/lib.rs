//! Fixtures shared by the benchmarks.

use rxfew_core::data::{EpisodeMode, EpisodeSampler};
use rxfew_core::pipeline::benchmark_config;
use rxfew_core::synthgen::{generate_assets, generate_cohort};
use rxfew_core::{Ablation, Corpus, Episode, ModelParams, RunConfig};

/// A benchmark-sized model on a small corpus, with one training episode.
pub struct Fixture {
    pub cfg: RunConfig,
    pub corpus: Corpus,
    pub params: ModelParams,
    pub episode: Episode,
}

impl Fixture {
    pub fn new() -> Self {
        let mut cfg = benchmark_config();
        cfg.gen.records = 600;
        let world = generate_assets(&cfg.gen).expect("assets");
        let cohort = generate_cohort(&cfg.gen, &world).expect("cohort");
        let corpus = Corpus::from_records(&cfg, world.assets, &cohort.records).expect("corpus");
        let params = ModelParams::init(&cfg.model, &corpus.assets, cfg.train.seed).expect("params");
        let shape = cfg.train.shape();
        let sampler = EpisodeSampler::new(&corpus.split.train, Some(&corpus.assets.kb));
        let drug = *corpus
            .split
            .train_drugs
            .iter()
            .find(|&&d| sampler.can_sample(d, &shape, EpisodeMode::Train))
            .expect("a sampleable drug");
        let mut r = rxfew_core::rng::rng_from(1);
        let episode = sampler
            .sample_episode(drug, &shape, EpisodeMode::Train, &corpus.assets.vocab, &mut r)
            .expect("episode");
        Fixture {
            cfg,
            corpus,
            params,
            episode,
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation::FULL
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
