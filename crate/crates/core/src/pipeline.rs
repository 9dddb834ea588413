//! End-to-end steps shared by the command-line tool and the benchmarks:
//! load a corpus, split it by drug introduction year, train, evaluate.

use std::collections::BTreeSet;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{first_years, load_records, split_by_introduction, DatasetSplit, Episode, EpisodeSampler, PatientRecord};
use crate::error::Result;
use crate::evaluation::{evaluate, EvaluationReport};
use crate::knowledge::{Assets, CodeId};
use crate::model::{Ablation, Hyperparams, ModelParams};
use crate::rng::{key_str, rng_from};
use crate::training::{train, TrainOptions, TrainOutcome};

#[derive(Debug, Clone)]
pub struct Corpus {
    pub assets: Assets,
    pub split: DatasetSplit,
}

impl Corpus {
    pub fn from_records(cfg: &RunConfig, assets: Assets, records: &[PatientRecord]) -> Result<Self> {
        let split = split_by_introduction(
            records,
            &first_years(records),
            (cfg.split.train_until, cfg.split.valid_until),
            &assets.vocab,
        )?;
        Ok(Corpus { assets, split })
    }

    /// Loads assets and records named by `cfg.assets`.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let assets = Assets::load(&cfg.assets.paths(), cfg.assets.fallback_seed)?;
        let records = load_records(cfg.assets.records_path(), &assets.vocab)?;
        Self::from_records(cfg, assets, &records)
    }

    pub fn test_drugs(&self) -> &BTreeSet<CodeId> {
        &self.split.test_drugs
    }
}

/// Test episodes drawn from the test split with the `eval` section's seed.
pub fn test_episodes(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<Episode>> {
    let sampler = EpisodeSampler::new(&corpus.split.test, None);
    let mut rng = rng_from(key_str(cfg.eval.seed, "test-episodes"));
    sampler.make_eval_episodes(
        &corpus.split.test_drugs,
        cfg.eval.episodes,
        cfg.eval.n_pos,
        cfg.eval.n_neg,
        &corpus.assets.vocab,
        &mut rng,
    )
}

pub fn train_model(cfg: &RunConfig, ablation: Ablation, corpus: &Corpus, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.check_phenotypes(corpus.assets.n_phenotypes())?;
    train(
        &cfg.train,
        &cfg.model,
        ablation,
        &corpus.split,
        &corpus.assets,
        &TrainOptions {
            out_dir,
            log_every: cfg.run.log_every,
        },
    )
}

pub fn evaluate_model(
    cfg: &RunConfig,
    params: &ModelParams,
    ablation: Ablation,
    corpus: &Corpus,
    episodes: &[Episode],
) -> Result<EvaluationReport> {
    evaluate(params, &corpus.assets, &corpus.split.test, episodes, ablation, &cfg.eval.ks)
}

/// Small-scale settings for the synthetic benchmark: the generator defaults,
/// narrow dimensions, 5000 episodes and 50 negative supports per training
/// episode. The recipe defaults stay untouched elsewhere.
pub fn benchmark_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = Hyperparams {
        embedding_dim: cfg.gen.embedding_dim,
        hidden_dim: 32,
        phenotype_dim: 8,
        n_phenotypes: cfg.gen.n_phenotypes,
        attention_hidden: 16,
        ..Hyperparams::default()
    };
    cfg.train.episodes = 5000;
    cfg.train.n_neg_support = 50;
    cfg.train.validate_every = 500;
    cfg.train.valid_episodes = 40;
    cfg.eval.episodes = 200;
    cfg.eval.ks = vec![100];
    cfg.split.train_until = 2014;
    cfg.split.valid_until = 2016;
    cfg
}

/// One row per named report with the mean of each metric.
pub fn comparison_table(rows: &[(&str, &EvaluationReport)], metrics: &[&str]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:<width$}", "variant");
    for m in metrics {
        s.push_str(&format!(" {m:>9}"));
    }
    s.push('\n');
    for (name, rep) in rows {
        s.push_str(&format!("{name:<width$}"));
        for m in metrics {
            match rep.aggregates.get(*m) {
                Some(a) => s.push_str(&format!(" {:>9.4}", a.mean)),
                None => s.push_str(&format!(" {:>9}", "-")),
            }
        }
        s.push('\n');
    }
    s
}
