//! Episodic training with validation-based model selection.

mod loss;
mod optim;

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use loss::{episode_loss, EpisodeLoss, StepDropout};
pub use optim::{lr_at, Adam, BETA1, BETA2, EPSILON};

use crate::data::{DatasetSplit, Episode, EpisodeMode, EpisodeSampler, EpisodeShape, PatientRecord};
use crate::error::{Error, Result};
use crate::evaluation::run_episodes;
use crate::knowledge::{Assets, CodeId};
use crate::model::{Ablation, Checkpoint, CheckpointMeta, Hyperparams, ModelParams};
use crate::rng::{self, key_str, key_u64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: u64,
    pub n_pos: usize,
    pub n_neg_support: usize,
    pub n_query_pos: usize,
    pub n_query_neg: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Validate every this many steps; 0 disables periodic validation (a
    /// final validation still runs when validation data exists).
    pub validate_every: u64,
    /// Number of fixed validation episodes.
    pub valid_episodes: usize,
    /// Negative supports in validation episodes.
    pub valid_n_neg: usize,
    /// Stop after this many validations without improvement.
    pub patience: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 100_000,
            n_pos: 5,
            n_neg_support: 250,
            n_query_pos: 5,
            n_query_neg: 25,
            lr: 1e-3,
            warmup_fraction: 0.10,
            dropout: 0.5,
            seed: 0,
            validate_every: 1000,
            valid_episodes: 200,
            valid_n_neg: 25,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_pos == 0 || self.n_neg_support == 0 {
            return bad("train.n_pos and train.n_neg_support must be positive");
        }
        if self.n_query_pos + self.n_query_neg == 0 {
            return bad("an episode needs at least one query");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("train.warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("train.dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            n_pos: self.n_pos,
            n_neg_support: self.n_neg_support,
            n_query_pos: self.n_query_pos,
            n_query_neg: self.n_query_neg,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub params: ModelParams,
    pub optimizer: Adam,
    pub best_valid_metric: Option<f64>,
    pub best_step: Option<u64>,
    pub rng: rng::Rng,
}

impl TrainState {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        TrainState {
            step: 0,
            optimizer: Adam::new(&params),
            params,
            best_valid_metric: None,
            best_step: None,
            rng: rng::rng_from(key_str(seed, "train-episodes")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub loss: Option<f64>,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_pr_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Parameters with the best validation ROC-AUC, or the final ones when
    /// no validation ran.
    pub best: ModelParams,
    pub log: Vec<LogEntry>,
    /// Loss of every step run, `NaN` for skipped episodes.
    pub losses: Vec<f64>,
    /// Fingerprints of episodes skipped for a non-finite loss.
    pub skipped: Vec<String>,
    /// Training negatives that carry a KB indication for their drug while KB
    /// sampling was on.
    pub kb_violations: usize,
    pub negatives_audited: usize,
}

/// Knobs that are not part of the model's training recipe.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Writes `ckpt/step-N`, `ckpt/best` and `train_log.jsonl` here.
    pub out_dir: Option<&'a Path>,
    /// Log training loss every this many steps (0 = only validation steps).
    pub log_every: u64,
}

/// Drugs in the train split that can supply a full training episode.
pub fn trainable_drugs(sampler: &EpisodeSampler, drugs: impl IntoIterator<Item = CodeId>, shape: &EpisodeShape) -> Vec<CodeId> {
    drugs
        .into_iter()
        .filter(|&d| sampler.can_sample(d, shape, EpisodeMode::Train))
        .collect()
}

/// Fixed validation episodes, or `None` when the validation split cannot
/// supply any.
pub fn validation_episodes(config: &TrainConfig, split: &DatasetSplit, assets: &Assets) -> Option<Vec<Episode>> {
    if config.valid_episodes < 2 || split.valid.is_empty() || split.valid_drugs.is_empty() {
        return None;
    }
    let sampler = EpisodeSampler::new(&split.valid, None);
    let mut r = rng::rng_from(key_str(config.seed, "valid-episodes"));
    match sampler.make_eval_episodes(
        &split.valid_drugs,
        config.valid_episodes,
        config.n_pos,
        config.valid_n_neg,
        &assets.vocab,
        &mut r,
    ) {
        Ok(eps) => Some(eps),
        Err(e) => {
            warn!("validation disabled: {e}");
            None
        }
    }
}

/// Mean ROC-AUC and PR-AUC over `episodes`.
pub fn validate(
    params: &ModelParams,
    assets: &Assets,
    pool: &[PatientRecord],
    episodes: &[Episode],
    ablation: Ablation,
) -> Result<(f64, f64)> {
    let res = run_episodes(params, assets, pool, episodes, ablation, &[])?;
    let n = res.len() as f64;
    let mean = |m: &str| res.iter().map(|r| r.metrics[m]).sum::<f64>() / n;
    Ok((mean("roc_auc"), mean("pr_auc")))
}

pub fn checkpoint_of(params: &ModelParams, assets: &Assets, ablation: Ablation, step: u64) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            hyper: params.hyper.clone(),
            ablation,
            codes: assets.vocab.codes().iter().map(|c| c.id.clone()).collect(),
            step,
        },
        params: params.clone(),
    }
}

/// Initializes parameters from `hyper` and runs [`train_from`].
pub fn train(
    config: &TrainConfig,
    hyper: &Hyperparams,
    ablation: Ablation,
    split: &DatasetSplit,
    assets: &Assets,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(hyper, assets, config.seed)?;
    train_from(TrainState::new(params, config.seed), config, ablation, split, assets, options)
}

/// Runs episodes `state.step..config.episodes`: sample a training drug,
/// sample its episode, take one Adam step on the episode loss, and
/// periodically keep the parameters with the best validation ROC-AUC.
pub fn train_from(
    mut state: TrainState,
    config: &TrainConfig,
    ablation: Ablation,
    split: &DatasetSplit,
    assets: &Assets,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut outcome_log = Vec::new();
    let mut skipped = Vec::new();
    let mut losses = Vec::new();
    let (mut kb_violations, mut negatives_audited) = (0usize, 0usize);
    let mut best = state.params.clone();
    if state.step >= config.episodes {
        return Ok(TrainOutcome {
            state,
            best,
            log: outcome_log,
            losses,
            skipped,
            kb_violations,
            negatives_audited,
        });
    }

    let kb = ablation.kb_sampling.then_some(&assets.kb);
    let sampler = EpisodeSampler::new(&split.train, kb);
    let shape = config.shape();
    let drugs = trainable_drugs(&sampler, split.train_drugs.iter().copied(), &shape);
    if drugs.is_empty() {
        let found = split.train_drugs.iter().map(|&d| sampler.users(d).len()).max().unwrap_or(0);
        return Err(Error::InsufficientPositives {
            drug: "<any training drug>".into(),
            needed: config.n_pos,
            found,
        });
    }
    info!("training on {} drugs, {} records", drugs.len(), split.train.len());
    let valid = validation_episodes(config, split, assets);
    let mut log_file = match options.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let dropout_seed = key_str(config.seed, "dropout");
    let mut stale = 0u64;

    while state.step < config.episodes {
        let drug = drugs[state.rng.gen_range(0..drugs.len())];
        let ep = sampler.sample_episode(drug, &shape, EpisodeMode::Train, &assets.vocab, &mut state.rng)?;
        if let Some(kb) = kb.filter(|kb| kb.contains_drug(drug)) {
            for i in ep.negatives() {
                negatives_audited += 1;
                kb_violations += usize::from(kb.is_indicated(drug, &split.train[i].codes));
            }
        }
        let dropout = (config.dropout > 0.0).then(|| StepDropout {
            rate: config.dropout,
            seed: key_u64(dropout_seed, state.step),
        });
        let lr = lr_at(state.step + 1, config);
        let loss = match episode_loss(&state.params, assets, &split.train, &ep, ablation, dropout) {
            Ok(l) if l.grads.all_finite() => {
                state.optimizer.step(&mut state.params, &l.grads, lr);
                Some(l.loss)
            }
            Ok(_) | Err(Error::NonFiniteLoss { .. }) => {
                let fp = ep.fingerprint(&split.train, &assets.vocab);
                warn!("step {}: non-finite loss or gradient, skipping episode {fp}", state.step + 1);
                skipped.push(fp);
                None
            }
            Err(e) => return Err(e),
        };
        losses.push(loss.unwrap_or(f64::NAN));
        state.step += 1;

        let last = state.step == config.episodes;
        let due = config.validate_every > 0 && state.step % config.validate_every == 0;
        let mut entry = LogEntry {
            step: state.step,
            loss,
            lr,
            valid_roc_auc: None,
            valid_pr_auc: None,
        };
        if let Some(eps) = valid.as_ref().filter(|_| due || last) {
            let (roc, pr) = validate(&state.params, assets, &split.valid, eps, ablation)?;
            entry.valid_roc_auc = Some(roc);
            entry.valid_pr_auc = Some(pr);
            info!("step {}: valid roc_auc {roc:.4} pr_auc {pr:.4}", state.step);
            let ckpt = checkpoint_of(&state.params, assets, ablation, state.step);
            if let Some(dir) = options.out_dir {
                ckpt.save(&dir.join("ckpt").join(format!("step-{}", state.step)))?;
            }
            if state.best_valid_metric.is_none_or(|b| roc > b) {
                state.best_valid_metric = Some(roc);
                state.best_step = Some(state.step);
                best = state.params.clone();
                stale = 0;
                if let Some(dir) = options.out_dir {
                    ckpt.save(&dir.join("ckpt").join("best"))?;
                }
            } else {
                stale += 1;
            }
        }
        let logged = entry.valid_roc_auc.is_some() || (options.log_every > 0 && state.step % options.log_every == 0);
        if logged {
            if let Some((f, path)) = log_file.as_mut() {
                let line = serde_json::to_string(&entry).map_err(|e| Error::Checkpoint(e.to_string()))?;
                writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            outcome_log.push(entry);
        }
        if config.patience.is_some_and(|p| stale >= p) {
            info!("early stop at step {}: no improvement in {stale} validations", state.step);
            break;
        }
    }
    if valid.is_none() {
        best = state.params.clone();
        if let Some(dir) = options.out_dir {
            checkpoint_of(&best, assets, ablation, state.step).save(&dir.join("ckpt").join("best"))?;
        }
    }
    Ok(TrainOutcome {
        state,
        best,
        log: outcome_log,
        losses,
        skipped,
        kb_violations,
        negatives_audited,
    })
}

#[cfg(test)]
mod tests;
