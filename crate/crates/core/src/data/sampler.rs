use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PatientRecord;
use crate::error::{Error, Result};
use crate::knowledge::{CodeId, DrugDiseaseKB, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    Train,
    Eval,
}

/// Support/query counts for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub n_pos: usize,
    pub n_neg_support: usize,
    pub n_query_pos: usize,
    pub n_query_neg: usize,
}

/// One few-shot task. Record lists are indices into the pool the episode
/// was sampled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub drug: CodeId,
    pub support_pos: Vec<usize>,
    pub support_neg: Vec<usize>,
    pub query_pos: Vec<usize>,
    pub query_neg: Vec<usize>,
    pub mode: EpisodeMode,
}

impl Episode {
    pub fn queries(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.query_pos
            .iter()
            .map(|&i| (i, true))
            .chain(self.query_neg.iter().map(|&i| (i, false)))
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.support_neg.iter().chain(&self.query_neg).copied()
    }

    /// Short stable identifier used in logs.
    pub fn fingerprint(&self, pool: &[PatientRecord], vocab: &Vocabulary) -> String {
        let mut h: u64 = crate::rng::key_str(0, &vocab.code(self.drug).id);
        for set in [&self.support_pos, &self.support_neg, &self.query_pos, &self.query_neg] {
            for &i in set.iter() {
                h = crate::rng::key_str(h, &pool[i].record_id);
            }
        }
        format!("{}:{h:016x}", vocab.code(self.drug).id)
    }

    /// Episode header followed by tagged record lines (`S+`, `S-`, `Q+`, `Q-`).
    pub fn write_dump(&self, mut w: impl Write, pool: &[PatientRecord], vocab: &Vocabulary) -> std::io::Result<()> {
        let mode = match self.mode {
            EpisodeMode::Train => "train",
            EpisodeMode::Eval => "eval",
        };
        writeln!(
            w,
            "#episode drug={} mode={mode} support_pos={} support_neg={} query_pos={} query_neg={}",
            vocab.code(self.drug).id,
            self.support_pos.len(),
            self.support_neg.len(),
            self.query_pos.len(),
            self.query_neg.len()
        )?;
        for (tag, set) in [
            ("S+", &self.support_pos),
            ("S-", &self.support_neg),
            ("Q+", &self.query_pos),
            ("Q-", &self.query_neg),
        ] {
            for &i in set {
                writeln!(w, "{tag}\t{}", pool[i].to_line(vocab))?;
            }
        }
        Ok(())
    }
}

/// Samples episodes from a fixed record pool.
///
/// In train mode with a knowledge base, negatives whose diagnoses hit any
/// listed indication of the target drug are excluded. Drugs missing from
/// the KB fall back to uniform negatives. Eval mode never filters.
#[derive(Debug)]
pub struct EpisodeSampler<'a> {
    pool: &'a [PatientRecord],
    kb: Option<&'a DrugDiseaseKB>,
    users: HashMap<CodeId, Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(pool: &'a [PatientRecord], kb: Option<&'a DrugDiseaseKB>) -> Self {
        let mut users: HashMap<CodeId, Vec<usize>> = HashMap::new();
        for (i, r) in pool.iter().enumerate() {
            for d in &r.drugs {
                users.entry(*d).or_default().push(i);
            }
        }
        EpisodeSampler { pool, kb, users }
    }

    pub fn pool(&self) -> &'a [PatientRecord] {
        self.pool
    }

    pub fn users(&self, drug: CodeId) -> &[usize] {
        self.users.get(&drug).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Candidate negatives for `drug` under `mode`, in pool order.
    pub fn negative_pool(&self, drug: CodeId, mode: EpisodeMode) -> Vec<usize> {
        let filter = match (mode, self.kb) {
            (EpisodeMode::Train, Some(kb)) if kb.contains_drug(drug) => Some(kb),
            _ => None,
        };
        self.pool
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.has_drug(drug))
            .filter(|(_, r)| filter.is_none_or(|kb| !kb.is_indicated(drug, &r.codes)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Whether `sample_episode` can succeed for `drug` with `shape`.
    pub fn can_sample(&self, drug: CodeId, shape: &EpisodeShape, mode: EpisodeMode) -> bool {
        self.users(drug).len() >= shape.n_pos
            && self.negative_pool(drug, mode).len() >= shape.n_neg_support + shape.n_query_neg
    }

    /// Draws supports and queries without replacement. Query positives are
    /// capped by the positives left after the support draw.
    pub fn sample_episode<R: Rng + ?Sized>(
        &self,
        drug: CodeId,
        shape: &EpisodeShape,
        mode: EpisodeMode,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Result<Episode> {
        let pos = self.users(drug);
        if pos.len() < shape.n_pos {
            return Err(Error::InsufficientPositives {
                drug: vocab.code(drug).id.clone(),
                needed: shape.n_pos,
                found: pos.len(),
            });
        }
        let neg = self.negative_pool(drug, mode);
        let n_neg = shape.n_neg_support + shape.n_query_neg;
        if neg.len() < n_neg {
            return Err(Error::InsufficientNegatives {
                drug: vocab.code(drug).id.clone(),
                needed: n_neg,
                found: neg.len(),
            });
        }
        let n_qpos = shape.n_query_pos.min(pos.len() - shape.n_pos);
        let p: Vec<usize> = index::sample(rng, pos.len(), shape.n_pos + n_qpos)
            .into_iter()
            .map(|i| pos[i])
            .collect();
        let n: Vec<usize> = index::sample(rng, neg.len(), n_neg)
            .into_iter()
            .map(|i| neg[i])
            .collect();
        Ok(Episode {
            drug,
            support_pos: p[..shape.n_pos].to_vec(),
            query_pos: p[shape.n_pos..].to_vec(),
            support_neg: n[..shape.n_neg_support].to_vec(),
            query_neg: n[shape.n_neg_support..].to_vec(),
            mode,
        })
    }

    /// Evaluation episodes: a random eligible drug, `n_pos`/`n_neg` uniform
    /// supports, and every other pool record as a labeled query.
    ///
    /// A drug is eligible when it leaves at least one positive and one
    /// negative query after the support draw.
    pub fn make_eval_episodes<R: Rng + ?Sized>(
        &self,
        drugs: &BTreeSet<CodeId>,
        n_episodes: usize,
        n_pos: usize,
        n_neg: usize,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Result<Vec<Episode>> {
        if n_episodes == 0 {
            return Ok(Vec::new());
        }
        let eligible: Vec<CodeId> = drugs
            .iter()
            .copied()
            .filter(|&d| {
                let users = self.users(d).len();
                users > n_pos && self.pool.len() - users > n_neg
            })
            .collect();
        if eligible.is_empty() {
            return Err(Error::InsufficientPositives {
                drug: format!("<any of {} evaluation drugs>", drugs.len()),
                needed: n_pos + 1,
                found: drugs.iter().map(|&d| self.users(d).len()).max().unwrap_or(0),
            });
        }
        let shape = EpisodeShape {
            n_pos,
            n_neg_support: n_neg,
            n_query_pos: 0,
            n_query_neg: 0,
        };
        let mut out = Vec::with_capacity(n_episodes);
        for _ in 0..n_episodes {
            let drug = eligible[rng.gen_range(0..eligible.len())];
            let mut ep = self.sample_episode(drug, &shape, EpisodeMode::Eval, vocab, rng)?;
            let mut in_support = vec![false; self.pool.len()];
            for &i in ep.support_pos.iter().chain(&ep.support_neg) {
                in_support[i] = true;
            }
            for (i, r) in self.pool.iter().enumerate() {
                if in_support[i] {
                    continue;
                }
                if r.has_drug(drug) {
                    ep.query_pos.push(i);
                } else {
                    ep.query_neg.push(i);
                }
            }
            out.push(ep);
        }
        Ok(out)
    }
}
