//! Episode scoring, aggregation and report output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{adjusted_precision_at_k, pr_auc, precision_recall_at_k, roc_auc};
use super::stats::{summarize, welch_t_test, Summary, TTest};
use crate::data::{Episode, PatientRecord};
use crate::error::{Error, Result};
use crate::knowledge::{Assets, CodeId, DrugDiseaseKB, DrugOntology, Vocabulary};
use crate::model::{compute_prototypes, drug_view, encode_patient, probability_from_sets, Ablation, DrugView, ModelParams, PhenotypeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Cutoffs for P@K, R@K and adjusted P@K.
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 1000,
            n_pos: 5,
            n_neg: 25,
            ks: vec![100, 500],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub drug: String,
    /// Queries sorted by record id.
    pub record_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    /// Whether the record carries a KB indication for the drug.
    pub indicated: Vec<bool>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub against: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_episode: Vec<EpisodeResult>,
    pub aggregates: BTreeMap<String, Summary>,
    pub comparisons: Vec<Comparison>,
    /// Mean ROC-AUC per level-2 drug category.
    pub per_category: BTreeMap<String, f64>,
}

/// Eval-mode encodings of the pool records referenced by `episodes`.
pub fn encode_pool(
    params: &ModelParams,
    assets: &Assets,
    pool: &[PatientRecord],
    episodes: &[Episode],
) -> Result<Vec<Option<PhenotypeSet>>> {
    let mut needed = vec![false; pool.len()];
    for ep in episodes {
        for i in ep.support_pos.iter().chain(&ep.support_neg).chain(&ep.query_pos).chain(&ep.query_neg) {
            needed[*i] = true;
        }
    }
    pool.par_iter()
        .zip(needed.par_iter())
        .map(|(r, &need)| {
            if need {
                encode_patient(params, assets, &r.codes, None).map(|(s, _)| Some(s))
            } else {
                Ok(None)
            }
        })
        .collect()
}

fn score_episode(
    params: &ModelParams,
    assets: &Assets,
    pool: &[PatientRecord],
    encoded: &[Option<PhenotypeSet>],
    view: &DrugView,
    ep: &Episode,
    ablation: Ablation,
    ks: &[usize],
) -> Result<EpisodeResult> {
    let get = |i: usize| encoded[i].as_ref().expect("record encoded");
    let mode = params.hyper.missing_phenotype;
    let pos: Vec<&PhenotypeSet> = ep.support_pos.iter().map(|&i| get(i)).collect();
    let neg: Vec<&PhenotypeSet> = ep.support_neg.iter().map(|&i| get(i)).collect();
    let p_pos = compute_prototypes(&pos, mode)?;
    let p_neg = compute_prototypes(&neg, mode)?;
    let mut queries: Vec<(usize, bool)> = ep.queries().collect();
    queries.sort_by(|a, b| pool[a.0].record_id.cmp(&pool[b.0].record_id));
    let mut scores = Vec::with_capacity(queries.len());
    for &(i, _) in &queries {
        scores.push(probability_from_sets(params, view, &p_pos, &p_neg, get(i), ablation)?);
    }
    let labels: Vec<bool> = queries.iter().map(|q| q.1).collect();
    let indicated: Vec<bool> = queries
        .iter()
        .map(|&(i, _)| assets.kb.is_indicated(ep.drug, &pool[i].codes))
        .collect();
    let mut metrics = BTreeMap::new();
    metrics.insert("roc_auc".to_string(), roc_auc(&scores, &labels)?);
    metrics.insert("pr_auc".to_string(), pr_auc(&scores, &labels)?);
    for &k in ks {
        let (p, r) = precision_recall_at_k(&scores, &labels, k)?;
        metrics.insert(format!("p@{k}"), p);
        metrics.insert(format!("r@{k}"), r);
        metrics.insert(format!("adj_p@{k}"), adjusted_precision_at_k(&scores, &labels, &indicated, k)?);
    }
    Ok(EpisodeResult {
        drug: assets.vocab.code(ep.drug).id.clone(),
        record_ids: queries.iter().map(|&(i, _)| pool[i].record_id.clone()).collect(),
        scores,
        labels,
        indicated,
        metrics,
    })
}

/// Scores every episode with frozen parameters. Each pool record is encoded
/// once and shared across episodes.
pub fn run_episodes(
    params: &ModelParams,
    assets: &Assets,
    pool: &[PatientRecord],
    episodes: &[Episode],
    ablation: Ablation,
    ks: &[usize],
) -> Result<Vec<EpisodeResult>> {
    for ep in episodes {
        let n = ep.query_pos.len() + ep.query_neg.len();
        if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
            return Err(Error::KTooLarge { k, n });
        }
    }
    let encoded = encode_pool(params, assets, pool, episodes)?;
    let drugs: BTreeSet<CodeId> = episodes.iter().map(|e| e.drug).collect();
    let views: HashMap<CodeId, DrugView> = drugs
        .into_iter()
        .map(|d| drug_view(params, assets, d, ablation).map(|v| (d, v)))
        .collect::<Result<_>>()?;
    episodes
        .par_iter()
        .map(|ep| score_episode(params, assets, pool, &encoded, &views[&ep.drug], ep, ablation, ks))
        .collect()
}

/// Mean and 95% half width of every metric over episodes.
pub fn aggregate(per_episode: &[EpisodeResult]) -> Result<BTreeMap<String, Summary>> {
    if per_episode.len() < 2 {
        return Err(Error::InsufficientEpisodes(per_episode.len()));
    }
    metric_columns(per_episode)
        .into_iter()
        .map(|(name, values)| summarize(&values).map(|s| (name, s)))
        .collect()
}

fn metric_columns(per_episode: &[EpisodeResult]) -> BTreeMap<String, Vec<f64>> {
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ep in per_episode {
        for (k, v) in &ep.metrics {
            cols.entry(k.clone()).or_default().push(*v);
        }
    }
    cols
}

/// Welch t-test per metric shared by both runs.
pub fn compare(ours: &[EpisodeResult], theirs: &[EpisodeResult], label: &str) -> Result<Vec<Comparison>> {
    let a = metric_columns(ours);
    let b = metric_columns(theirs);
    a.iter()
        .filter_map(|(m, xs)| b.get(m).map(|ys| (m, xs, ys)))
        .map(|(m, xs, ys)| {
            Ok(Comparison {
                metric: m.clone(),
                against: label.to_string(),
                test: welch_t_test(xs, ys)?,
            })
        })
        .collect()
}

/// Mean episode ROC-AUC grouped by each drug's level-2 ancestor (or the drug
/// itself when it sits above level 2).
pub fn per_category_report(per_episode: &[EpisodeResult], ontology: &DrugOntology) -> Result<BTreeMap<String, f64>> {
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ep in per_episode {
        let cat = ontology.ancestor_at_level(&ep.drug, 2)?;
        let auc = ep.metrics.get("roc_auc").copied().unwrap_or(f64::NAN);
        let e = groups.entry(cat.id.clone()).or_insert((0.0, 0));
        e.0 += auc;
        e.1 += 1;
    }
    Ok(groups.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

pub fn evaluate(
    params: &ModelParams,
    assets: &Assets,
    pool: &[PatientRecord],
    episodes: &[Episode],
    ablation: Ablation,
    ks: &[usize],
) -> Result<EvaluationReport> {
    let per_episode = run_episodes(params, assets, pool, episodes, ablation, ks)?;
    Ok(EvaluationReport {
        aggregates: aggregate(&per_episode)?,
        per_category: per_category_report(&per_episode, &assets.ontology)?,
        comparisons: Vec::new(),
        per_episode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub per_drug: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Share of each drug's non-users whose diagnoses hit one of the drug's KB
/// indications, and the mean over drugs. Drugs without non-users count 0.
pub fn false_negative_prevalence(
    records: &[PatientRecord],
    drugs: &BTreeSet<CodeId>,
    kb: &DrugDiseaseKB,
    vocab: &Vocabulary,
) -> Prevalence {
    let per_drug: BTreeMap<String, f64> = drugs
        .iter()
        .map(|&d| {
            let non_users: Vec<&PatientRecord> = records.iter().filter(|r| !r.has_drug(d)).collect();
            let hit = non_users.iter().filter(|r| kb.is_indicated(d, &r.codes)).count();
            let frac = if non_users.is_empty() {
                0.0
            } else {
                hit as f64 / non_users.len() as f64
            };
            (vocab.code(d).id.clone(), frac)
        })
        .collect();
    let mean = if per_drug.is_empty() {
        0.0
    } else {
        per_drug.values().sum::<f64>() / per_drug.len() as f64
    };
    Prevalence { per_drug, mean }
}

impl EvaluationReport {
    /// One JSON object per episode (`kind: "episode"`), then one per
    /// aggregate, comparison and category.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let line = |w: &mut dyn Write, v: serde_json::Value| writeln!(w, "{v}");
        for (i, ep) in self.per_episode.iter().enumerate() {
            line(
                &mut w,
                serde_json::json!({"kind": "episode", "index": i, "drug": ep.drug, "n_queries": ep.scores.len(), "metrics": ep.metrics}),
            )?;
        }
        for (m, s) in &self.aggregates {
            line(
                &mut w,
                serde_json::json!({"kind": "aggregate", "metric": m, "mean": s.mean, "ci95": s.ci95, "sd": s.sd, "n": s.n}),
            )?;
        }
        for c in &self.comparisons {
            line(
                &mut w,
                serde_json::json!({"kind": "comparison", "metric": c.metric, "against": c.against,
                    "statistic": c.test.statistic, "df": c.test.df, "p_value": c.test.p_value}),
            )?;
        }
        for (cat, auc) in &self.per_category {
            line(&mut w, serde_json::json!({"kind": "category", "category": cat, "roc_auc": auc}))?;
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>8} {:>8}", "metric", "mean", "ci95");
        for (m, a) in &self.aggregates {
            let _ = writeln!(s, "{:<12} {:>8.4} {:>8.4}", m, a.mean, a.ci95);
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(s, "\nt-test against {}:", self.comparisons[0].against);
            let _ = writeln!(s, "{:<12} {:>10} {:>10}", "metric", "t", "p");
            for c in &self.comparisons {
                let _ = writeln!(s, "{:<12} {:>10.4} {:>10.3e}", c.metric, c.test.statistic, c.test.p_value);
            }
        }
        if !self.per_category.is_empty() {
            let _ = writeln!(s, "\n{:<12} {:>8}", "category", "roc_auc");
            for (c, v) in &self.per_category {
                let _ = writeln!(s, "{:<12} {:>8.4}", c, v);
            }
        }
        s
    }
}
