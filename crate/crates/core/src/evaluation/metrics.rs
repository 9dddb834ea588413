//! Ranking metrics over one episode's scored queries.
//!
//! Every function takes scores and labels aligned by position. Ties in the
//! ranking are broken by position, so callers that want a record-id tiebreak
//! pass queries sorted by record id.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let pos = labels.iter().filter(|l| **l).count();
    Ok((pos, labels.len() - pos))
}

fn check_both(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Indices ordered by descending score, ties by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Uses midranks, so it runs in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_both(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: mean over positives of the precision at each
/// positive's rank.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_both(scores, labels)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// `(P@k, R@k)`. Recall is 0 when there are no positives.
pub fn precision_recall_at_k(scores: &[f64], labels: &[bool], k: usize) -> Result<(f64, f64)> {
    let (pos, _) = check(scores, labels)?;
    if k == 0 || k > scores.len() {
        return Err(Error::KTooLarge { k, n: scores.len() });
    }
    let hits = ranking(scores)[..k].iter().filter(|&&i| labels[i]).count();
    let recall = if pos == 0 { 0.0 } else { hits as f64 / pos as f64 };
    Ok((hits as f64 / k as f64, recall))
}

/// P@k after flipping each negative whose `indicated` flag is set.
pub fn adjusted_precision_at_k(scores: &[f64], labels: &[bool], indicated: &[bool], k: usize) -> Result<f64> {
    check(scores, indicated)?;
    let flipped: Vec<bool> = labels.iter().zip(indicated).map(|(l, f)| *l || *f).collect();
    precision_recall_at_k(scores, &flipped, k).map(|(p, _)| p)
}
