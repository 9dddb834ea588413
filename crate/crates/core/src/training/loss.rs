//! Episode negative log-likelihood and its gradient.

use rayon::prelude::*;

use crate::data::{Episode, PatientRecord};
use crate::error::{Error, Result};
use crate::knowledge::Assets;
use crate::model::tensor::{sigmoid, softplus};
use crate::model::{
    backward_drug, backward_patient, backward_prototypes, compute_prototypes, drug_importance_backward, drug_view,
    encode_patient, weighted_distance, weighted_distance_backward, Ablation, DropoutMask, ModelParams, PatientCache,
    PatientGrad, PhenotypeSet, PhenotypeSetGrad,
};
use crate::rng;

/// Records per gradient accumulation chunk. Chunks are fixed by position so
/// the summation order, and hence the result, does not depend on threads.
const CHUNK: usize = 16;

/// Dropout settings for a training step: rate and a per-step seed from which
/// each record's mask is derived.
#[derive(Debug, Clone, Copy)]
pub struct StepDropout {
    pub rate: f64,
    pub seed: u64,
}

pub struct EpisodeLoss {
    pub loss: f64,
    pub grads: ModelParams,
    /// `p` for each positive query, then each negative query.
    pub probabilities: Vec<f64>,
}

/// Balanced negative log-likelihood: the average, over the non-empty query
/// sides, of `mean_{q+} -ln p` and `mean_{q-} -ln(1 - p)`; plus gradients
/// for every parameter.
pub fn episode_loss(
    params: &ModelParams,
    assets: &Assets,
    pool: &[PatientRecord],
    episode: &Episode,
    ablation: Ablation,
    dropout: Option<StepDropout>,
) -> Result<EpisodeLoss> {
    if episode.support_pos.is_empty() || episode.support_neg.is_empty() {
        return Err(Error::EmptySupport);
    }
    if episode.query_pos.is_empty() && episode.query_neg.is_empty() {
        return Err(Error::NonFiniteLoss {
            fingerprint: format!("{} (no queries)", episode.fingerprint(pool, &assets.vocab)),
        });
    }
    let hyper = &params.hyper;
    let view = drug_view(params, assets, episode.drug, ablation)?;
    let beta = view.beta.as_deref();

    // Positions: support+, support-, query+, query-.
    let members: Vec<usize> = episode
        .support_pos
        .iter()
        .chain(&episode.support_neg)
        .chain(&episode.query_pos)
        .chain(&episode.query_neg)
        .copied()
        .collect();
    let encoded: Vec<(PhenotypeSet, PatientCache)> = members
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| {
            let mask = dropout.map(|d| DropoutMask {
                rate: d.rate,
                seed: rng::key_u64(d.seed, pos as u64),
            });
            encode_patient(params, assets, &pool[i].codes, mask)
        })
        .collect::<Result<_>>()?;
    let (n_sp, n_sn) = (episode.support_pos.len(), episode.support_neg.len());
    let sets: Vec<&PhenotypeSet> = encoded.iter().map(|e| &e.0).collect();
    let (sup_pos, rest) = sets.split_at(n_sp);
    let (sup_neg, queries) = rest.split_at(n_sn);
    let mode = hyper.missing_phenotype;
    let proto_pos = compute_prototypes(sup_pos, mode)?;
    let proto_neg = compute_prototypes(sup_neg, mode)?;

    let n_qp = episode.query_pos.len();
    let n_qn = episode.query_neg.len();
    let sides = f64::from(u8::from(n_qp > 0) + u8::from(n_qn > 0));
    let g = hyper.phenotype_dim;
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(queries.len());
    let mut d_queries: Vec<PhenotypeSetGrad> = Vec::with_capacity(queries.len());
    let mut d_pos = PhenotypeSetGrad::zeros(g);
    let mut d_neg = PhenotypeSetGrad::zeros(g);
    let mut d_beta = beta.map(|b| vec![0.0; b.len()]);
    for (qi, q) in queries.iter().enumerate() {
        let positive = qi < n_qp;
        let s = weighted_distance(q, &proto_pos, beta, hyper, ablation.multi_phenotype);
        let s_neg = weighted_distance(q, &proto_neg, beta, hyper, ablation.multi_phenotype);
        probabilities.push(sigmoid(s_neg - s));
        // -ln p = softplus(s - s'), -ln(1 - p) = softplus(s' - s).
        let (x, weight) = if positive {
            (s - s_neg, 1.0 / (sides * n_qp as f64))
        } else {
            (s_neg - s, 1.0 / (sides * n_qn as f64))
        };
        loss += weight * softplus(x);
        let dx = weight * sigmoid(x);
        let (ds, ds_neg) = if positive { (dx, -dx) } else { (-dx, dx) };
        let mut dq = PhenotypeSetGrad::zeros(g);
        let multi = ablation.multi_phenotype;
        weighted_distance_backward(q, &proto_pos, beta, hyper, multi, ds, &mut dq, &mut d_pos, d_beta.as_deref_mut());
        weighted_distance_backward(q, &proto_neg, beta, hyper, multi, ds_neg, &mut dq, &mut d_neg, d_beta.as_deref_mut());
        d_queries.push(dq);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            fingerprint: episode.fingerprint(pool, &assets.vocab),
        });
    }

    let mut d_sets = backward_prototypes(sup_pos, &d_pos, mode);
    d_sets.extend(backward_prototypes(sup_neg, &d_neg, mode));
    d_sets.extend(d_queries);

    let partials: Vec<PatientGrad> = encoded
        .par_chunks(CHUNK)
        .zip(d_sets.par_chunks(CHUNK))
        .map(|(enc, ds)| {
            let mut acc = PatientGrad::zeros(params);
            for ((_, cache), d) in enc.iter().zip(ds) {
                backward_patient(params, cache, d, &mut acc);
            }
            acc
        })
        .collect();
    let mut grads = params.zeros_like();
    for p in &partials {
        p.accumulate_into(&mut grads);
    }
    if let (Some(beta), Some(d_beta)) = (beta, d_beta) {
        let dh = drug_importance_backward(params, &view.h, beta, &d_beta, &mut grads.imp_w, &mut grads.imp_b);
        backward_drug(params, &view.cache, &dh).accumulate_into(&mut grads);
    }
    Ok(EpisodeLoss {
        loss,
        grads,
        probabilities,
    })
}
