//! Drug-dependent phenotype distances and the recommendation probability.

use serde::{Deserialize, Serialize};

use super::drug::{encode_drug, DrugCache};
use super::params::{Distance, Hyperparams, ModelParams};
use super::patient::{compute_prototypes, encode_patient, PhenotypeSet, PhenotypeSetGrad};
use super::tensor::{affine, axpy, dot, outer_acc, sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::knowledge::{Assets, CodeId};

/// Component switches; `true` means the component is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Attention over the drug's ancestors; off → `h = m_i`.
    pub ontology: bool,
    /// One vector per phenotype; off → a single pooled vector per patient.
    pub multi_phenotype: bool,
    /// Drug-dependent phenotype weights; off → all weights 1.
    pub drug_importance: bool,
    /// Knowledge-guided negatives during training; off → uniform.
    pub kb_sampling: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        ontology: true,
        multi_phenotype: true,
        drug_importance: true,
        kb_sampling: true,
    };

    /// Plain prototypical network: single vector, uniform negatives.
    pub const PROTONET: Ablation = Ablation {
        ontology: false,
        multi_phenotype: false,
        drug_importance: false,
        kb_sampling: false,
    };

    /// Whether the drug representation influences the score at all.
    pub fn uses_drug(&self) -> bool {
        self.multi_phenotype && self.drug_importance
    }
}

/// The full model plus one variant per removed component, in report order.
pub const ABLATION_VARIANTS: [(&str, Ablation); 5] = [
    ("full", Ablation::FULL),
    (
        "no-ontology",
        Ablation {
            ontology: false,
            ..Ablation::FULL
        },
    ),
    (
        "no-multi-phenotype",
        Ablation {
            multi_phenotype: false,
            ..Ablation::FULL
        },
    ),
    (
        "no-drug-importance",
        Ablation {
            drug_importance: false,
            ..Ablation::FULL
        },
    ),
    (
        "no-kb-sampling",
        Ablation {
            kb_sampling: false,
            ..Ablation::FULL
        },
    ),
];

pub fn distance(a: &[f64], b: &[f64], kind: Distance) -> f64 {
    match kind {
        Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Distance::Cosine => {
            let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot(a, b) / (na * nb)
            }
        }
    }
}

/// Adds `scale * ∂d/∂a` and `scale * ∂d/∂b` into `da`, `db`.
/// At the non-differentiable points (coincident points for euclidean, a zero
/// vector for cosine) the gradient is taken as zero.
pub fn distance_backward(a: &[f64], b: &[f64], kind: Distance, scale: f64, da: &mut [f64], db: &mut [f64]) {
    match kind {
        Distance::Euclidean => {
            let d = distance(a, b, kind);
            if d == 0.0 {
                return;
            }
            for i in 0..a.len() {
                let g = scale * (a[i] - b[i]) / d;
                da[i] += g;
                db[i] -= g;
            }
        }
        Distance::Cosine => {
            let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
            if na == 0.0 || nb == 0.0 {
                return;
            }
            let c = dot(a, b) / (na * nb);
            for i in 0..a.len() {
                da[i] -= scale * (b[i] / (na * nb) - c * a[i] / (na * na));
                db[i] -= scale * (a[i] / (na * nb) - c * b[i] / (nb * nb));
            }
        }
    }
}

/// Masked per-phenotype distances: entries for the union of both active sets,
/// with the pooled fallback standing in for a missing side; every other
/// phenotype is zero.
pub fn phenotype_distances(query: &PhenotypeSet, proto: &PhenotypeSet, kind: Distance, n_phenotypes: usize) -> Result<Vec<f64>> {
    if query.dim() != proto.dim() {
        return Err(Error::DimensionMismatch {
            expected: proto.dim(),
            got: query.dim(),
        });
    }
    let mut z = vec![0.0; n_phenotypes];
    for l in union(query, proto) {
        if l >= n_phenotypes {
            return Err(Error::DimensionMismatch {
                expected: n_phenotypes,
                got: l + 1,
            });
        }
        z[l] = distance(query.get(l), proto.get(l), kind);
    }
    Ok(z)
}

fn union(a: &PhenotypeSet, b: &PhenotypeSet) -> Vec<usize> {
    let mut ls: Vec<usize> = a.active().chain(b.active()).collect();
    ls.sort_unstable();
    ls.dedup();
    ls
}

/// `β = σ(W h + b)`.
pub fn drug_importance(params: &ModelParams, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != params.hyper.embedding_dim {
        return Err(Error::DimensionMismatch {
            expected: params.hyper.embedding_dim,
            got: h.len(),
        });
    }
    let mut pre = vec![0.0; params.hyper.n_phenotypes];
    affine(&params.imp_w, params.imp_b.data(), h, &mut pre);
    Ok(pre.into_iter().map(sigmoid).collect())
}

/// Gradient of `drug_importance` given `dβ`; returns `dh` and accumulates into
/// `imp_w` / `imp_b`.
pub fn drug_importance_backward(
    params: &ModelParams,
    h: &[f64],
    beta: &[f64],
    d_beta: &[f64],
    imp_w: &mut Tensor,
    imp_b: &mut Tensor,
) -> Vec<f64> {
    let d_pre: Vec<f64> = beta.iter().zip(d_beta).map(|(b, d)| d * b * (1.0 - b)).collect();
    outer_acc(imp_w, &d_pre, h);
    axpy(1.0, &d_pre, imp_b.data_mut());
    let mut dh = vec![0.0; h.len()];
    super::tensor::matvec_t_acc(&params.imp_w, &d_pre, &mut dh);
    dh
}

/// `exp(-βᵀz) / (exp(-βᵀz) + exp(-βᵀz'))`, i.e. `σ(βᵀz' - βᵀz)`.
pub fn recommend_probability(beta: &[f64], z: &[f64], z_neg: &[f64]) -> Result<f64> {
    if beta.len() != z.len() || z.len() != z_neg.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            got: if beta.len() != z.len() { z.len() } else { z_neg.len() },
        });
    }
    if !(beta.iter().chain(z).chain(z_neg).all(|x| x.is_finite())) {
        return Err(Error::NonFinite("recommend_probability input"));
    }
    Ok(sigmoid(dot(beta, z_neg) - dot(beta, z)))
}

/// Weighted distance `s = Σ β_l z_l` between a query and one prototype.
/// `beta == None` means every weight is 1; without multi-phenotype only the
/// pooled vectors are compared.
pub fn weighted_distance(
    query: &PhenotypeSet,
    proto: &PhenotypeSet,
    beta: Option<&[f64]>,
    hyper: &Hyperparams,
    multi_phenotype: bool,
) -> f64 {
    if !multi_phenotype {
        return distance(&query.pooled_fallback, &proto.pooled_fallback, hyper.distance);
    }
    union(query, proto)
        .into_iter()
        .map(|l| beta.map_or(1.0, |b| b[l]) * distance(query.get(l), proto.get(l), hyper.distance))
        .sum()
}

/// Backward of [`weighted_distance`] scaled by `ds`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_distance_backward(
    query: &PhenotypeSet,
    proto: &PhenotypeSet,
    beta: Option<&[f64]>,
    hyper: &Hyperparams,
    multi_phenotype: bool,
    ds: f64,
    d_query: &mut PhenotypeSetGrad,
    d_proto: &mut PhenotypeSetGrad,
    d_beta: Option<&mut [f64]>,
) {
    let kind = hyper.distance;
    let dim = query.dim();
    if !multi_phenotype {
        distance_backward(
            &query.pooled_fallback,
            &proto.pooled_fallback,
            kind,
            ds,
            &mut d_query.fallback,
            &mut d_proto.fallback,
        );
        return;
    }
    let mut d_beta = d_beta;
    for l in union(query, proto) {
        let (q, p) = (query.get(l), proto.get(l));
        let w = beta.map_or(1.0, |b| b[l]);
        if let Some(db) = d_beta.as_deref_mut() {
            db[l] += ds * distance(q, p, kind);
        }
        let mut dq = vec![0.0; dim];
        let mut dp = vec![0.0; dim];
        distance_backward(q, p, kind, ds * w, &mut dq, &mut dp);
        d_query.add(query, l, 1.0, &dq);
        d_proto.add(proto, l, 1.0, &dp);
    }
}

/// Drug representation and, when used, its importance weights.
#[derive(Debug, Clone)]
pub struct DrugView {
    pub h: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub cache: DrugCache,
}

pub fn drug_view(params: &ModelParams, assets: &Assets, drug: CodeId, ablation: Ablation) -> Result<DrugView> {
    let (h, cache) = encode_drug(params, assets, drug, ablation.ontology)?;
    let beta = if ablation.uses_drug() {
        Some(drug_importance(params, &h)?)
    } else {
        None
    };
    Ok(DrugView { h, beta, cache })
}

/// `p = σ(s' - s)` from already encoded prototypes and query.
pub fn probability_from_sets(
    params: &ModelParams,
    view: &DrugView,
    pos: &PhenotypeSet,
    neg: &PhenotypeSet,
    query: &PhenotypeSet,
    ablation: Ablation,
) -> Result<f64> {
    let beta = view.beta.as_deref();
    let s = weighted_distance(query, pos, beta, &params.hyper, ablation.multi_phenotype);
    let s_neg = weighted_distance(query, neg, beta, &params.hyper, ablation.multi_phenotype);
    let p = sigmoid(s_neg - s);
    if !p.is_finite() {
        return Err(Error::NonFinite("recommendation probability"));
    }
    Ok(p)
}

/// End-to-end probability of recommending `drug` to the query record, with
/// the model in evaluation mode.
pub fn score_query(
    params: &ModelParams,
    assets: &Assets,
    drug: CodeId,
    support_pos: &[&[CodeId]],
    support_neg: &[&[CodeId]],
    query: &[CodeId],
    ablation: Ablation,
) -> Result<f64> {
    let view = drug_view(params, assets, drug, ablation)?;
    let encode_all = |records: &[&[CodeId]]| -> Result<Vec<PhenotypeSet>> {
        records
            .iter()
            .map(|codes| encode_patient(params, assets, codes, None).map(|(s, _)| s))
            .collect()
    };
    let pos = encode_all(support_pos)?;
    let neg = encode_all(support_neg)?;
    let mode = params.hyper.missing_phenotype;
    let p_pos = compute_prototypes(&pos.iter().collect::<Vec<_>>(), mode)?;
    let p_neg = compute_prototypes(&neg.iter().collect::<Vec<_>>(), mode)?;
    let (q, _) = encode_patient(params, assets, query, None)?;
    probability_from_sets(params, &view, &p_pos, &p_neg, &q, ablation)
}
