//! Drug representation: attention over the drug's ancestor closure.

use super::params::ModelParams;
use super::tensor::{axpy, dot, Tensor};
use crate::error::Result;
use crate::knowledge::{Assets, CodeId};

#[derive(Debug, Clone)]
pub struct DrugCache {
    drug: CodeId,
    /// Closure used, drug first; a single entry when the ontology is off.
    closure: Vec<CodeId>,
    /// `tanh` activations of the attention hidden layer per closure entry.
    hidden: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl DrugCache {
    pub fn attention(&self) -> impl Iterator<Item = (CodeId, f64)> + '_ {
        self.closure.iter().copied().zip(self.alpha.iter().copied())
    }
}

/// Sparse gradient of one drug encoding.
#[derive(Debug, Clone)]
pub struct DrugGrad {
    pub attn_w1: Tensor,
    pub attn_b1: Tensor,
    pub attn_w2: Tensor,
    pub attn_b2: Tensor,
    pub embeddings: Vec<(CodeId, Vec<f64>)>,
}

impl DrugGrad {
    pub fn accumulate_into(&self, grads: &mut ModelParams) {
        grads.attn_w1.add_assign(&self.attn_w1);
        grads.attn_b1.add_assign(&self.attn_b1);
        grads.attn_w2.add_assign(&self.attn_w2);
        grads.attn_b2.add_assign(&self.attn_b2);
        for (code, g) in &self.embeddings {
            axpy(1.0, g, grads.embeddings.row_mut(code.index()));
        }
    }
}

/// `h_i = Σ_j α_ij m_j` over the closure of `drug`, where
/// `α_ij ∝ exp(w2 · tanh(W1 [m_i; m_j] + b1) + b2)`.
/// Without the ontology the representation is just `m_i`.
pub fn encode_drug(params: &ModelParams, assets: &Assets, drug: CodeId, ontology: bool) -> Result<(Vec<f64>, DrugCache)> {
    let mut closure = assets.closure(drug)?.to_vec();
    if !ontology {
        closure.truncate(1);
    } else if let Some(depth) = params.hyper.closure_depth {
        closure.truncate(depth);
    }
    let e = params.hyper.embedding_dim;
    let a = params.hyper.attention_hidden;
    let m_i = params.embeddings.row(drug.index());
    let mut hidden = Vec::with_capacity(closure.len());
    let mut logits = Vec::with_capacity(closure.len());
    let w1 = &params.attn_w1;
    for c in &closure {
        let m_j = params.embeddings.row(c.index());
        let act: Vec<f64> = (0..a)
            .map(|k| {
                let row = w1.row(k);
                (params.attn_b1.data()[k] + dot(&row[..e], m_i) + dot(&row[e..], m_j)).tanh()
            })
            .collect();
        logits.push(dot(params.attn_w2.data(), &act) + params.attn_b2.data()[0]);
        hidden.push(act);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|x| *x /= total);

    let mut h = vec![0.0; e];
    for (c, &w) in closure.iter().zip(&alpha) {
        axpy(w, params.embeddings.row(c.index()), &mut h);
    }
    Ok((
        h,
        DrugCache {
            drug,
            closure,
            hidden,
            alpha,
        },
    ))
}

pub fn backward_drug(params: &ModelParams, cache: &DrugCache, d_h: &[f64]) -> DrugGrad {
    let e = params.hyper.embedding_dim;
    let a = params.hyper.attention_hidden;
    let mut grad = DrugGrad {
        attn_w1: Tensor::zeros(params.attn_w1.shape()),
        attn_b1: Tensor::zeros(params.attn_b1.shape()),
        attn_w2: Tensor::zeros(params.attn_w2.shape()),
        attn_b2: Tensor::zeros(params.attn_b2.shape()),
        embeddings: Vec::with_capacity(cache.closure.len() + 1),
    };
    let mut d_emb: Vec<Vec<f64>> = vec![vec![0.0; e]; cache.closure.len()];
    let mut d_mi = vec![0.0; e];
    // dα_j = d_h · m_j; softmax backward gives dlogit_j = α_j (dα_j - Σ α dα).
    let d_alpha: Vec<f64> = cache
        .closure
        .iter()
        .map(|c| dot(d_h, params.embeddings.row(c.index())))
        .collect();
    let mean: f64 = cache.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let m_i = params.embeddings.row(cache.drug.index());
    let w2 = params.attn_w2.data();
    for (j, c) in cache.closure.iter().enumerate() {
        axpy(cache.alpha[j], d_h, &mut d_emb[j]);
        let dl = cache.alpha[j] * (d_alpha[j] - mean);
        if dl == 0.0 {
            continue;
        }
        grad.attn_b2.data_mut()[0] += dl;
        axpy(dl, &cache.hidden[j], grad.attn_w2.data_mut());
        let m_j = params.embeddings.row(c.index());
        for k in 0..a {
            let t = cache.hidden[j][k];
            let du = dl * w2[k] * (1.0 - t * t);
            if du == 0.0 {
                continue;
            }
            grad.attn_b1.data_mut()[k] += du;
            let (gi, gj) = grad.attn_w1.row_mut(k).split_at_mut(e);
            axpy(du, m_i, gi);
            axpy(du, m_j, gj);
            let row = params.attn_w1.row(k);
            axpy(du, &row[..e], &mut d_mi);
            axpy(du, &row[e..], &mut d_emb[j]);
        }
    }
    grad.embeddings.push((cache.drug, d_mi));
    grad.embeddings.extend(cache.closure.iter().copied().zip(d_emb));
    grad
}
