use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::knowledge::{Assets, CCS_PHENOTYPES};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Euclidean,
    Cosine,
}

/// How a support patient lacking phenotype `l` enters the prototype `p^(l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPhenotype {
    /// Contribute the patient's pooled sequence representation.
    Substitute,
    /// Average only over patients that have the phenotype.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Base code embedding width `e`; input of the encoder and the drug path.
    pub embedding_dim: usize,
    /// Bidirectional encoder output width (two halves of `hidden_dim / 2`).
    pub hidden_dim: usize,
    /// Phenotype vector width `g`.
    pub phenotype_dim: usize,
    /// Phenotype count `L`.
    pub n_phenotypes: usize,
    /// Hidden width of the two-layer ancestor attention net.
    pub attention_hidden: usize,
    pub distance: Distance,
    pub missing_phenotype: MissingPhenotype,
    /// Keep at most this many closure entries (drug first); `None` keeps all.
    pub closure_depth: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embedding_dim: 768,
            hidden_dim: 512,
            phenotype_dim: 64,
            n_phenotypes: CCS_PHENOTYPES,
            attention_hidden: 128,
            distance: Distance::Euclidean,
            missing_phenotype: MissingPhenotype::Substitute,
            closure_depth: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.phenotype_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.hidden_dim % 2 != 0 {
            return bad(format!("hidden_dim {} must be even", self.hidden_dim));
        }
        if self.phenotype_dim >= self.hidden_dim {
            return bad(format!(
                "phenotype_dim {} must be smaller than hidden_dim {}",
                self.phenotype_dim, self.hidden_dim
            ));
        }
        if self.n_phenotypes == 0 || self.attention_hidden == 0 {
            return bad("n_phenotypes and attention_hidden must be positive".into());
        }
        if self.closure_depth == Some(0) {
            return bad("closure_depth must be at least 1".into());
        }
        Ok(())
    }

    pub fn direction_dim(&self) -> usize {
        self.hidden_dim / 2
    }
}

/// One direction of a GRU; gate rows are stacked as `[reset, update, new]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl GruParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_ih: Tensor::zeros(&[3 * hidden, input]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.w_ih.cols(), self.hidden())
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn add_assign(&mut self, o: &GruParams) {
        self.w_ih.add_assign(&o.w_ih);
        self.w_hh.add_assign(&o.w_hh);
        self.b_ih.add_assign(&o.b_ih);
        self.b_hh.add_assign(&o.b_hh);
    }
}

/// Every learnable tensor. The same struct doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    /// One row per vocabulary code, initialized from the base table.
    pub embeddings: Tensor,
    pub gru_fwd: GruParams,
    pub gru_bwd: GruParams,
    pub attn_w1: Tensor,
    pub attn_b1: Tensor,
    pub attn_w2: Tensor,
    pub attn_b2: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub imp_w: Tensor,
    pub imp_b: Tensor,
}

pub const N_TENSORS: usize = 17;

impl ModelParams {
    pub fn zeros(hyper: &Hyperparams, n_codes: usize) -> Self {
        let (e, h, g, l, a) = (
            hyper.embedding_dim,
            hyper.direction_dim(),
            hyper.phenotype_dim,
            hyper.n_phenotypes,
            hyper.attention_hidden,
        );
        ModelParams {
            hyper: hyper.clone(),
            embeddings: Tensor::zeros(&[n_codes, e]),
            gru_fwd: GruParams::zeros(e, h),
            gru_bwd: GruParams::zeros(e, h),
            attn_w1: Tensor::zeros(&[a, 2 * e]),
            attn_b1: Tensor::zeros(&[a]),
            attn_w2: Tensor::zeros(&[1, a]),
            attn_b2: Tensor::zeros(&[1]),
            proj_w: Tensor::zeros(&[g, 2 * h]),
            proj_b: Tensor::zeros(&[g]),
            imp_w: Tensor::zeros(&[l, e]),
            imp_b: Tensor::zeros(&[l]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.hyper, self.embeddings.rows())
    }

    /// Embeddings come from the base table; every other weight is uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn init(hyper: &Hyperparams, assets: &Assets, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if assets.embeddings.dim() != hyper.embedding_dim {
            return Err(Error::DimensionMismatch {
                expected: hyper.embedding_dim,
                got: assets.embeddings.dim(),
            });
        }
        if assets.n_phenotypes() != hyper.n_phenotypes {
            return Err(Error::Config(format!(
                "model expects {} phenotypes but the phenotype map declares {}",
                hyper.n_phenotypes,
                assets.n_phenotypes()
            )));
        }
        let mut p = Self::zeros(hyper, assets.vocab.len());
        for (i, code) in assets.vocab.codes().iter().enumerate() {
            p.embeddings.row_mut(i).copy_from_slice(&assets.embeddings.lookup(&code.id));
        }
        let mut r = rng::rng_from(rng::key_str(seed, "model-init"));
        for (name, t) in p.tensors_mut() {
            if name == "embeddings" {
                continue;
            }
            let fan_in = match name {
                n if n.starts_with("gru") => hyper.direction_dim(),
                "attn_b1" => 2 * hyper.embedding_dim,
                "attn_b2" => hyper.attention_hidden,
                "proj_b" => hyper.hidden_dim,
                "imp_b" => hyper.embedding_dim,
                _ => t.cols(),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            t.data_mut().iter_mut().for_each(|x| *x = r.gen_range(-bound..bound));
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); N_TENSORS] {
        [
            ("embeddings", &self.embeddings),
            ("gru_fwd.w_ih", &self.gru_fwd.w_ih),
            ("gru_fwd.w_hh", &self.gru_fwd.w_hh),
            ("gru_fwd.b_ih", &self.gru_fwd.b_ih),
            ("gru_fwd.b_hh", &self.gru_fwd.b_hh),
            ("gru_bwd.w_ih", &self.gru_bwd.w_ih),
            ("gru_bwd.w_hh", &self.gru_bwd.w_hh),
            ("gru_bwd.b_ih", &self.gru_bwd.b_ih),
            ("gru_bwd.b_hh", &self.gru_bwd.b_hh),
            ("attn_w1", &self.attn_w1),
            ("attn_b1", &self.attn_b1),
            ("attn_w2", &self.attn_w2),
            ("attn_b2", &self.attn_b2),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
            ("imp_w", &self.imp_w),
            ("imp_b", &self.imp_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); N_TENSORS] {
        [
            ("embeddings", &mut self.embeddings),
            ("gru_fwd.w_ih", &mut self.gru_fwd.w_ih),
            ("gru_fwd.w_hh", &mut self.gru_fwd.w_hh),
            ("gru_fwd.b_ih", &mut self.gru_fwd.b_ih),
            ("gru_fwd.b_hh", &mut self.gru_fwd.b_hh),
            ("gru_bwd.w_ih", &mut self.gru_bwd.w_ih),
            ("gru_bwd.w_hh", &mut self.gru_bwd.w_hh),
            ("gru_bwd.b_ih", &mut self.gru_bwd.b_ih),
            ("gru_bwd.b_hh", &mut self.gru_bwd.b_hh),
            ("attn_w1", &mut self.attn_w1),
            ("attn_b1", &mut self.attn_b1),
            ("attn_w2", &mut self.attn_w2),
            ("attn_b2", &mut self.attn_b2),
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
            ("imp_w", &mut self.imp_w),
            ("imp_b", &mut self.imp_b),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn n_codes(&self) -> usize {
        self.embeddings.rows()
    }
}
