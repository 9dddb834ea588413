//! Multi-phenotype patient representation and phenotype-level prototypes.

use std::collections::BTreeMap;

use rand::Rng;

use super::gru::{self, GruCache};
use super::params::{GruParams, MissingPhenotype, ModelParams};
use super::tensor::{affine, axpy, matvec_t_acc, mean_of, outer_acc, Tensor};
use crate::error::{Error, Result};
use crate::knowledge::{Assets, CodeId};
use crate::rng;

/// One vector per phenotype present in the source record(s), plus the pooled
/// sequence representation that stands in for every absent phenotype.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeSet {
    /// Keyed by phenotype index; the keys are the active phenotypes.
    pub vectors: BTreeMap<usize, Vec<f64>>,
    pub pooled_fallback: Vec<f64>,
}

impl PhenotypeSet {
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.vectors.keys().copied()
    }

    pub fn is_active(&self, l: usize) -> bool {
        self.vectors.contains_key(&l)
    }

    /// `g^(l)`, or the pooled fallback when `l` is inactive.
    pub fn get(&self, l: usize) -> &[f64] {
        self.vectors.get(&l).unwrap_or(&self.pooled_fallback)
    }

    pub fn dim(&self) -> usize {
        self.pooled_fallback.len()
    }
}

/// Gradient w.r.t. a [`PhenotypeSet`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeSetGrad {
    pub vectors: BTreeMap<usize, Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl PhenotypeSetGrad {
    pub fn zeros(dim: usize) -> Self {
        PhenotypeSetGrad {
            vectors: BTreeMap::new(),
            fallback: vec![0.0; dim],
        }
    }

    /// Routes `g` to phenotype `l` if `set` has it, else to the fallback.
    pub fn add(&mut self, set: &PhenotypeSet, l: usize, scale: f64, g: &[f64]) {
        if set.is_active(l) {
            let dim = g.len();
            axpy(scale, g, self.vectors.entry(l).or_insert_with(|| vec![0.0; dim]));
        } else {
            axpy(scale, g, &mut self.fallback);
        }
    }

    pub fn add_vector(&mut self, l: usize, scale: f64, g: &[f64]) {
        let dim = g.len();
        axpy(scale, g, self.vectors.entry(l).or_insert_with(|| vec![0.0; dim]));
    }
}

/// Dropout applied to encoder outputs: rate and per-record mask seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutMask {
    pub rate: f64,
    pub seed: u64,
}

/// Everything the backward pass needs from one `encode_patient` call.
#[derive(Debug, Clone)]
pub struct PatientCache {
    codes: Vec<CodeId>,
    fwd: GruCache,
    bwd: GruCache,
    /// Inverted-dropout multipliers per position, if dropout was active.
    masks: Option<Vec<Vec<f64>>>,
    /// Positions of each phenotype's codes.
    groups: BTreeMap<usize, Vec<usize>>,
    group_means: BTreeMap<usize, Vec<f64>>,
    pooled: Vec<f64>,
}

/// Sparse per-record gradient, summed into [`ModelParams`] by the caller.
#[derive(Debug, Clone)]
pub struct PatientGrad {
    pub gru_fwd: GruParams,
    pub gru_bwd: GruParams,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub embeddings: Vec<(CodeId, Vec<f64>)>,
}

impl PatientGrad {
    pub fn zeros(params: &ModelParams) -> Self {
        PatientGrad {
            gru_fwd: params.gru_fwd.zeros_like(),
            gru_bwd: params.gru_bwd.zeros_like(),
            proj_w: Tensor::zeros(params.proj_w.shape()),
            proj_b: Tensor::zeros(params.proj_b.shape()),
            embeddings: Vec::new(),
        }
    }

    pub fn accumulate_into(&self, grads: &mut ModelParams) {
        grads.gru_fwd.add_assign(&self.gru_fwd);
        grads.gru_bwd.add_assign(&self.gru_bwd);
        grads.proj_w.add_assign(&self.proj_w);
        grads.proj_b.add_assign(&self.proj_b);
        for (code, g) in &self.embeddings {
            axpy(1.0, g, grads.embeddings.row_mut(code.index()));
        }
    }
}

/// Contextual encoding `[r_1..r_V]` of the record with the bidirectional
/// GRU, then per-phenotype means projected to `g` dims, plus the projected
/// mean of all positions as the pooled fallback.
pub fn encode_patient(
    params: &ModelParams,
    assets: &Assets,
    codes: &[CodeId],
    dropout: Option<DropoutMask>,
) -> Result<(PhenotypeSet, PatientCache)> {
    if codes.is_empty() {
        return Err(Error::EmptyRecord("<anonymous>".into()));
    }
    let inputs: Vec<&[f64]> = codes.iter().map(|c| params.embeddings.row(c.index())).collect();
    let (out_f, fwd) = gru::forward(&params.gru_fwd, &inputs, false);
    let (out_b, bwd) = gru::forward(&params.gru_bwd, &inputs, true);
    let hidden = params.hyper.hidden_dim;
    let mut reps: Vec<Vec<f64>> = out_f
        .into_iter()
        .zip(out_b)
        .map(|(mut f, b)| {
            f.extend_from_slice(&b);
            f
        })
        .collect();

    let masks = match dropout {
        Some(d) if d.rate > 0.0 => {
            let mut r = rng::rng_from(d.seed);
            let keep = 1.0 / (1.0 - d.rate);
            let masks: Vec<Vec<f64>> = (0..reps.len())
                .map(|_| (0..hidden).map(|_| if r.gen::<f64>() < d.rate { 0.0 } else { keep }).collect())
                .collect();
            for (rep, m) in reps.iter_mut().zip(&masks) {
                rep.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
            }
            Some(masks)
        }
        _ => None,
    };

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, c) in codes.iter().enumerate() {
        let l = assets
            .phenotype_of(*c)
            .ok_or_else(|| Error::UnknownCode(assets.vocab.code(*c).id.clone()))?;
        groups.entry(l).or_default().push(j);
    }
    let g = params.hyper.phenotype_dim;
    let project = |x: &[f64]| {
        let mut out = vec![0.0; g];
        affine(&params.proj_w, params.proj_b.data(), x, &mut out);
        out
    };
    let mut vectors = BTreeMap::new();
    let mut group_means = BTreeMap::new();
    for (&l, members) in &groups {
        let m = mean_of(members.iter().map(|&j| reps[j].as_slice()), hidden);
        vectors.insert(l, project(&m));
        group_means.insert(l, m);
    }
    let pooled = mean_of(reps.iter().map(Vec::as_slice), hidden);
    let set = PhenotypeSet {
        vectors,
        pooled_fallback: project(&pooled),
    };
    let cache = PatientCache {
        codes: codes.to_vec(),
        fwd,
        bwd,
        masks,
        groups,
        group_means,
        pooled,
    };
    Ok((set, cache))
}

/// Accumulates the gradient of one record's encoding into `acc`.
pub fn backward_patient(params: &ModelParams, cache: &PatientCache, d_set: &PhenotypeSetGrad, acc: &mut PatientGrad) {
    let hyper = &params.hyper;
    let hidden = hyper.hidden_dim;
    let v = cache.codes.len();
    let proj_w = &mut acc.proj_w;
    let proj_b = &mut acc.proj_b;
    let mut d_reps = vec![vec![0.0; hidden]; v];

    let mut through_projection = |dg: &[f64], mean: &[f64], positions: &mut dyn Iterator<Item = usize>, n: usize| {
        outer_acc(proj_w, dg, mean);
        axpy(1.0, dg, proj_b.data_mut());
        let mut dm = vec![0.0; hidden];
        matvec_t_acc(&params.proj_w, dg, &mut dm);
        let inv = 1.0 / n as f64;
        for j in positions {
            axpy(inv, &dm, &mut d_reps[j]);
        }
    };
    for (l, dg) in &d_set.vectors {
        let members = &cache.groups[l];
        through_projection(dg, &cache.group_means[l], &mut members.iter().copied(), members.len());
    }
    if d_set.fallback.iter().any(|x| *x != 0.0) {
        through_projection(&d_set.fallback, &cache.pooled, &mut (0..v), v);
    }

    if let Some(masks) = &cache.masks {
        for (d, m) in d_reps.iter_mut().zip(masks) {
            d.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
        }
    }
    let h = hyper.direction_dim();
    let d_fwd: Vec<Vec<f64>> = d_reps.iter().map(|d| d[..h].to_vec()).collect();
    let d_bwd: Vec<Vec<f64>> = d_reps.iter().map(|d| d[h..].to_vec()).collect();
    let inputs: Vec<&[f64]> = cache.codes.iter().map(|c| params.embeddings.row(c.index())).collect();
    let e = hyper.embedding_dim;
    let mut d_inputs = vec![vec![0.0; e]; v];
    gru::backward(&params.gru_fwd, &inputs, &cache.fwd, &d_fwd, &mut acc.gru_fwd, &mut d_inputs);
    gru::backward(&params.gru_bwd, &inputs, &cache.bwd, &d_bwd, &mut acc.gru_bwd, &mut d_inputs);
    acc.embeddings.extend(cache.codes.iter().copied().zip(d_inputs));
}

/// Phenotype-level prototypes over a support set. The prototype's active set
/// is the union of the members' active sets; its fallback is the mean of the
/// members' fallbacks.
pub fn compute_prototypes(sets: &[&PhenotypeSet], mode: MissingPhenotype) -> Result<PhenotypeSet> {
    let first = sets.first().ok_or(Error::EmptySupport)?;
    let dim = first.dim();
    for s in sets {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.dim(),
            });
        }
    }
    let mut active: Vec<usize> = sets.iter().flat_map(|s| s.active()).collect();
    active.sort_unstable();
    active.dedup();
    let mut vectors = BTreeMap::new();
    for l in active {
        let v = match mode {
            MissingPhenotype::Substitute => mean_of(sets.iter().map(|s| s.get(l)), dim),
            MissingPhenotype::Skip => mean_of(sets.iter().filter_map(|s| s.vectors.get(&l).map(Vec::as_slice)), dim),
        };
        vectors.insert(l, v);
    }
    Ok(PhenotypeSet {
        vectors,
        pooled_fallback: mean_of(sets.iter().map(|s| s.pooled_fallback.as_slice()), dim),
    })
}

/// Distributes a prototype gradient back to its support members.
pub fn backward_prototypes(
    sets: &[&PhenotypeSet],
    d_proto: &PhenotypeSetGrad,
    mode: MissingPhenotype,
) -> Vec<PhenotypeSetGrad> {
    let dim = d_proto.fallback.len();
    let n = sets.len() as f64;
    let mut out: Vec<PhenotypeSetGrad> = sets.iter().map(|_| PhenotypeSetGrad::zeros(dim)).collect();
    for (grad, set) in out.iter_mut().zip(sets) {
        axpy(1.0 / n, &d_proto.fallback, &mut grad.fallback);
        for (&l, g) in &d_proto.vectors {
            match mode {
                MissingPhenotype::Substitute => grad.add(set, l, 1.0 / n, g),
                MissingPhenotype::Skip => {
                    if set.is_active(l) {
                        let n_l = sets.iter().filter(|s| s.is_active(l)).count() as f64;
                        grad.add_vector(l, 1.0 / n_l, g);
                    }
                }
            }
        }
    }
    out
}
