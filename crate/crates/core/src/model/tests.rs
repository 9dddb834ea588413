use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::error::Error;
use crate::knowledge::CodeId;
use crate::testutil::{random_codes, seeded, toy_params};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn randomize(t: &mut tensor::Tensor, rng: &mut impl Rng, scale: f64) {
    t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
}

/// Plain-loop GRU used as an independent reference.
fn naive_gru(p: &GruParams, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let h = p.w_hh.cols();
    let e = p.w_ih.cols();
    let wi = |r: usize, c: usize| p.w_ih.data()[r * e + c];
    let wh = |r: usize, c: usize| p.w_hh.data()[r * h + c];
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut out = vec![vec![]; xs.len()];
    let mut state = vec![0.0; h];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        let x = &xs[t];
        let mut next = vec![0.0; h];
        for i in 0..h {
            let pre = |g: usize| {
                let row = g * h + i;
                let a: f64 = (0..e).map(|c| wi(row, c) * x[c]).sum::<f64>() + p.b_ih.data()[row];
                let b: f64 = (0..h).map(|c| wh(row, c) * state[c]).sum::<f64>() + p.b_hh.data()[row];
                (a, b)
            };
            let (ar, br) = pre(0);
            let (az, bz) = pre(1);
            let (an, bn) = pre(2);
            let r = sig(ar + br);
            let z = sig(az + bz);
            let n = (an + r * bn).tanh();
            next[i] = (1.0 - z) * n + z * state[i];
        }
        state = next.clone();
        out[t] = next;
    }
    out
}

fn naive_project(params: &ModelParams, r: &[f64]) -> Vec<f64> {
    let g = params.hyper.phenotype_dim;
    let c = r.len();
    (0..g)
        .map(|i| params.proj_b.data()[i] + (0..c).map(|k| params.proj_w.data()[i * c + k] * r[k]).sum::<f64>())
        .collect()
}

fn pset(entries: &[(usize, Vec<f64>)], fallback: Vec<f64>) -> PhenotypeSet {
    PhenotypeSet {
        vectors: entries.iter().cloned().collect(),
        pooled_fallback: fallback,
    }
}

#[test]
fn drug_without_ontology_is_its_embedding() {
    let (assets, params) = toy_params(1);
    let d3 = assets.vocab.drug_id("d3").unwrap();
    let (h, _) = encode_drug(&params, &assets, d3, false).unwrap();
    assert_eq!(h, params.embeddings.row(d3.index()));
    let mut shallow = params.clone();
    shallow.hyper.closure_depth = Some(1);
    let (h, _) = encode_drug(&shallow, &assets, d3, true).unwrap();
    assert_eq!(h, params.embeddings.row(d3.index()));
}

#[test]
fn constant_attention_averages_closure() {
    let (assets, mut params) = toy_params(2);
    params.attn_w1.fill(0.0);
    params.attn_w2.fill(0.0);
    let d4 = assets.vocab.drug_id("d4").unwrap();
    let mut two = params.clone();
    two.hyper.closure_depth = Some(2);
    let (h, _) = encode_drug(&two, &assets, d4, true).unwrap();
    let b = assets.code_id("B").unwrap();
    let want: Vec<f64> = params
        .embeddings
        .row(d4.index())
        .iter()
        .zip(params.embeddings.row(b.index()))
        .map(|(x, y)| (x + y) / 2.0)
        .collect();
    assert!(close(&h, &want, 1e-12));
}

#[test]
fn drug_attention_matches_oracle() {
    let (assets, mut params) = toy_params(3);
    let mut rng = seeded(30);
    randomize(&mut params.attn_w1, &mut rng, 0.5);
    randomize(&mut params.attn_b1, &mut rng, 0.5);
    randomize(&mut params.attn_w2, &mut rng, 0.5);
    let d3 = assets.vocab.drug_id("d3").unwrap();
    let closure: Vec<CodeId> = ["d3", "C", "B", "R"].iter().map(|c| assets.code_id(c).unwrap()).collect();
    let e = params.hyper.embedding_dim;
    let a = params.hyper.attention_hidden;
    let mi = params.embeddings.row(d3.index()).to_vec();
    let logits: Vec<f64> = closure
        .iter()
        .map(|c| {
            let mut cat = mi.clone();
            cat.extend_from_slice(params.embeddings.row(c.index()));
            (0..a)
                .map(|k| {
                    let u: f64 = (0..2 * e).map(|t| params.attn_w1.data()[k * 2 * e + t] * cat[t]).sum::<f64>()
                        + params.attn_b1.data()[k];
                    params.attn_w2.data()[k] * u.tanh()
                })
                .sum::<f64>()
                + params.attn_b2.data()[0]
        })
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let alpha: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
    let mut want = vec![0.0; e];
    for (c, w) in closure.iter().zip(&alpha) {
        for (o, x) in want.iter_mut().zip(params.embeddings.row(c.index())) {
            *o += w * x;
        }
    }
    let (h, cache) = encode_drug(&params, &assets, d3, true).unwrap();
    assert!(close(&h, &want, 1e-9));
    let got: Vec<f64> = cache.attention().map(|(_, a)| a).collect();
    assert!(close(&got, &alpha, 1e-9));
    assert!(matches!(encode_drug(&params, &assets, assets.code_id("c1").unwrap(), true), Err(Error::UnknownDrug(_))));
}

#[test]
fn single_code_patient() {
    let (assets, params) = toy_params(4);
    let c7 = assets.code_id("c7").unwrap();
    let (set, _) = encode_patient(&params, &assets, &[c7], None).unwrap();
    assert_eq!(set.active().collect::<Vec<_>>(), vec![1]);
    assert!(close(set.get(1), &set.pooled_fallback, 1e-12));
    assert!(matches!(encode_patient(&params, &assets, &[], None), Err(Error::EmptyRecord(_))));
}

#[test]
fn patient_phenotypes_match_grouping_oracle() {
    let (assets, mut params) = toy_params(5);
    let mut rng = seeded(50);
    randomize(&mut params.proj_b, &mut rng, 0.3);
    // Three phenotypes: 0 (c0, c6, c0), 2 (c2, c8), 5 (c5).
    let codes: Vec<CodeId> = ["c0", "c2", "c6", "c5", "c8", "c0"].iter().map(|c| assets.code_id(c).unwrap()).collect();
    let xs: Vec<Vec<f64>> = codes.iter().map(|c| params.embeddings.row(c.index()).to_vec()).collect();
    let f = naive_gru(&params.gru_fwd, &xs, false);
    let b = naive_gru(&params.gru_bwd, &xs, true);
    let reps: Vec<Vec<f64>> = f.iter().zip(&b).map(|(x, y)| [x.clone(), y.clone()].concat()).collect();
    let (set, _) = encode_patient(&params, &assets, &codes, None).unwrap();
    assert_eq!(set.active().collect::<Vec<_>>(), vec![0, 2, 5]);
    for (l, members) in [(0usize, vec![0usize, 2, 5]), (2, vec![1, 4]), (5, vec![3])] {
        let projected: Vec<Vec<f64>> = members.iter().map(|&j| naive_project(&params, &reps[j])).collect();
        let want: Vec<f64> = (0..4)
            .map(|i| projected.iter().map(|p| p[i]).sum::<f64>() / members.len() as f64)
            .collect();
        assert!(close(set.get(l), &want, 1e-9), "phenotype {l}");
    }
    let mean: Vec<f64> = (0..6).map(|i| reps.iter().map(|r| r[i]).sum::<f64>() / 6.0).collect();
    assert!(close(&set.pooled_fallback, &naive_project(&params, &mean), 1e-9));
}

#[test]
fn two_codes_same_phenotype_give_midpoint() {
    let (assets, params) = toy_params(6);
    let codes: Vec<CodeId> = ["c3", "c9"].iter().map(|c| assets.code_id(c).unwrap()).collect();
    let xs: Vec<Vec<f64>> = codes.iter().map(|c| params.embeddings.row(c.index()).to_vec()).collect();
    let f = naive_gru(&params.gru_fwd, &xs, false);
    let b = naive_gru(&params.gru_bwd, &xs, true);
    let p0 = naive_project(&params, &[f[0].clone(), b[0].clone()].concat());
    let p1 = naive_project(&params, &[f[1].clone(), b[1].clone()].concat());
    let mid: Vec<f64> = p0.iter().zip(&p1).map(|(x, y)| (x + y) / 2.0).collect();
    let (set, _) = encode_patient(&params, &assets, &codes, None).unwrap();
    assert!(close(set.get(3), &mid, 1e-9));
}

#[test]
fn dropout_is_seeded_and_inverted() {
    let (assets, params) = toy_params(7);
    let codes = random_codes(&assets, 5, &mut seeded(70));
    let mask = DropoutMask { rate: 0.5, seed: 9 };
    let (a, _) = encode_patient(&params, &assets, &codes, Some(mask)).unwrap();
    let (b, _) = encode_patient(&params, &assets, &codes, Some(mask)).unwrap();
    let (c, _) = encode_patient(&params, &assets, &codes, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let (d, _) = encode_patient(&params, &assets, &codes, Some(DropoutMask { rate: 0.0, seed: 9 })).unwrap();
    assert_eq!(c, d);
}

#[test]
fn prototype_examples() {
    let a = pset(&[(1, vec![1.0, 2.0])], vec![0.0, 0.0]);
    let b = pset(&[(1, vec![3.0, 6.0]), (2, vec![1.0, 1.0])], vec![2.0, 2.0]);
    let one = compute_prototypes(&[&a], MissingPhenotype::Substitute).unwrap();
    assert_eq!(one, a);
    let two = compute_prototypes(&[&a, &b], MissingPhenotype::Substitute).unwrap();
    assert_eq!(two.get(1), &[2.0, 4.0]);
    // `a` lacks phenotype 2 and contributes its fallback.
    assert_eq!(two.get(2), &[0.5, 0.5]);
    assert_eq!(two.pooled_fallback, vec![1.0, 1.0]);
    let skip = compute_prototypes(&[&a, &b], MissingPhenotype::Skip).unwrap();
    assert_eq!(skip.get(2), &[1.0, 1.0]);
    assert!(matches!(compute_prototypes(&[], MissingPhenotype::Substitute), Err(Error::EmptySupport)));
    let c = pset(&[], vec![0.0; 3]);
    assert!(matches!(
        compute_prototypes(&[&a, &c], MissingPhenotype::Substitute),
        Err(Error::DimensionMismatch { .. })
    ));
}

fn random_set(rng: &mut impl Rng, l: usize, g: usize) -> PhenotypeSet {
    let mut vectors = std::collections::BTreeMap::new();
    for k in 0..l {
        if rng.gen_bool(0.5) {
            vectors.insert(k, (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect());
        }
    }
    PhenotypeSet {
        vectors,
        pooled_fallback: (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    }
}

#[test]
fn prototypes_match_brute_force() {
    let mut rng = seeded(80);
    let sets: Vec<PhenotypeSet> = (0..5).map(|_| random_set(&mut rng, 6, 3)).collect();
    let refs: Vec<&PhenotypeSet> = sets.iter().collect();
    let proto = compute_prototypes(&refs, MissingPhenotype::Substitute).unwrap();
    for l in 0..6 {
        let any = sets.iter().any(|s| s.vectors.contains_key(&l));
        assert_eq!(proto.is_active(l), any);
        if !any {
            continue;
        }
        let mut acc = [0.0; 3];
        for s in &sets {
            let v = s.vectors.get(&l).unwrap_or(&s.pooled_fallback);
            for i in 0..3 {
                acc[i] += v[i];
            }
        }
        let want: Vec<f64> = acc.iter().map(|x| x / 5.0).collect();
        assert!(close(proto.get(l), &want, 1e-9));
    }
}

#[test]
fn distance_examples() {
    let q = pset(&[(0, vec![3.0])], vec![0.0]);
    let p = pset(&[(0, vec![1.0])], vec![0.0]);
    let z = phenotype_distances(&q, &p, Distance::Euclidean, 4).unwrap();
    assert_eq!(z, vec![2.0, 0.0, 0.0, 0.0]);
    let z = phenotype_distances(&q, &q, Distance::Euclidean, 4).unwrap();
    assert_eq!(z, vec![0.0; 4]);
    // Phenotype 2 is active only on the prototype side: query falls back.
    let p2 = pset(&[(2, vec![4.0])], vec![0.0]);
    let z = phenotype_distances(&q, &p2, Distance::Euclidean, 4).unwrap();
    assert_eq!(z, vec![3.0, 0.0, 4.0, 0.0]);
    let wide = pset(&[], vec![0.0, 0.0]);
    assert!(matches!(
        phenotype_distances(&q, &wide, Distance::Euclidean, 4),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!((distance(&[1.0, 0.0], &[0.0, 1.0], Distance::Cosine) - 1.0).abs() < 1e-12);
    assert!(distance(&[2.0, 2.0], &[1.0, 1.0], Distance::Cosine).abs() < 1e-12);
    assert_eq!(distance(&[0.0, 0.0], &[1.0, 1.0], Distance::Cosine), 1.0);
}

#[test]
fn importance_examples() {
    let (_, mut params) = toy_params(9);
    let h = vec![0.3; 8];
    params.imp_w.fill(0.0);
    params.imp_b.fill(0.0);
    assert_eq!(drug_importance(&params, &h).unwrap(), vec![0.5; 6]);
    params.imp_b.data_mut()[2] = 20.0;
    assert!(drug_importance(&params, &h).unwrap()[2] > 0.9999);
    let mut rng = seeded(90);
    randomize(&mut params.imp_w, &mut rng, 1.0);
    randomize(&mut params.imp_b, &mut rng, 1.0);
    let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let want: Vec<f64> = (0..6)
        .map(|l| {
            let pre: f64 = (0..8).map(|k| params.imp_w.data()[l * 8 + k] * h[k]).sum::<f64>() + params.imp_b.data()[l];
            1.0 / (1.0 + (-pre).exp())
        })
        .collect();
    assert!(close(&drug_importance(&params, &h).unwrap(), &want, 1e-9));
    assert!(drug_importance(&params, &[0.0; 3]).is_err());
}

#[test]
fn probability_examples() {
    let z = [0.4, 1.0, 0.0];
    assert_eq!(recommend_probability(&[0.2, 0.7, 0.9], &z, &z).unwrap(), 0.5);
    assert_eq!(recommend_probability(&[0.0; 3], &z, &[9.0, 1.0, 3.0]).unwrap(), 0.5);
    let p = recommend_probability(&[1.0], &[0.0], &[3f64.ln()]).unwrap();
    assert!((p - 0.75).abs() < 1e-12);
    assert!(matches!(
        recommend_probability(&[1.0], &[f64::NAN], &[0.0]),
        Err(Error::NonFinite(_))
    ));
    // Extreme gaps stay inside (0,1) at the representable limit.
    let p = recommend_probability(&[1.0], &[0.0], &[800.0]).unwrap();
    assert!(p <= 1.0 && p.is_finite());
}

fn records(assets: &crate::knowledge::Assets, seed: u64, n: usize) -> Vec<Vec<CodeId>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let v = rng.gen_range(1..=5);
            random_codes(assets, v, &mut rng)
        })
        .collect()
}

#[test]
fn identical_single_support_favours_positive() {
    let (assets, params) = toy_params(10);
    let recs = records(&assets, 100, 4);
    let d1 = assets.vocab.drug_id("d1").unwrap();
    let p = score_query(&params, &assets, d1, &[&recs[0]], &[&recs[1], &recs[2]], &recs[0], Ablation::FULL).unwrap();
    assert!(p > 0.5);
}

#[test]
fn single_vector_mode_is_protonet() {
    let (assets, params) = toy_params(11);
    let recs = records(&assets, 110, 9);
    let d2 = assets.vocab.drug_id("d2").unwrap();
    let pos: Vec<&[CodeId]> = recs[..3].iter().map(Vec::as_slice).collect();
    let neg: Vec<&[CodeId]> = recs[3..8].iter().map(Vec::as_slice).collect();
    let query = &recs[8];
    // Independent single-vector oracle: pooled representation, class means,
    // softmax over negative distances.
    let pooled = |codes: &[CodeId]| {
        let xs: Vec<Vec<f64>> = codes.iter().map(|c| params.embeddings.row(c.index()).to_vec()).collect();
        let f = naive_gru(&params.gru_fwd, &xs, false);
        let b = naive_gru(&params.gru_bwd, &xs, true);
        let reps: Vec<Vec<f64>> = f.iter().zip(&b).map(|(x, y)| [x.clone(), y.clone()].concat()).collect();
        let mean: Vec<f64> = (0..6).map(|i| reps.iter().map(|r| r[i]).sum::<f64>() / reps.len() as f64).collect();
        naive_project(&params, &mean)
    };
    let centroid = |rs: &[&[CodeId]]| {
        let vs: Vec<Vec<f64>> = rs.iter().map(|r| pooled(r)).collect();
        (0..4).map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / vs.len() as f64).collect::<Vec<_>>()
    };
    let q = pooled(query);
    let dist = |c: &[f64]| q.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let (dp, dn) = (dist(&centroid(&pos)), dist(&centroid(&neg)));
    let want = (-dp).exp() / ((-dp).exp() + (-dn).exp());
    for ablation in [Ablation::PROTONET, ABLATION_VARIANTS[2].1] {
        let got = score_query(&params, &assets, d2, &pos, &neg, query, ablation).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn unit_importance_composes_with_distances() {
    let (assets, params) = toy_params(12);
    let recs = records(&assets, 120, 6);
    let d3 = assets.vocab.drug_id("d3").unwrap();
    let pos: Vec<&[CodeId]> = recs[..2].iter().map(Vec::as_slice).collect();
    let neg: Vec<&[CodeId]> = recs[2..5].iter().map(Vec::as_slice).collect();
    let enc = |r: &[CodeId]| encode_patient(&params, &assets, r, None).unwrap().0;
    let ps: Vec<PhenotypeSet> = pos.iter().map(|r| enc(r)).collect();
    let ns: Vec<PhenotypeSet> = neg.iter().map(|r| enc(r)).collect();
    let pp = compute_prototypes(&ps.iter().collect::<Vec<_>>(), MissingPhenotype::Substitute).unwrap();
    let pn = compute_prototypes(&ns.iter().collect::<Vec<_>>(), MissingPhenotype::Substitute).unwrap();
    let q = enc(&recs[5]);
    let z = phenotype_distances(&q, &pp, Distance::Euclidean, 6).unwrap();
    let zn = phenotype_distances(&q, &pn, Distance::Euclidean, 6).unwrap();
    let want = recommend_probability(&[1.0; 6], &z, &zn).unwrap();
    let got = score_query(&params, &assets, d3, &pos, &neg, &recs[5], ABLATION_VARIANTS[3].1).unwrap();
    assert!((got - want).abs() < 1e-12);
    let view = drug_view(&params, &assets, d3, Ablation::FULL).unwrap();
    let beta = view.beta.clone().unwrap();
    let want = recommend_probability(&beta, &z, &zn).unwrap();
    let got = score_query(&params, &assets, d3, &pos, &neg, &recs[5], Ablation::FULL).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (assets, params) = toy_params(13);
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            hyper: params.hyper.clone(),
            ablation: ABLATION_VARIANTS[1].1,
            codes: assets.vocab.codes().iter().map(|c| c.id.clone()).collect(),
            step: 42,
        },
        params,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck/best");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    back.check_vocabulary(&assets.vocab).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"garbage!").is_err());
}

proptest! {
    #[test]
    fn attention_is_normalized(seed in 0u64..1000, depth in 1usize..5) {
        let (assets, mut params) = toy_params(seed);
        let mut rng = seeded(seed);
        randomize(&mut params.attn_w1, &mut rng, 3.0);
        randomize(&mut params.attn_w2, &mut rng, 3.0);
        params.hyper.closure_depth = Some(depth);
        for d in ["d1", "d2", "d3", "d4"] {
            let (_, cache) = encode_drug(&params, &assets, assets.vocab.drug_id(d).unwrap(), true).unwrap();
            let s: f64 = cache.attention().map(|(_, a)| a).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(cache.attention().all(|(_, a)| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn probability_bounds_and_monotonicity(
        beta in prop::collection::vec(0.01f64..1.0, 4),
        z in prop::collection::vec(0.0f64..5.0, 4),
        zn in prop::collection::vec(0.0f64..5.0, 4),
        l in 0usize..4,
        cut in 0.01f64..1.0,
    ) {
        let p = recommend_probability(&beta, &z, &zn).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        let mut z2 = z.clone();
        z2[l] -= cut;
        prop_assert!(recommend_probability(&beta, &z2, &zn).unwrap() > p);
    }

    #[test]
    fn masked_entries_are_zero_with_zero_gradient(seed in 0u64..1000) {
        let mut rng = seeded(seed);
        let q = random_set(&mut rng, 8, 3);
        let p = random_set(&mut rng, 8, 3);
        let z = phenotype_distances(&q, &p, Distance::Euclidean, 8).unwrap();
        let beta: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut dq = PhenotypeSetGrad::zeros(3);
        let mut dp = PhenotypeSetGrad::zeros(3);
        let mut db = vec![0.0; 8];
        weighted_distance_backward(&q, &p, Some(&beta), &toy(), true, 1.0, &mut dq, &mut dp, Some(&mut db));
        for l in 0..8 {
            if !q.is_active(l) && !p.is_active(l) {
                prop_assert_eq!(z[l], 0.0);
                prop_assert_eq!(db[l], 0.0);
                prop_assert!(!dq.vectors.contains_key(&l) && !dp.vectors.contains_key(&l));
            }
        }
    }

    #[test]
    fn prototypes_commute_with_permutation(seed in 0u64..1000) {
        let mut rng = seeded(seed);
        let sets: Vec<PhenotypeSet> = (0..5).map(|_| random_set(&mut rng, 5, 2)).collect();
        let fwd: Vec<&PhenotypeSet> = sets.iter().collect();
        let rev: Vec<&PhenotypeSet> = sets.iter().rev().collect();
        let a = compute_prototypes(&fwd, MissingPhenotype::Substitute).unwrap();
        let b = compute_prototypes(&rev, MissingPhenotype::Substitute).unwrap();
        prop_assert_eq!(a.vectors.keys().collect::<Vec<_>>(), b.vectors.keys().collect::<Vec<_>>());
        for l in a.vectors.keys() {
            prop_assert!(close(a.get(*l), b.get(*l), 1e-12));
        }
    }
}

fn toy() -> Hyperparams {
    crate::testutil::toy_hyper()
}
