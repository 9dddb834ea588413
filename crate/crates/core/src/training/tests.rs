use rand::Rng;

use super::*;
use crate::data::{Episode, EpisodeMode, PatientRecord};
use crate::model::{score_query, Distance, MissingPhenotype, ABLATION_VARIANTS};
use crate::testutil::{random_codes, seeded, toy_assets, toy_hyper, toy_params, toy_split};

fn cfg(episodes: u64) -> TrainConfig {
    TrainConfig {
        episodes,
        n_pos: 3,
        n_neg_support: 8,
        n_query_pos: 3,
        n_query_neg: 8,
        lr: 1e-2,
        warmup_fraction: 0.0,
        dropout: 0.0,
        seed: 7,
        validate_every: 0,
        valid_episodes: 20,
        valid_n_neg: 8,
        patience: None,
    }
}

fn toy_pool(assets: &crate::knowledge::Assets, n: usize, seed: u64) -> Vec<PatientRecord> {
    let mut rng = seeded(seed);
    let d1 = assets.vocab.drug_id("d1").unwrap();
    (0..n)
        .map(|i| PatientRecord {
            record_id: format!("p{i}"),
            year: 2001,
            codes: {
                let v = rng.gen_range(1..=5);
                random_codes(assets, v, &mut rng)
            },
            drugs: vec![d1],
        })
        .collect()
}

fn episode(drug: crate::knowledge::CodeId, qpos: Vec<usize>, qneg: Vec<usize>) -> Episode {
    Episode {
        drug,
        support_pos: vec![0, 1],
        support_neg: vec![2, 3, 4],
        query_pos: qpos,
        query_neg: qneg,
        mode: EpisodeMode::Train,
    }
}

#[test]
fn warmup_schedule() {
    let c = TrainConfig {
        episodes: 1000,
        ..TrainConfig::default()
    };
    assert_eq!(lr_at(0, &c), 0.0);
    assert!((lr_at(50, &c) - 5e-4).abs() < 1e-15);
    assert_eq!(lr_at(100, &c), 1e-3);
    assert_eq!(lr_at(900, &c), 1e-3);
    let flat = TrainConfig {
        warmup_fraction: 0.0,
        ..c
    };
    assert_eq!(lr_at(0, &flat), 1e-3);
}

#[test]
fn defaults_follow_recipe() {
    let c = TrainConfig::default();
    assert_eq!((c.episodes, c.n_pos, c.n_neg_support), (100_000, 5, 250));
    assert_eq!((c.n_query_pos, c.n_query_neg), (5, 25));
    assert_eq!((c.lr, c.warmup_fraction, c.dropout), (1e-3, 0.10, 0.5));
    assert_eq!((BETA1, BETA2, EPSILON), (0.9, 0.999, 1e-8));
}

#[test]
fn zero_gradient_step_is_a_no_op() {
    let (_, params) = toy_params(1);
    let mut p = params.clone();
    let mut adam = Adam::new(&p);
    adam.step(&mut p, &params.zeros_like(), 1e-3);
    assert_eq!(p, params);
    assert_eq!(adam.t, 1);
}

#[test]
fn symmetric_model_loss_is_ln2() {
    let (assets, mut params) = toy_params(2);
    params.proj_w.fill(0.0);
    params.proj_b.fill(0.0);
    let pool = toy_pool(&assets, 10, 20);
    let d1 = assets.vocab.drug_id("d1").unwrap();
    let ep = episode(d1, vec![5, 6], vec![7, 8, 9]);
    let l = episode_loss(&params, &assets, &pool, &ep, Ablation::FULL, None).unwrap();
    assert!((l.loss - 2f64.ln()).abs() < 1e-12, "{}", l.loss);
    assert!(l.probabilities.iter().all(|p| *p == 0.5));
}

#[test]
fn loss_matches_scored_queries() {
    let (assets, params) = toy_params(3);
    let pool = toy_pool(&assets, 12, 30);
    let d3 = assets.vocab.drug_id("d3").unwrap();
    let codes = |i: usize| pool[i].codes.as_slice();
    let pos: Vec<&[_]> = [0, 1].iter().map(|&i| codes(i)).collect();
    let neg: Vec<&[_]> = [2, 3, 4].iter().map(|&i| codes(i)).collect();
    let p = |i: usize| score_query(&params, &assets, d3, &pos, &neg, codes(i), Ablation::FULL).unwrap();

    // Positive queries only: -ln p.
    let ep = episode(d3, vec![5], vec![]);
    let l = episode_loss(&params, &assets, &pool, &ep, Ablation::FULL, None).unwrap();
    assert!((l.loss + p(5).ln()).abs() < 1e-9);

    let ep = episode(d3, vec![5, 6, 7], vec![8, 9, 10, 11]);
    let l = episode_loss(&params, &assets, &pool, &ep, Ablation::FULL, None).unwrap();
    let want = -([5, 6, 7].iter().map(|&i| p(i).ln()).sum::<f64>() / 3.0
        + [8, 9, 10, 11].iter().map(|&i| (1.0 - p(i)).ln()).sum::<f64>() / 4.0)
        / 2.0;
    assert!((l.loss - want).abs() < 1e-9, "{} vs {want}", l.loss);
}

/// Central differences on every entry of every tensor.
fn gradient_check(params: &ModelParams, ablation: Ablation, dropout: Option<StepDropout>) {
    let assets = toy_assets(params.hyper.embedding_dim);
    let pool = toy_pool(&assets, 10, 40);
    let d3 = assets.vocab.drug_id("d3").unwrap();
    let ep = episode(d3, vec![5, 6], vec![7, 8, 9]);
    let analytic = episode_loss(params, &assets, &pool, &ep, ablation, dropout).unwrap().grads;
    let h = 1e-4;
    let mut probe = params.clone();
    let names: Vec<&str> = params.tensors().iter().map(|t| t.0).collect();
    for (ti, name) in names.iter().enumerate() {
        let n = params.tensors()[ti].1.len();
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = params.tensors()[ti].1.data()[k];
            let at = |x: f64, probe: &mut ModelParams| {
                probe.tensors_mut()[ti].1.data_mut()[k] = x;
                episode_loss(probe, &assets, &pool, &ep, ablation, dropout).unwrap().loss
            };
            let up = at(orig + h, &mut probe);
            let down = at(orig - h, &mut probe);
            at(orig, &mut probe);
            *slot = (up - down) / (2.0 * h);
        }
        let a = analytic.tensors()[ti].1.data();
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(numeric.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale < 1e-9 {
            assert!(diff < 1e-9, "{name}: {diff}");
            continue;
        }
        assert!(diff / scale < 1e-4, "{name} ({ablation:?}): relative error {}", diff / scale);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (_, params) = toy_params(4);
    gradient_check(&params, Ablation::FULL, None);
    gradient_check(&params, Ablation::FULL, Some(StepDropout { rate: 0.5, seed: 3 }));
    for (_, ab) in &ABLATION_VARIANTS[1..4] {
        gradient_check(&params, *ab, None);
    }
}

#[test]
fn gradients_match_finite_differences_other_modes() {
    let (_, mut params) = toy_params(5);
    params.hyper.distance = Distance::Cosine;
    gradient_check(&params, Ablation::FULL, None);
    params.hyper.distance = Distance::Euclidean;
    params.hyper.missing_phenotype = MissingPhenotype::Skip;
    gradient_check(&params, Ablation::FULL, None);
    params.hyper.closure_depth = Some(2);
    gradient_check(&params, Ablation::FULL, None);
}

#[test]
fn zero_episodes_returns_initial_state() {
    let assets = toy_assets(8);
    let split = toy_split(&assets, 60, 0, 1);
    let out = train(&cfg(0), &toy_hyper(), Ablation::FULL, &split, &assets, &TrainOptions::default()).unwrap();
    assert_eq!(out.state.step, 0);
    assert_eq!(out.state.params, ModelParams::init(&toy_hyper(), &assets, 7).unwrap());
}

#[test]
fn training_is_deterministic() {
    let assets = toy_assets(8);
    let split = toy_split(&assets, 80, 0, 2);
    let mut c = cfg(50);
    c.dropout = 0.5;
    let run = || train(&c, &toy_hyper(), Ablation::FULL, &split, &assets, &TrainOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.losses.len(), 50);
    assert_eq!(a.losses.last().unwrap().to_bits(), b.losses.last().unwrap().to_bits());
    assert_eq!(a.state.params, b.state.params);
}

#[test]
fn separable_task_beats_chance() {
    let assets = toy_assets(8);
    let split = toy_split(&assets, 160, 0, 3);
    let out = train(&cfg(200), &toy_hyper(), Ablation::FULL, &split, &assets, &TrainOptions::default()).unwrap();
    let tail = &out.losses[150..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(mean < 2f64.ln(), "late loss {mean}");
    assert!(out.skipped.is_empty());
}

#[test]
fn kb_filter_never_leaks_over_1000_episodes() {
    let assets = toy_assets(8);
    let mut split = toy_split(&assets, 120, 0, 4);
    // Background code c6 is a listed indication of d1: some non-users carry it.
    let c6 = assets.code_id("c6").unwrap();
    assert!(split.train.iter().any(|r| r.codes.contains(&c6)));
    split.train_drugs.retain(|d| assets.kb.contains_drug(*d));
    let mut c = cfg(1000);
    c.n_neg_support = 4;
    c.n_query_neg = 4;
    c.n_pos = 2;
    c.n_query_pos = 1;
    let out = train(&c, &toy_hyper(), Ablation::FULL, &split, &assets, &TrainOptions::default()).unwrap();
    assert!(out.negatives_audited > 0);
    assert_eq!(out.kb_violations, 0);
}

#[test]
fn best_checkpoint_reproduces_validation() {
    let assets = toy_assets(8);
    let split = toy_split(&assets, 120, 80, 5);
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(40);
    c.validate_every = 10;
    let opts = TrainOptions {
        out_dir: Some(dir.path()),
        log_every: 5,
    };
    let out = train(&c, &toy_hyper(), Ablation::FULL, &split, &assets, &opts).unwrap();
    let best_step = out.state.best_step.unwrap();
    assert!(dir.path().join(format!("ckpt/step-{best_step}")).exists());
    assert!(dir.path().join("ckpt/step-40").exists());
    let ckpt = Checkpoint::load(&dir.path().join("ckpt/best")).unwrap();
    assert_eq!(ckpt.params, out.best);
    assert_eq!(ckpt.meta.step, best_step);
    let eps = validation_episodes(&c, &split, &assets).unwrap();
    let (roc, _) = validate(&ckpt.params, &assets, &split.valid, &eps, Ablation::FULL).unwrap();
    assert_eq!(roc.to_bits(), out.state.best_valid_metric.unwrap().to_bits());
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 8);
    assert!(log.lines().nth(1).unwrap().contains("valid_roc_auc"));
}

#[test]
fn patience_stops_early() {
    let assets = toy_assets(8);
    let split = toy_split(&assets, 120, 80, 6);
    let mut c = cfg(400);
    c.validate_every = 1;
    c.lr = 1e-9;
    c.patience = Some(3);
    let out = train(&c, &toy_hyper(), Ablation::FULL, &split, &assets, &TrainOptions::default()).unwrap();
    assert!(out.state.step < 400);
}
