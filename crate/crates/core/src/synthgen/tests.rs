use std::collections::BTreeSet;

use super::*;
use crate::data::{first_years, split_by_introduction};
use crate::evaluation::false_negative_prevalence;
use crate::knowledge::{AssetPaths, Assets};

fn small() -> GeneratorSpec {
    GeneratorSpec {
        records: 400,
        ..GeneratorSpec::default()
    }
}

#[test]
fn single_drug_tree_has_two_nodes() {
    let spec = GeneratorSpec {
        n_diseases: 4,
        n_drugs: 1,
        ontology_branching: 1,
        ontology_depth: 1,
        n_phenotypes: 2,
        indications_per_drug: 1,
        records: 20,
        codes_per_record: (1, 3),
        comorbid_phenotypes: (0, 1),
        ..GeneratorSpec::default()
    };
    let w = generate_assets(&spec).unwrap();
    assert_eq!(w.assets.ontology.len(), 2);
    let c = generate_cohort(&spec, &w).unwrap();
    assert_eq!(c.records.len(), 20);
}

#[test]
fn invalid_specs_are_rejected() {
    for spec in [
        GeneratorSpec { n_drugs: 0, ..small() },
        GeneratorSpec { noise_rate: 1.5, ..small() },
        GeneratorSpec { codes_per_record: (5, 2), ..small() },
        GeneratorSpec { codes_per_record: (1, 500), ..small() },
    ] {
        assert!(matches!(generate_assets(&spec), Err(Error::Spec(_))), "{spec:?}");
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let spec = small();
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let w = generate_assets(&spec).unwrap();
        let c = generate_cohort(&spec, &w).unwrap();
        write_corpus(d.path(), &w, &c).unwrap();
    }
    let names = [
        AssetPaths::ONTOLOGY,
        AssetPaths::PHENOTYPES,
        AssetPaths::KB,
        AssetPaths::EMBEDDINGS,
        RECORDS_FILE,
        GROUND_TRUTH_FILE,
    ];
    for name in names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let other = GeneratorSpec { seed: 1, ..spec };
    let w = generate_assets(&other).unwrap();
    let c = generate_cohort(&other, &w).unwrap();
    write_corpus(dirs[1].path(), &w, &c).unwrap();
    let a = std::fs::read(dirs[0].path().join(RECORDS_FILE)).unwrap();
    let b = std::fs::read(dirs[1].path().join(RECORDS_FILE)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn written_assets_load_and_validate() {
    let spec = small();
    let w = generate_assets(&spec).unwrap();
    let c = generate_cohort(&spec, &w).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &w, &c).unwrap();
    let loaded = Assets::load(&AssetPaths::in_dir(dir.path()), 0).unwrap();
    assert_eq!(loaded.vocab.len(), w.assets.vocab.len());
    assert_eq!(loaded.n_phenotypes(), spec.n_phenotypes);
    let records = crate::data::load_records(dir.path().join(RECORDS_FILE), &loaded.vocab).unwrap();
    assert_eq!(records, c.records);
    for d in loaded.ontology.drugs() {
        let ind = loaded.kb.indications(loaded.vocab.drug_id(&d.id).unwrap()).unwrap();
        assert_eq!(ind.len(), spec.indications_per_drug);
    }
}

// Two siblings share an indication iff both carry the category anchor.
#[test]
fn sibling_overlap_matches_parameter() {
    for target in [0.3, 0.7] {
        let mut shared = 0usize;
        let trials = 500;
        for t in 0..trials {
            let spec = GeneratorSpec {
                n_drugs: 2,
                ontology_depth: 2,
                ontology_branching: 1,
                sibling_overlap: target,
                seed: t as u64,
                ..small()
            };
            let w = generate_assets(&spec).unwrap();
            assert_eq!(w.truth.drug_category[0], w.truth.drug_category[1]);
            let a: BTreeSet<usize> = w.truth.indications[0].iter().copied().collect();
            if w.truth.indications[1].iter().any(|x| a.contains(x)) {
                shared += 1;
            }
        }
        let rate = shared as f64 / trials as f64;
        assert!((rate - target).abs() <= 0.05, "target {target} measured {rate}");
    }
}

#[test]
fn siblings_target_one_phenotype() {
    // 20 diseases per phenotype cover 5 siblings with 3 disjoint picks each.
    let spec = GeneratorSpec {
        n_diseases: 160,
        ..small()
    };
    let w = generate_assets(&spec).unwrap();
    for (d, ind) in w.truth.indications.iter().enumerate() {
        let target = w.truth.category_target[&w.truth.drug_category[d]];
        assert!(ind.iter().all(|&x| w.truth.disease_phenotype[x] == target));
    }
}

#[test]
fn prevalence_recovers_false_negative_rate() {
    let spec = GeneratorSpec {
        records: 5000,
        false_negative_rate: 0.25,
        seed: 3,
        ..GeneratorSpec::default()
    };
    let w = generate_assets(&spec).unwrap();
    let c = generate_cohort(&spec, &w).unwrap();
    let drugs: BTreeSet<_> = w.assets.drug_ids().into_iter().filter(|&d| w.assets.kb.contains_drug(d)).collect();
    let prev = false_negative_prevalence(&c.records, &drugs, &w.assets.kb, &w.assets.vocab);
    assert!((prev.mean - 0.25).abs() <= 0.02, "mean prevalence {}", prev.mean);
}

#[test]
fn no_misses_no_noise_means_eligibility_is_prescription() {
    let spec = GeneratorSpec {
        false_negative_rate: 0.0,
        noise_rate: 0.0,
        ..small()
    };
    let w = generate_assets(&spec).unwrap();
    let c = generate_cohort(&spec, &w).unwrap();
    for (_, _, eligible, prescribed) in &c.truth.rows {
        assert_eq!(eligible, prescribed);
    }
}

#[test]
fn records_respect_bounds_and_truth_is_consistent() {
    let spec = GeneratorSpec {
        records: 1000,
        codes_per_record: (3, 7),
        ..GeneratorSpec::default()
    };
    let w = generate_assets(&spec).unwrap();
    let c = generate_cohort(&spec, &w).unwrap();
    assert_eq!(c.records.len(), 1000);
    for r in &c.records {
        let n = r.codes.len();
        assert!((3..=7).contains(&n), "{} has {n} codes", r.record_id);
        let distinct: BTreeSet<_> = r.codes.iter().collect();
        assert_eq!(distinct.len(), n);
        assert!(!r.drugs.is_empty());
    }
    assert_eq!(c.truth.rows.len(), 1000 * spec.n_drugs);
    let mut n_eligible_only = 0;
    for (_, _, eligible, prescribed) in &c.truth.rows {
        assert!(*eligible || !*prescribed);
        n_eligible_only += usize::from(*eligible && !*prescribed);
    }
    assert!(n_eligible_only > 0);
}

#[test]
fn introduction_years_give_a_test_split() {
    let spec = small();
    let w = generate_assets(&spec).unwrap();
    let c = generate_cohort(&spec, &w).unwrap();
    let split = split_by_introduction(&c.records, &first_years(&c.records), (2015, 2017), &w.assets.vocab).unwrap();
    assert!(!split.test_drugs.is_empty());
    assert!(!split.test.is_empty());
    assert!(!split.train.is_empty());
}

