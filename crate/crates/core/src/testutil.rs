//! Small fixtures shared by unit tests.

use std::path::Path;

use rand::Rng;

use crate::knowledge::{Assets, BaseEmbeddingTable, CodeId, DrugDiseaseKB, DrugOntology, PhenotypeMap, Vocabulary};
use crate::model::{Distance, Hyperparams, MissingPhenotype, ModelParams};
use crate::rng::rng_from;

/// Twelve diagnoses over six phenotypes (`c{i}` → `i % 6`) and a small drug
/// tree: `R → {A, B}`, `A → {d1, d2}`, `B → {C, d4}`, `C → d3`.
pub fn toy_assets(dim: usize) -> Assets {
    let mut p = String::from("#phenotypes=6\n");
    for i in 0..12 {
        p.push_str(&format!("c{i}\t{}\n", i % 6));
    }
    let ontology = DrugOntology::parse("#root=R\nA\tR\nB\tR\nC\tB\nd1\tA\nd2\tA\nd3\tC\nd4\tB\n", Path::new("o")).unwrap();
    let phenotypes = PhenotypeMap::parse(&p, Path::new("p")).unwrap();
    let vocab = Vocabulary::new(&phenotypes, &ontology).unwrap();
    let kb = DrugDiseaseKB::parse("d1\tc0,c6\nd2\tc1\nd3\t\n", Path::new("k"), &vocab).unwrap();
    Assets::new(ontology, phenotypes, vocab, kb, BaseEmbeddingTable::new(dim, 5)).unwrap()
}

pub fn toy_hyper() -> Hyperparams {
    Hyperparams {
        embedding_dim: 8,
        hidden_dim: 6,
        phenotype_dim: 4,
        n_phenotypes: 6,
        attention_hidden: 5,
        distance: Distance::Euclidean,
        missing_phenotype: MissingPhenotype::Substitute,
        closure_depth: None,
    }
}

pub fn toy_params(seed: u64) -> (Assets, ModelParams) {
    let hyper = toy_hyper();
    let assets = toy_assets(hyper.embedding_dim);
    let params = ModelParams::init(&hyper, &assets, seed).unwrap();
    (assets, params)
}

/// `n` diagnosis codes drawn at random from the toy vocabulary.
pub fn random_codes(assets: &Assets, n: usize, rng: &mut impl Rng) -> Vec<CodeId> {
    (0..n).map(|_| assets.code_id(&format!("c{}", rng.gen_range(0..12))).unwrap()).collect()
}

pub fn seeded(seed: u64) -> crate::rng::Rng {
    rng_from(seed)
}

/// A separable toy cohort: each record takes one drug `d{k}` and carries that
/// drug's marker diagnosis plus background codes that are never markers.
pub fn toy_records(assets: &Assets, n: usize, seed: u64) -> Vec<crate::data::PatientRecord> {
    const MARKERS: [&str; 4] = ["c0", "c3", "c7", "c10"];
    const BACKGROUND: [&str; 8] = ["c1", "c2", "c4", "c5", "c6", "c8", "c9", "c11"];
    let mut rng = rng_from(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(0..4);
            let mut codes = vec![assets.code_id(MARKERS[k]).unwrap()];
            for _ in 0..rng.gen_range(1..4) {
                codes.push(assets.code_id(BACKGROUND[rng.gen_range(0..8)]).unwrap());
            }
            let j = rng.gen_range(0..codes.len());
            codes.swap(0, j);
            crate::data::PatientRecord {
                record_id: format!("r{i:04}"),
                year: 2000,
                codes,
                drugs: vec![assets.vocab.drug_id(&format!("d{}", k + 1)).unwrap()],
            }
        })
        .collect()
}

pub fn toy_split(assets: &Assets, n_train: usize, n_valid: usize, seed: u64) -> crate::data::DatasetSplit {
    let drugs: std::collections::BTreeSet<CodeId> =
        ["d1", "d2", "d3", "d4"].iter().map(|d| assets.vocab.drug_id(d).unwrap()).collect();
    crate::data::DatasetSplit {
        train_drugs: drugs.clone(),
        valid_drugs: if n_valid > 0 { drugs } else { Default::default() },
        test_drugs: Default::default(),
        train: toy_records(assets, n_train, seed),
        valid: toy_records(assets, n_valid, seed + 1),
        test: Vec::new(),
    }
}
