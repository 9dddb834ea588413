//! Synthetic assets and cohorts with known ground truth.
//!
//! Structure of the generated world:
//! - a random drug tree whose leaf categories each target one phenotype and
//!   own an "anchor" disease that linked members share;
//! - every drug is indicated for `indications_per_drug` diseases of its
//!   category's target phenotype; non-anchor indications are disjoint among
//!   siblings, so two siblings share an indication exactly when both are
//!   linked (probability `sibling_overlap`);
//! - records draw a dominant phenotype, a few comorbid phenotypes and
//!   background codes; a record is eligible for a drug when it has one of the
//!   drug's indications;
//! - per drug, users are drawn among eligible records so that the share of
//!   non-users who are eligible equals `false_negative_rate`, and noise
//!   prescriptions go to ineligible records.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_records, PatientRecord};
use crate::error::{Error, Result};
use crate::knowledge::{
    AssetPaths, Assets, BaseEmbeddingTable, Code, CodeId, CodeKind, DrugDiseaseKB, DrugOntology, PhenotypeMap, Vocabulary,
};
use crate::rng::{key_str, rng_from};

/// Fewest users a drug keeps when calibration would ask for fewer.
pub const MIN_USERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_diseases: usize,
    pub n_drugs: usize,
    pub ontology_branching: usize,
    pub ontology_depth: usize,
    pub n_phenotypes: usize,
    pub indications_per_drug: usize,
    /// Probability that two sibling drugs share an indication.
    pub sibling_overlap: f64,
    pub records: usize,
    /// Inclusive bounds on distinct diagnosis codes per record.
    pub codes_per_record: (usize, usize),
    /// Inclusive bounds on comorbid phenotypes besides the dominant one.
    pub comorbid_phenotypes: (usize, usize),
    /// Inclusive bounds on noise prescriptions for a noisy record.
    pub prescriptions_per_record: (usize, usize),
    /// Probability that a record receives noise prescriptions.
    pub noise_rate: f64,
    /// Target share of non-users that are eligible for the drug.
    pub false_negative_rate: f64,
    /// Inclusive range of drug introduction years.
    pub years: (i32, i32),
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_diseases: 96,
            n_drugs: 80,
            ontology_branching: 4,
            ontology_depth: 3,
            n_phenotypes: 8,
            indications_per_drug: 3,
            sibling_overlap: 0.5,
            records: 3000,
            codes_per_record: (9, 15),
            comorbid_phenotypes: (2, 4),
            prescriptions_per_record: (1, 2),
            noise_rate: 0.05,
            false_negative_rate: 0.25,
            years: (2000, 2019),
            embedding_dim: 32,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        for (name, v) in [
            ("n_diseases", self.n_diseases),
            ("n_drugs", self.n_drugs),
            ("ontology_branching", self.ontology_branching),
            ("ontology_depth", self.ontology_depth),
            ("n_phenotypes", self.n_phenotypes),
            ("indications_per_drug", self.indications_per_drug),
            ("records", self.records),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("sibling_overlap", self.sibling_overlap),
            ("noise_rate", self.noise_rate),
            ("false_negative_rate", self.false_negative_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, (lo, hi)) in [
            ("codes_per_record", self.codes_per_record),
            ("comorbid_phenotypes", self.comorbid_phenotypes),
            ("prescriptions_per_record", self.prescriptions_per_record),
        ] {
            if lo > hi {
                return bad(format!("{name} range {lo}..={hi} is empty"));
            }
        }
        if self.codes_per_record.0 == 0 || self.prescriptions_per_record.0 == 0 {
            return bad("codes_per_record and prescriptions_per_record need a positive minimum".into());
        }
        if self.codes_per_record.1 > self.n_diseases {
            return bad(format!(
                "codes_per_record max {} exceeds n_diseases {}",
                self.codes_per_record.1, self.n_diseases
            ));
        }
        if self.n_diseases < self.n_phenotypes {
            return bad("every phenotype needs at least one disease".into());
        }
        if self.comorbid_phenotypes.1 >= self.n_phenotypes {
            return bad("comorbid phenotypes must leave room for the dominant one".into());
        }
        if self.years.0 > self.years.1 {
            return bad("empty year range".into());
        }
        if self.indications_per_drug > self.n_diseases {
            return bad("indications_per_drug exceeds n_diseases".into());
        }
        Ok(())
    }
}

fn disease_id(i: usize) -> String {
    format!("D{i:04}")
}

fn drug_id(i: usize) -> String {
    format!("RX{i:04}")
}

/// Hidden structure behind the generated assets.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldTruth {
    /// Phenotype of each disease, by disease index.
    pub disease_phenotype: Vec<usize>,
    /// Leaf category of each drug, by drug index.
    pub drug_category: Vec<String>,
    /// Target phenotype per leaf category.
    pub category_target: BTreeMap<String, usize>,
    /// Indicated disease indices per drug.
    pub indications: Vec<Vec<usize>>,
    /// Introduction year per drug.
    pub first_year: Vec<i32>,
}

#[derive(Debug, Clone)]
pub struct GeneratedAssets {
    pub assets: Assets,
    pub truth: WorldTruth,
}

/// Builds the ontology, phenotype map, KB and base embeddings.
pub fn generate_assets(spec: &GeneratorSpec) -> Result<GeneratedAssets> {
    spec.validate()?;
    let mut rng = rng_from(key_str(spec.seed, "assets"));

    // Diseases round-robin over phenotypes.
    let disease_phenotype: Vec<usize> = (0..spec.n_diseases).map(|i| i % spec.n_phenotypes).collect();
    let mut by_phenotype: Vec<Vec<usize>> = vec![Vec::new(); spec.n_phenotypes];
    for (i, &l) in disease_phenotype.iter().enumerate() {
        by_phenotype[l].push(i);
    }

    // Category paths: level-1 ids `C1`..`Cb`, deeper ones `C1.2`, and so on.
    let depth = spec.ontology_depth;
    let mut leaves: Vec<String> = vec![String::new()];
    for _ in 1..depth {
        leaves = leaves
            .iter()
            .flat_map(|p| {
                (1..=spec.ontology_branching).map(move |b| if p.is_empty() { format!("C{b}") } else { format!("{p}.{b}") })
            })
            .collect();
    }
    let mut order: Vec<usize> = (0..spec.n_drugs).collect();
    order.shuffle(&mut rng);
    let mut drug_category = vec![String::new(); spec.n_drugs];
    for (slot, &d) in order.iter().enumerate() {
        drug_category[d] = leaves[slot % leaves.len()].clone();
    }
    let root = "ROOT".to_string();
    let parent_of = |cat: &str| match cat.rfind('.') {
        Some(i) => cat[..i].to_string(),
        None => root.clone(),
    };
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for cat in drug_category.iter().filter(|c| !c.is_empty()) {
        let mut c = cat.clone();
        while seen.insert(c.clone()) {
            let p = parent_of(&c);
            edges.push((c.clone(), p.clone()));
            if p == root {
                break;
            }
            c = p;
        }
    }
    edges.sort();
    for (d, cat) in drug_category.iter().enumerate() {
        let parent = if cat.is_empty() { root.clone() } else { cat.clone() };
        edges.push((drug_id(d), parent));
    }

    // Indications.
    let mut category_target: BTreeMap<String, usize> = BTreeMap::new();
    let mut siblings: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (d, cat) in drug_category.iter().enumerate() {
        siblings.entry(cat.clone()).or_default().push(d);
    }
    let link_p = spec.sibling_overlap.sqrt();
    let mut indications: Vec<Vec<usize>> = vec![Vec::new(); spec.n_drugs];
    for (cat, members) in &siblings {
        let target = rng.gen_range(0..spec.n_phenotypes);
        category_target.insert(cat.clone(), target);
        let pool = &by_phenotype[target];
        let anchor = pool[rng.gen_range(0..pool.len())];
        let mut used: BTreeSet<usize> = BTreeSet::from([anchor]);
        for &d in members {
            let mut ind = Vec::with_capacity(spec.indications_per_drug);
            if spec.indications_per_drug > 0 && rng.gen_bool(link_p) {
                ind.push(anchor);
            }
            let mut candidates: Vec<usize> = pool.iter().copied().filter(|x| !used.contains(x)).collect();
            candidates.shuffle(&mut rng);
            if candidates.len() < spec.indications_per_drug - ind.len() {
                // Target phenotype exhausted: borrow unused diseases elsewhere.
                let mut extra: Vec<usize> = (0..spec.n_diseases)
                    .filter(|x| !used.contains(x) && disease_phenotype[*x] != target)
                    .collect();
                extra.shuffle(&mut rng);
                candidates.extend(extra);
            }
            let need = spec.indications_per_drug - ind.len();
            if candidates.len() < need {
                return Err(Error::Spec(format!(
                    "not enough diseases for disjoint indications in category {cat}"
                )));
            }
            for x in candidates.into_iter().take(need) {
                used.insert(x);
                ind.push(x);
            }
            ind.sort_unstable();
            indications[d] = ind;
        }
    }

    let first_year: Vec<i32> = (0..spec.n_drugs).map(|_| rng.gen_range(spec.years.0..=spec.years.1)).collect();

    let phenotypes = PhenotypeMap::new(
        (0..spec.n_diseases)
            .map(|i| {
                (
                    Code {
                        id: disease_id(i),
                        kind: CodeKind::Disease,
                        description: None,
                    },
                    disease_phenotype[i],
                )
            })
            .collect(),
        spec.n_phenotypes,
    )?;
    let ontology = DrugOntology::from_edges(&root, &edges)?;
    let vocab = Vocabulary::new(&phenotypes, &ontology)?;
    let kb_entries: BTreeMap<CodeId, BTreeSet<CodeId>> = indications
        .iter()
        .enumerate()
        .map(|(d, ind)| {
            let drug = vocab.drug_id(&drug_id(d))?;
            let set = ind.iter().map(|&x| vocab.id(&disease_id(x)).expect("disease in vocabulary")).collect();
            Ok((drug, set))
        })
        .collect::<Result<_>>()?;
    let kb = DrugDiseaseKB::new(&vocab, kb_entries)?;

    // Embeddings: phenotype centroids for diseases; drug tree nodes perturb
    // their parent's vector, so siblings start close together.
    let e = spec.embedding_dim;
    let scale = 1.0 / (e as f64).sqrt();
    let mut emb_rng = rng_from(key_str(spec.seed, "embeddings"));
    let mut noise = |s: f64| -> Vec<f64> { (0..e).map(|_| emb_rng.gen_range(-s..s)).collect() };
    let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let mut table = BaseEmbeddingTable::new(e, key_str(spec.seed, "fallback"));
    let centroids: Vec<Vec<f64>> = (0..spec.n_phenotypes).map(|_| noise(scale)).collect();
    for i in 0..spec.n_diseases {
        let v = add(&centroids[disease_phenotype[i]], &noise(0.5 * scale));
        table.insert(disease_id(i), v)?;
    }
    let mut node_vec: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    node_vec.insert(root.clone(), noise(scale));
    for (child, parent) in &edges {
        let v = add(&node_vec[parent], &noise(0.5 * scale));
        node_vec.insert(child.clone(), v);
    }
    for (id, v) in node_vec {
        table.insert(id, v)?;
    }

    let assets = Assets::new(ontology, phenotypes, vocab, kb, table)?;
    Ok(GeneratedAssets {
        assets,
        truth: WorldTruth {
            disease_phenotype,
            drug_category,
            category_target,
            indications,
            first_year,
        },
    })
}

/// Per record × drug: whether the record was eligible (indicated or
/// prescribed) and whether it was prescribed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<(String, String, bool, bool)>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub truth: GroundTruth,
}

fn sample_codes(spec: &GeneratorSpec, by_phenotype: &[Vec<usize>], rng: &mut impl Rng) -> Vec<usize> {
    let (lo, hi) = spec.codes_per_record;
    let v = rng.gen_range(lo..=hi);
    let dominant = rng.gen_range(0..spec.n_phenotypes);
    let n_co = rng.gen_range(spec.comorbid_phenotypes.0..=spec.comorbid_phenotypes.1);
    let mut others: Vec<usize> = (0..spec.n_phenotypes).filter(|&l| l != dominant).collect();
    others.shuffle(rng);
    others.truncate(n_co);
    let n_diseases: usize = by_phenotype.iter().map(Vec::len).sum();
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::with_capacity(v);
    let mut attempts = 0;
    while out.len() < v {
        attempts += 1;
        let r: f64 = rng.gen();
        let l = if r < 0.5 || others.is_empty() {
            Some(dominant)
        } else if r < 0.9 {
            Some(others[rng.gen_range(0..others.len())])
        } else {
            None
        };
        let x = match l {
            Some(l) if attempts < 50 * v => by_phenotype[l][rng.gen_range(0..by_phenotype[l].len())],
            _ => rng.gen_range(0..n_diseases),
        };
        if chosen.insert(x) {
            out.push(x);
        }
    }
    out
}

/// Draws records and prescriptions on top of generated assets.
pub fn generate_cohort(spec: &GeneratorSpec, world: &GeneratedAssets) -> Result<Cohort> {
    spec.validate()?;
    let truth = &world.truth;
    let vocab = &world.assets.vocab;
    let mut rng = rng_from(key_str(spec.seed, "cohort"));
    let mut by_phenotype: Vec<Vec<usize>> = vec![Vec::new(); spec.n_phenotypes];
    for (i, &l) in truth.disease_phenotype.iter().enumerate() {
        by_phenotype[l].push(i);
    }
    let mut indicated_for: Vec<Vec<usize>> = vec![Vec::new(); spec.n_diseases];
    for (d, ind) in truth.indications.iter().enumerate() {
        for &x in ind {
            indicated_for[x].push(d);
        }
    }
    let eligible_drugs = |codes: &[usize]| -> BTreeSet<usize> {
        codes.iter().flat_map(|&x| indicated_for[x].iter().copied()).collect()
    };

    // Diagnoses; records eligible for nothing are redrawn so every record
    // can end up with a prescription.
    let mut codes: Vec<Vec<usize>> = Vec::with_capacity(spec.records);
    let mut eligible: Vec<BTreeSet<usize>> = Vec::with_capacity(spec.records);
    for _ in 0..spec.records {
        let mut tries = 0;
        loop {
            let c = sample_codes(spec, &by_phenotype, &mut rng);
            let e = eligible_drugs(&c);
            tries += 1;
            if !e.is_empty() || tries >= 100 {
                codes.push(c);
                eligible.push(e);
                break;
            }
        }
    }

    // Noise prescriptions on ineligible records.
    let mut prescribed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); spec.records];
    let mut noise_users = vec![0usize; spec.n_drugs];
    for r in 0..spec.records {
        if !rng.gen_bool(spec.noise_rate) {
            continue;
        }
        let n = rng.gen_range(spec.prescriptions_per_record.0..=spec.prescriptions_per_record.1);
        let mut candidates: Vec<usize> = (0..spec.n_drugs).filter(|d| !eligible[r].contains(d)).collect();
        candidates.shuffle(&mut rng);
        for d in candidates.into_iter().take(n) {
            prescribed[r].insert(d);
            noise_users[d] += 1;
        }
    }

    // Per-drug calibration of eligible users.
    let pi = spec.false_negative_rate;
    for d in 0..spec.n_drugs {
        let mut elig: Vec<usize> = (0..spec.records).filter(|&r| eligible[r].contains(&d)).collect();
        let e = elig.len();
        let want = if pi >= 1.0 {
            0.0
        } else {
            (e as f64 - pi * (spec.records - noise_users[d]) as f64) / (1.0 - pi)
        };
        let floor = MIN_USERS.min(e);
        let users = (want.round().max(0.0) as usize).clamp(floor, e);
        if (want.round() as i64) < floor as i64 {
            warn!(
                "drug {}: eligibility {e}/{} leaves room for only {} users at false-negative rate {pi}; keeping {users}",
                drug_id(d),
                spec.records,
                want.round().max(0.0)
            );
        }
        elig.shuffle(&mut rng);
        for &r in &elig[..users] {
            prescribed[r].insert(d);
        }
    }

    // A record left without drugs takes one of its eligible drugs.
    for r in 0..spec.records {
        if prescribed[r].is_empty() {
            let options: Vec<usize> = eligible[r].iter().copied().collect();
            let d = if options.is_empty() {
                rng.gen_range(0..spec.n_drugs)
            } else {
                options[rng.gen_range(0..options.len())]
            };
            prescribed[r].insert(d);
        }
    }

    let mut records = Vec::with_capacity(spec.records);
    let mut rows = Vec::with_capacity(spec.records * spec.n_drugs);
    for r in 0..spec.records {
        let record_id = format!("P{r:06}");
        let drugs: Vec<usize> = prescribed[r].iter().copied().collect();
        let year = drugs.iter().map(|&d| truth.first_year[d]).max().unwrap_or(spec.years.0);
        records.push(PatientRecord {
            record_id: record_id.clone(),
            year,
            codes: codes[r]
                .iter()
                .map(|&x| vocab.id(&disease_id(x)).expect("disease in vocabulary"))
                .collect(),
            drugs: drugs.iter().map(|&d| vocab.drug_id(&drug_id(d))).collect::<Result<_>>()?,
        });
        for d in 0..spec.n_drugs {
            let p = prescribed[r].contains(&d);
            rows.push((record_id.clone(), drug_id(d), p || eligible[r].contains(&d), p));
        }
    }
    Ok(Cohort {
        records,
        truth: GroundTruth { rows },
    })
}

/// File names written by [`write_corpus`], besides the four asset files.
pub const RECORDS_FILE: &str = "records.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";

/// Writes assets, records and ground truth into `dir`.
pub fn write_corpus(dir: &Path, world: &GeneratedAssets, cohort: &Cohort) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    world.assets.write(&AssetPaths::in_dir(dir))?;
    let path = dir.join(RECORDS_FILE);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    write_records(&mut w, &cohort.records, &world.assets.vocab).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(&path, e);
    writeln!(w, "record_id\tdrug\teligible\tprescribed").map_err(io)?;
    for (r, d, e, p) in &cohort.truth.rows {
        writeln!(w, "{r}\t{d}\t{}\t{}", u8::from(*e), u8::from(*p)).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests;
