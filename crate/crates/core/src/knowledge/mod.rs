//! Static knowledge assets: code vocabulary, drug ontology, phenotype map,
//! drug–disease knowledge base and base code embeddings.
//!
//! Everything here is immutable once loaded and is shared by reference.

mod embedding;
mod kb;
mod ontology;
mod phenotype;

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use embedding::{fallback_vector, load_embeddings, BaseEmbeddingTable};
pub use kb::{load_kb, DrugDiseaseKB};
pub use ontology::{load_ontology, DrugOntology};
pub use phenotype::{load_phenotype_map, PhenotypeMap, CCS_PHENOTYPES};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Disease,
    Procedure,
    Drug,
    DrugCategory,
}

impl CodeKind {
    pub fn is_diagnosis(self) -> bool {
        matches!(self, CodeKind::Disease | CodeKind::Procedure)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Code {
    pub id: String,
    pub kind: CodeKind,
    pub description: Option<String>,
}

/// Dense index of a code inside a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeId(pub u32);

impl CodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// All codes known to the model: diagnoses (in phenotype-map order) followed
/// by ontology nodes (in ontology order).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    codes: Vec<Code>,
    index: HashMap<String, CodeId>,
}

impl Vocabulary {
    pub fn new(phenotypes: &PhenotypeMap, ontology: &DrugOntology) -> Result<Self> {
        let mut codes = Vec::with_capacity(phenotypes.codes().len() + ontology.len());
        let mut index = HashMap::with_capacity(codes.capacity());
        for c in phenotypes.codes().iter().chain(ontology.nodes()) {
            let id = CodeId(codes.len() as u32);
            if index.insert(c.id.clone(), id).is_some() {
                return Err(Error::InvalidAsset(format!(
                    "code `{}` appears in both the phenotype map and the ontology",
                    c.id
                )));
            }
            codes.push(c.clone());
        }
        Ok(Vocabulary { codes, index })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn id(&self, code: &str) -> Option<CodeId> {
        self.index.get(code).copied()
    }

    pub fn code(&self, id: CodeId) -> &Code {
        &self.codes[id.index()]
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn drug_id(&self, code: &str) -> Result<CodeId> {
        match self.id(code) {
            Some(id) if self.code(id).kind == CodeKind::Drug => Ok(id),
            _ => Err(Error::UnknownDrug(code.to_string())),
        }
    }
}

/// File locations of the four knowledge assets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetPaths {
    pub ontology: PathBuf,
    pub phenotypes: PathBuf,
    pub kb: PathBuf,
    pub embeddings: PathBuf,
}

impl AssetPaths {
    pub const ONTOLOGY: &'static str = "ontology.tsv";
    pub const PHENOTYPES: &'static str = "phenotypes.tsv";
    pub const KB: &'static str = "kb.tsv";
    pub const EMBEDDINGS: &'static str = "embeddings.tsv";

    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        AssetPaths {
            ontology: dir.join(Self::ONTOLOGY),
            phenotypes: dir.join(Self::PHENOTYPES),
            kb: dir.join(Self::KB),
            embeddings: dir.join(Self::EMBEDDINGS),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.ontology, &self.phenotypes, &self.kb, &self.embeddings]
    }
}

/// Bundle of validated knowledge assets plus lookups derived from them.
#[derive(Debug, Clone)]
pub struct Assets {
    pub vocab: Vocabulary,
    pub ontology: DrugOntology,
    pub phenotypes: PhenotypeMap,
    pub kb: DrugDiseaseKB,
    pub embeddings: BaseEmbeddingTable,
    code_phenotype: Vec<Option<u32>>,
    closures: Vec<Vec<CodeId>>,
}

impl Assets {
    pub fn new(
        ontology: DrugOntology,
        phenotypes: PhenotypeMap,
        vocab: Vocabulary,
        kb: DrugDiseaseKB,
        embeddings: BaseEmbeddingTable,
    ) -> Result<Self> {
        let n_diag = phenotypes.codes().len();
        if vocab.len() != n_diag + ontology.len() {
            return Err(Error::InvalidAsset("vocabulary does not match the assets".into()));
        }
        let code_phenotype = (0..vocab.len())
            .map(|i| (i < n_diag).then(|| phenotypes.phenotype_at(i) as u32))
            .collect();
        let closures = (0..ontology.len())
            .map(|node| {
                ontology
                    .closure_indices(node)
                    .into_iter()
                    .map(|j| CodeId((n_diag + j) as u32))
                    .collect()
            })
            .collect();
        Ok(Assets {
            vocab,
            ontology,
            phenotypes,
            kb,
            embeddings,
            code_phenotype,
            closures,
        })
    }

    pub fn load(paths: &AssetPaths, fallback_seed: u64) -> Result<Self> {
        for p in paths.all() {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing asset file"),
                ));
            }
        }
        let ontology = load_ontology(&paths.ontology)?;
        let phenotypes = load_phenotype_map(&paths.phenotypes)?;
        let vocab = Vocabulary::new(&phenotypes, &ontology)?;
        let kb = load_kb(&paths.kb, &vocab)?;
        let embeddings = load_embeddings(&paths.embeddings, fallback_seed)?;
        Self::new(ontology, phenotypes, vocab, kb, embeddings)
    }

    pub fn write(&self, paths: &AssetPaths) -> Result<()> {
        fn out(p: &Path) -> Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
        }
        self.ontology
            .write_to(out(&paths.ontology)?)
            .map_err(|e| Error::io(&paths.ontology, e))?;
        self.phenotypes
            .write_to(out(&paths.phenotypes)?)
            .map_err(|e| Error::io(&paths.phenotypes, e))?;
        self.kb
            .write_to(&self.vocab, out(&paths.kb)?)
            .map_err(|e| Error::io(&paths.kb, e))?;
        self.embeddings
            .write_to(out(&paths.embeddings)?)
            .map_err(|e| Error::io(&paths.embeddings, e))?;
        Ok(())
    }

    pub fn n_phenotypes(&self) -> usize {
        self.phenotypes.n_phenotypes()
    }

    /// Phenotype of a diagnosis code; `None` for ontology nodes.
    pub fn phenotype_of(&self, code: CodeId) -> Option<usize> {
        self.code_phenotype[code.index()].map(|l| l as usize)
    }

    fn ontology_node(&self, code: CodeId) -> Option<usize> {
        code.index().checked_sub(self.phenotypes.codes().len())
    }

    /// `[drug, parent, ..., root]` in vocabulary ids.
    pub fn closure(&self, drug: CodeId) -> Result<&[CodeId]> {
        self.ontology_node(drug)
            .and_then(|n| self.closures.get(n))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownDrug(self.vocab.code(drug).id.clone()))
    }

    pub fn drug_ids(&self) -> Vec<CodeId> {
        self.ontology
            .drugs()
            .map(|c| self.vocab.id(&c.id).expect("ontology nodes are in the vocabulary"))
            .collect()
    }

    pub fn code_id(&self, code: &str) -> Result<CodeId> {
        self.vocab.id(code).ok_or_else(|| Error::UnknownCode(code.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> Assets {
        let ontology = DrugOntology::parse("#root=R\nA\tR\nd1\tA\nd2\tA\n", Path::new("o")).unwrap();
        let phenotypes = PhenotypeMap::parse("#phenotypes=3\nx\t0\ny\t1\nz\t1\n", Path::new("p")).unwrap();
        let vocab = Vocabulary::new(&phenotypes, &ontology).unwrap();
        let kb = DrugDiseaseKB::parse("d1\tx\nd2\t\n", Path::new("k"), &vocab).unwrap();
        Assets::new(ontology, phenotypes, vocab, kb, BaseEmbeddingTable::new(4, 1)).unwrap()
    }

    #[test]
    fn vocabulary_layout_and_closure() {
        let a = tiny();
        assert_eq!(a.vocab.len(), 7);
        let d1 = a.vocab.drug_id("d1").unwrap();
        let ids: Vec<&str> = a.closure(d1).unwrap().iter().map(|c| a.vocab.code(*c).id.as_str()).collect();
        assert_eq!(ids, ["d1", "A", "R"]);
        assert_eq!(a.phenotype_of(a.code_id("z").unwrap()), Some(1));
        assert_eq!(a.phenotype_of(d1), None);
        assert!(a.closure(a.code_id("x").unwrap()).is_err());
        assert!(a.vocab.drug_id("A").is_err());
    }

    #[test]
    fn kb_distinguishes_absent_from_empty() {
        let a = tiny();
        let d1 = a.vocab.drug_id("d1").unwrap();
        let d2 = a.vocab.drug_id("d2").unwrap();
        let x = a.code_id("x").unwrap();
        assert!(a.kb.contains_drug(d2));
        assert!(a.kb.indications(d2).unwrap().is_empty());
        assert!(a.kb.is_indicated(d1, &[x]));
        assert!(!a.kb.is_indicated(d2, &[x]));
    }

    #[test]
    fn kb_rejects_unknown_and_wrong_kind() {
        let a = tiny();
        assert!(matches!(
            DrugDiseaseKB::parse("d9\tx\n", Path::new("k"), &a.vocab),
            Err(Error::UnknownCode(_))
        ));
        assert!(DrugDiseaseKB::parse("x\ty\n", Path::new("k"), &a.vocab).is_err());
        assert!(DrugDiseaseKB::parse("d1\tA\n", Path::new("k"), &a.vocab).is_err());
    }

    #[test]
    fn loading_twice_gives_equal_assets() {
        let dir = tempfile::tempdir().unwrap();
        let paths = AssetPaths::in_dir(dir.path());
        let a = tiny();
        a.write(&paths).unwrap();
        let b = Assets::load(&paths, 1).unwrap();
        let c = Assets::load(&paths, 1).unwrap();
        assert_eq!(b.vocab, c.vocab);
        assert_eq!(b.kb, c.kb);
        assert_eq!(b.ontology, a.ontology);
        assert_eq!(b.kb, a.kb);
    }
}
