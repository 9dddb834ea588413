use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use super::{CodeId, CodeKind, Vocabulary};
use crate::error::{Error, Result};

/// Drug → indicated diseases (MEDI-style). A drug absent from the map is
/// different from a drug listed with no indications: only the former falls
/// back to uniform negative sampling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrugDiseaseKB {
    indications: BTreeMap<CodeId, BTreeSet<CodeId>>,
}

impl DrugDiseaseKB {
    pub fn new(vocab: &Vocabulary, entries: BTreeMap<CodeId, BTreeSet<CodeId>>) -> Result<Self> {
        for (drug, diseases) in &entries {
            let code = vocab.code(*drug);
            if code.kind != CodeKind::Drug {
                return Err(Error::InvalidAsset(format!("KB key `{}` is not a drug", code.id)));
            }
            for d in diseases {
                let c = vocab.code(*d);
                if !c.kind.is_diagnosis() {
                    return Err(Error::InvalidAsset(format!(
                        "KB indication `{}` of `{}` is not a disease/procedure",
                        c.id, code.id
                    )));
                }
            }
        }
        Ok(DrugDiseaseKB { indications: entries })
    }

    /// Format: `drug<TAB>disease1,disease2,...`; the list may be empty.
    pub fn parse(text: &str, path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let mut entries: BTreeMap<CodeId, BTreeSet<CodeId>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.splitn(2, '\t');
            let drug = cols.next().unwrap_or("").trim();
            let list = cols.next().unwrap_or("").trim();
            if drug.is_empty() {
                return Err(Error::parse(path, i + 1, "empty drug id"));
            }
            let drug_id = vocab.id(drug).ok_or_else(|| Error::UnknownCode(drug.to_string()))?;
            let set = entries.entry(drug_id).or_default();
            for d in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                set.insert(vocab.id(d).ok_or_else(|| Error::UnknownCode(d.to_string()))?);
            }
        }
        Self::new(vocab, entries)
    }

    pub fn write_to(&self, vocab: &Vocabulary, mut w: impl Write) -> std::io::Result<()> {
        for (drug, set) in &self.indications {
            let list: Vec<&str> = set.iter().map(|d| vocab.code(*d).id.as_str()).collect();
            writeln!(w, "{}\t{}", vocab.code(*drug).id, list.join(","))?;
        }
        Ok(())
    }

    pub fn indications(&self, drug: CodeId) -> Option<&BTreeSet<CodeId>> {
        self.indications.get(&drug)
    }

    pub fn contains_drug(&self, drug: CodeId) -> bool {
        self.indications.contains_key(&drug)
    }

    /// Whether any of `codes` is a listed indication of `drug`.
    pub fn is_indicated(&self, drug: CodeId, codes: &[CodeId]) -> bool {
        self.indications
            .get(&drug)
            .is_some_and(|set| codes.iter().any(|c| set.contains(c)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (CodeId, &BTreeSet<CodeId>)> {
        self.indications.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.indications.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indications.is_empty()
    }
}

pub fn load_kb(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<DrugDiseaseKB> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DrugDiseaseKB::parse(&text, path, vocab)
}
