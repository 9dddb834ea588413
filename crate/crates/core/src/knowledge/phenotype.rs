use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{Code, CodeKind};
use crate::error::{Error, Result};

/// CCS-style grouping of disease and procedure codes into phenotypes.
///
/// File format: optional header `#phenotypes=<L>`, then one
/// `code<TAB>phenotype[<TAB>kind[<TAB>description]]` line per code, where
/// `kind` is `disease` (default) or `procedure`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeMap {
    codes: Vec<Code>,
    phenotype: Vec<usize>,
    index: HashMap<String, usize>,
    n_phenotypes: usize,
}

pub const CCS_PHENOTYPES: usize = 511;

impl PhenotypeMap {
    pub fn new(entries: Vec<(Code, usize)>, n_phenotypes: usize) -> Result<Self> {
        let mut codes = Vec::with_capacity(entries.len());
        let mut phenotype = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (code, l) in entries {
            if code.id.is_empty() {
                return Err(Error::InvalidAsset("empty code id in phenotype map".into()));
            }
            if !matches!(code.kind, CodeKind::Disease | CodeKind::Procedure) {
                return Err(Error::InvalidAsset(format!("`{}` is not a disease/procedure", code.id)));
            }
            if l >= n_phenotypes {
                return Err(Error::InvalidAsset(format!(
                    "phenotype {l} of `{}` outside [0, {n_phenotypes})",
                    code.id
                )));
            }
            if index.insert(code.id.clone(), codes.len()).is_some() {
                return Err(Error::InvalidAsset(format!("duplicate code `{}`", code.id)));
            }
            codes.push(code);
            phenotype.push(l);
        }
        Ok(PhenotypeMap {
            codes,
            phenotype,
            index,
            n_phenotypes,
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(n) = rest.trim().strip_prefix("phenotypes=") {
                    let n = n
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(path, i + 1, "bad phenotype count"))?;
                    declared = Some(n);
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols.len() > 4 {
                return Err(Error::parse(path, i + 1, "expected `code<TAB>phenotype`"));
            }
            let l: usize = cols[1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad phenotype index `{}`", cols[1])))?;
            let kind = match cols.get(2).map(|s| s.trim()) {
                None | Some("") | Some("disease") => CodeKind::Disease,
                Some("procedure") => CodeKind::Procedure,
                Some(other) => return Err(Error::parse(path, i + 1, format!("bad kind `{other}`"))),
            };
            let description = cols.get(3).map(|s| s.to_string()).filter(|s| !s.is_empty());
            let id = cols[0].trim();
            if id.is_empty() {
                return Err(Error::parse(path, i + 1, "empty code id"));
            }
            entries.push((
                Code {
                    id: id.to_string(),
                    kind,
                    description,
                },
                l,
            ));
        }
        let n = declared.unwrap_or_else(|| entries.iter().map(|(_, l)| l + 1).max().unwrap_or(0));
        Self::new(entries, n).map_err(|e| match e {
            Error::InvalidAsset(msg) => Error::parse(path, 0, msg),
            e => e,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "#phenotypes={}", self.n_phenotypes)?;
        for (c, l) in self.codes.iter().zip(&self.phenotype) {
            let kind = if c.kind == CodeKind::Procedure { "procedure" } else { "disease" };
            match &c.description {
                Some(d) => writeln!(w, "{}\t{l}\t{kind}\t{d}", c.id)?,
                None => writeln!(w, "{}\t{l}\t{kind}", c.id)?,
            }
        }
        Ok(())
    }

    /// Total phenotype count `L`.
    pub fn n_phenotypes(&self) -> usize {
        self.n_phenotypes
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn phenotype_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.phenotype[i])
    }

    pub fn phenotype_at(&self, i: usize) -> usize {
        self.phenotype[i]
    }
}

pub fn load_phenotype_map(path: impl AsRef<Path>) -> Result<PhenotypeMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PhenotypeMap::parse(&text, path)
}
