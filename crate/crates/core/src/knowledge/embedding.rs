use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Pre-computed base code embeddings with a deterministic fallback.
///
/// File format: header `#dim=<e>`, then `code<TAB>v1,...,ve` per line.
/// Codes missing from the file get components drawn uniformly from
/// `[-1/sqrt(e), 1/sqrt(e)]`, keyed only by `(fallback_seed, code id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    fallback_seed: u64,
}

impl BaseEmbeddingTable {
    pub fn new(dim: usize, fallback_seed: u64) -> Self {
        BaseEmbeddingTable {
            dim,
            vectors: HashMap::new(),
            fallback_seed,
        }
    }

    pub fn insert(&mut self, code: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        self.vectors.insert(code.into(), v);
        Ok(())
    }

    pub fn parse(text: &str, path: &Path, fallback_seed: u64) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(d) = rest.trim().strip_prefix("dim=") {
                    let dim = d.trim().parse().map_err(|_| Error::parse(path, i + 1, "bad dim"))?;
                    table = Some(Self::new(dim, fallback_seed));
                }
                continue;
            }
            let t = table
                .as_mut()
                .ok_or_else(|| Error::parse(path, i + 1, "missing `#dim=<e>` header"))?;
            let (code, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `code<TAB>values`"))?;
            let v = values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            t.insert(code.trim(), v)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        table.ok_or_else(|| Error::parse(path, 1, "missing `#dim=<e>` header"))
    }

    /// Rows are written in sorted code order so output is byte-stable.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "#dim={}", self.dim)?;
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        for k in keys {
            let vals: Vec<String> = self.vectors[k].iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{k}\t{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fallback_seed(&self) -> u64 {
        self.fallback_seed
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.vectors.contains_key(code)
    }

    pub fn lookup(&self, code: &str) -> Vec<f64> {
        match self.vectors.get(code) {
            Some(v) => v.clone(),
            None => fallback_vector(self.fallback_seed, code, self.dim),
        }
    }
}

pub fn fallback_vector(seed: u64, code: &str, dim: usize) -> Vec<f64> {
    let mut r = rng::rng_from(rng::key_str(seed, code));
    let bound = 1.0 / (dim.max(1) as f64).sqrt();
    (0..dim).map(|_| r.gen_range(-bound..=bound)).collect()
}

pub fn load_embeddings(path: impl AsRef<Path>, fallback_seed: u64) -> Result<BaseEmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BaseEmbeddingTable::parse(&text, path, fallback_seed)
}
