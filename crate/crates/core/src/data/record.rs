use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::knowledge::{CodeId, CodeKind, Vocabulary};

/// One admission: ordered diagnosis/procedure codes and the prescribed drugs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub record_id: String,
    pub year: i32,
    pub codes: Vec<CodeId>,
    /// Distinct, in file order.
    pub drugs: Vec<CodeId>,
}

impl PatientRecord {
    pub fn has_drug(&self, drug: CodeId) -> bool {
        self.drugs.contains(&drug)
    }

    /// Parse one `record_id|year|c1,c2,...|m1,m2,...` line.
    pub fn parse_line(line: &str, vocab: &Vocabulary, path: &Path, lineno: usize) -> Result<Self> {
        let cols: Vec<&str> = line.split('|').collect();
        if cols.len() != 4 {
            return Err(Error::parse(path, lineno, "expected `id|year|codes|drugs`"));
        }
        let record_id = cols[0].trim();
        if record_id.is_empty() {
            return Err(Error::parse(path, lineno, "empty record id"));
        }
        let year = cols[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad year `{}`", cols[1])))?;
        let resolve = |list: &str, want_drug: bool| -> Result<Vec<CodeId>> {
            let mut out = Vec::new();
            for c in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let id = vocab.id(c).ok_or_else(|| Error::UnknownCode(c.to_string()))?;
                let kind = vocab.code(id).kind;
                let ok = if want_drug { kind == CodeKind::Drug } else { kind.is_diagnosis() };
                if !ok {
                    return Err(Error::parse(path, lineno, format!("`{c}` has kind {kind:?} in this column")));
                }
                out.push(id);
            }
            Ok(out)
        };
        let codes = resolve(cols[2], false)?;
        let drugs = resolve(cols[3], true)?;
        if codes.is_empty() {
            return Err(Error::parse(path, lineno, "record has no codes"));
        }
        if drugs.is_empty() {
            return Err(Error::parse(path, lineno, "record has no drugs"));
        }
        for (i, d) in drugs.iter().enumerate() {
            if drugs[..i].contains(d) {
                return Err(Error::parse(path, lineno, "duplicate drug in record"));
            }
        }
        Ok(PatientRecord {
            record_id: record_id.to_string(),
            year,
            codes,
            drugs,
        })
    }

    pub fn to_line(&self, vocab: &Vocabulary) -> String {
        let join = |ids: &[CodeId]| {
            ids.iter()
                .map(|c| vocab.code(*c).id.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{}|{}|{}|{}", self.record_id, self.year, join(&self.codes), join(&self.drugs))
    }
}

pub fn load_records(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<PatientRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(PatientRecord::parse_line(line, vocab, path, i + 1)?);
    }
    Ok(out)
}

pub fn write_records(mut w: impl Write, records: &[PatientRecord], vocab: &Vocabulary) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_line(vocab))?;
    }
    Ok(())
}

pub fn save_records(path: impl AsRef<Path>, records: &[PatientRecord], vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_records(&mut w, records, vocab).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
