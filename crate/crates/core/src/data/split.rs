use std::collections::{BTreeMap, BTreeSet};

use super::PatientRecord;
use crate::error::{Error, Result};
use crate::knowledge::{CodeId, Vocabulary};

/// Drugs partitioned by introduction time, and records assigned to the
/// partition of the newest drug they contain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train_drugs: BTreeSet<CodeId>,
    pub valid_drugs: BTreeSet<CodeId>,
    pub test_drugs: BTreeSet<CodeId>,
    pub train: Vec<PatientRecord>,
    pub valid: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Valid,
    Test,
}

/// Earliest year each drug appears in `records`.
pub fn first_years(records: &[PatientRecord]) -> BTreeMap<CodeId, i32> {
    let mut out: BTreeMap<CodeId, i32> = BTreeMap::new();
    for r in records {
        for d in &r.drugs {
            out.entry(*d).and_modify(|y| *y = (*y).min(r.year)).or_insert(r.year);
        }
    }
    out
}

/// Drugs first prescribed up to `train_until` are existing drugs, up to
/// `valid_until` validation drugs, later ones new (test) drugs. A record goes
/// to test if it holds any test drug, else validation if it holds any
/// validation drug, else train.
pub fn split_by_introduction(
    records: &[PatientRecord],
    first_year_of: &BTreeMap<CodeId, i32>,
    (train_until, valid_until): (i32, i32),
    vocab: &Vocabulary,
) -> Result<DatasetSplit> {
    if train_until > valid_until {
        return Err(Error::Config(format!(
            "split cutoffs out of order: train_until {train_until} > valid_until {valid_until}"
        )));
    }
    let partition_of = |year: i32| {
        if year <= train_until {
            Partition::Train
        } else if year <= valid_until {
            Partition::Valid
        } else {
            Partition::Test
        }
    };
    let mut split = DatasetSplit::default();
    for (&drug, &year) in first_year_of {
        match partition_of(year) {
            Partition::Train => split.train_drugs.insert(drug),
            Partition::Valid => split.valid_drugs.insert(drug),
            Partition::Test => split.test_drugs.insert(drug),
        };
    }
    for r in records {
        let mut part = Partition::Train;
        for d in &r.drugs {
            let year = first_year_of
                .get(d)
                .ok_or_else(|| Error::MissingYear(vocab.code(*d).id.clone()))?;
            part = part.max(partition_of(*year));
        }
        match part {
            Partition::Train => split.train.push(r.clone()),
            Partition::Valid => split.valid.push(r.clone()),
            Partition::Test => split.test.push(r.clone()),
        }
    }
    Ok(split)
}
