//! Line-delimited JSON records for runs, seed summaries and sweep points.
//!
//! Wall-clock time is kept on [`RunMetrics`] but never serialized into
//! these records, so a metrics file is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::model::EpochLosses;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_ce_prime: f64,
    pub l_rec: f64,
    pub l_cl: f64,
    pub total: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

impl EpochRecord {
    pub fn new(epoch: usize, l: EpochLosses, val_acc: f64, test_acc: f64) -> Self {
        Self {
            epoch,
            l_ce: l.l_ce,
            l_ce_prime: l.l_ce_prime,
            l_rec: l.l_rec,
            l_cl: l.l_cl,
            total: l.total,
            val_acc,
            test_acc,
        }
    }
}

/// Outcome of one training run. `test_acc` is the test accuracy at
/// `best_epoch`, the epoch with the highest validation accuracy (earliest
/// on ties); 0 means the untrained model.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub tag: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub dataset: String,
    pub method: String,
    pub tag: String,
    pub seeds: Vec<u64>,
    pub test_accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub dataset: String,
    pub method: String,
    pub axis: String,
    pub value: f64,
    pub seeds: Vec<u64>,
    pub test_accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Run(RunRecord),
    Summary(SummaryRecord),
    Sweep(SweepRecord),
}

fn non_finite(r: &Record) -> bool {
    let bad = |v: &f64| !v.is_finite();
    match r {
        Record::Run(x) => {
            bad(&x.val_acc)
                || bad(&x.test_acc)
                || x.epochs.iter().any(|e| {
                    [e.l_ce, e.l_ce_prime, e.l_rec, e.l_cl, e.total, e.val_acc, e.test_acc]
                        .iter()
                        .any(bad)
                })
        }
        Record::Summary(x) => bad(&x.mean) || bad(&x.std) || x.test_accs.iter().any(bad),
        Record::Sweep(x) => bad(&x.mean) || bad(&x.std) || bad(&x.value) || x.test_accs.iter().any(bad),
    }
}

/// One JSON object per line.
pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        if non_finite(r) {
            return Err(Error::Numerical(format!(
                "record for {} holds a non-finite value",
                path.display()
            )));
        }
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Numerical(e.to_string()))?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::data(path, i + 1, e.to_string())))
        .collect()
}
