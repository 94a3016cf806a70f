//! Flat CSV schema of a sweep: one row per `(e, kdp)` cell.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::harness::PhaseCell;

pub const RESULT_COLUMNS: [&str; 17] = [
    "loss_mode",
    "mu",
    "L",
    "d",
    "rf",
    "seed",
    "n_reps",
    "e",
    "kdp",
    "t_scratch_mean",
    "t_unlearn_mean",
    "ratio",
    "censored_scratch",
    "censored_unlearn",
    "t_scratch_se",
    "t_unlearn_se",
    "invalid",
];

/// Sweep-wide values repeated on every row.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsMeta {
    pub loss_mode: String,
    pub mu: f64,
    pub lipschitz: f64,
    pub dim: usize,
    pub rf: f64,
    pub seed: u64,
    pub n_reps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub meta: ResultsMeta,
    pub cell: PhaseCell,
}

// 17 significant digits: parses back to the same f64
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_results<W: Write>(out: W, meta: &ResultsMeta, cells: &[PhaseCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for c in cells {
        w.write_record([
            meta.loss_mode.clone(),
            num(meta.mu),
            num(meta.lipschitz),
            meta.dim.to_string(),
            num(meta.rf),
            meta.seed.to_string(),
            meta.n_reps.to_string(),
            num(c.e),
            num(c.kdp),
            num(c.t_scratch_mean),
            num(c.t_unlearn_mean),
            num(c.ratio),
            c.censored_scratch.to_string(),
            c.censored_unlearn.to_string(),
            num(c.t_scratch_se),
            num(c.t_unlearn_se),
            u8::from(c.invalid).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a results file. Missing columns and malformed values are reported by
/// name and line.
pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; RESULT_COLUMNS.len()];
    for (slot, name) in idx.iter_mut().zip(RESULT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Results(format!("missing column `{name}`")))?;
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let f = |k: usize| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .map_err(|_| Error::Results(format!("line {line}: bad number {:?} in `{}`", field(k), RESULT_COLUMNS[k])))
        };
        let u = |k: usize| -> Result<u64> {
            field(k)
                .parse::<u64>()
                .map_err(|_| Error::Results(format!("line {line}: bad integer {:?} in `{}`", field(k), RESULT_COLUMNS[k])))
        };
        rows.push(ResultRow {
            meta: ResultsMeta {
                loss_mode: field(0).to_string(),
                mu: f(1)?,
                lipschitz: f(2)?,
                dim: u(3)? as usize,
                rf: f(4)?,
                seed: u(5)?,
                n_reps: u(6)? as usize,
            },
            cell: PhaseCell {
                e: f(7)?,
                kdp: f(8)?,
                t_scratch_mean: f(9)?,
                t_unlearn_mean: f(10)?,
                ratio: f(11)?,
                censored_scratch: u(12)? as usize,
                censored_unlearn: u(13)? as usize,
                t_scratch_se: f(14)?,
                t_unlearn_se: f(15)?,
                invalid: u(16)? != 0,
            },
        });
    }
    Ok(rows)
}
