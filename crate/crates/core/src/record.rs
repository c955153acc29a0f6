//! Rows of the results CSV: one per (config, method, quarter).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::config::{RunParams, KEYS};
use crate::error::{Result, SimError};
use crate::format::{g17, g17_opt};
use crate::metrics::MetricRow;
use crate::policies::Method;
use crate::simulator::QuarterOutcome;

/// Result columns after the config columns.
pub const RESULT_COLUMNS: [&str; 11] = [
    "method",
    "quarter",
    "n_granted",
    "n_explored",
    "budget",
    "profit_quarter",
    "profit_cum_norm",
    "delta_sr",
    "delta_fpr",
    "delta_fnr",
    "delta_acc",
];

/// The full results header, in order.
pub fn header() -> Vec<&'static str> {
    std::iter::once("config_hash")
        .chain(KEYS)
        .chain(RESULT_COLUMNS)
        .collect()
}

/// The four signed fairness gaps, in column order.
pub const DELTA_METRICS: [&str; 4] = ["delta_sr", "delta_fpr", "delta_fnr", "delta_acc"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub params: RunParams,
    pub method: Method,
    pub quarter: usize,
    pub budget: usize,
    pub metrics: MetricRow,
}

impl RunRecord {
    /// Records for one method's run, base quarter included.
    pub fn from_outcomes(params: &RunParams, method: Method, outcomes: &[QuarterOutcome]) -> Vec<RunRecord> {
        let hash = params.config_hash();
        outcomes
            .iter()
            .map(|o| RunRecord {
                config_hash: hash.clone(),
                params: params.clone(),
                method,
                quarter: o.quarter,
                budget: o.budget,
                metrics: o.metrics,
            })
            .collect()
    }

    /// Records for every method, methods in canonical order.
    pub fn from_runs(params: &RunParams, runs: &BTreeMap<Method, Vec<QuarterOutcome>>) -> Vec<RunRecord> {
        runs.iter()
            .flat_map(|(&m, out)| Self::from_outcomes(params, m, out))
            .collect()
    }

    /// A metric by column name; fairness gaps keep their sign.
    pub fn metric(&self, name: &str) -> Option<f64> {
        let m = &self.metrics;
        match name {
            "profit_quarter" => Some(m.profit_quarter),
            "profit_cum_norm" => m.profit_cum_norm,
            "delta_sr" => m.delta_sr,
            "delta_fpr" => m.delta_fpr,
            "delta_fnr" => m.delta_fnr,
            "delta_acc" => m.delta_acc,
            _ => None,
        }
    }

    pub fn fields(&self) -> Vec<String> {
        let m = &self.metrics;
        let mut out = Vec::with_capacity(30);
        out.push(self.config_hash.clone());
        out.extend(self.params.fields());
        out.extend([
            self.method.name().to_string(),
            self.quarter.to_string(),
            m.n_granted.to_string(),
            m.n_explored.to_string(),
            self.budget.to_string(),
            g17(m.profit_quarter),
            g17_opt(m.profit_cum_norm),
            g17_opt(m.delta_sr),
            g17_opt(m.delta_fpr),
            g17_opt(m.delta_fnr),
            g17_opt(m.delta_acc),
        ]);
        out
    }

    pub fn from_fields(fields: &[&str]) -> Result<RunRecord> {
        let width = header().len();
        if fields.len() != width {
            return Err(SimError::Parse(format!(
                "expected {width} fields, got {}",
                fields.len()
            )));
        }
        let mut params = RunParams::default();
        for (k, v) in KEYS.iter().zip(&fields[1..]) {
            params.set(k, v)?;
        }
        let rest = &fields[1 + KEYS.len()..];
        let int = |i: usize| -> Result<usize> {
            rest[i]
                .parse()
                .map_err(|_| SimError::Parse(format!("{}: bad integer `{}`", RESULT_COLUMNS[i], rest[i])))
        };
        let real = |i: usize| -> Result<Option<f64>> {
            if rest[i].is_empty() {
                return Ok(None);
            }
            rest[i]
                .parse()
                .map(Some)
                .map_err(|_| SimError::Parse(format!("{}: bad number `{}`", RESULT_COLUMNS[i], rest[i])))
        };
        let metrics = MetricRow {
            n_granted: int(2)?,
            n_explored: int(3)?,
            profit_quarter: real(5)?.ok_or_else(|| SimError::Parse("profit_quarter is empty".into()))?,
            profit_cum_norm: real(6)?,
            delta_sr: real(7)?,
            delta_fpr: real(8)?,
            delta_fnr: real(9)?,
            delta_acc: real(10)?,
        };
        Ok(RunRecord {
            config_hash: fields[0].to_string(),
            params,
            method: rest[0].parse()?,
            quarter: int(1)?,
            budget: int(4)?,
            metrics,
        })
    }

    /// Canonical order: config values, then method, then quarter.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        KEYS.iter()
            .map(|k| {
                let a = self.params.value(k).unwrap_or(f64::NAN);
                let b = other.params.value(k).unwrap_or(f64::NAN);
                a.total_cmp(&b)
            })
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| self.config_hash.cmp(&other.config_hash))
            .then_with(|| self.method.cmp(&other.method))
            .then_with(|| self.quarter.cmp(&other.quarter))
    }
}

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

pub fn write_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(header())?;
    Ok(())
}

pub fn write_record<W: Write>(w: &mut csv::Writer<W>, r: &RunRecord) -> Result<()> {
    w.write_record(r.fields())?;
    Ok(())
}

/// Writes a header and the records.
pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv_writer(out);
    write_header(&mut w)?;
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows leniently: a row that fails to parse, such as a line cut off
/// by an interrupted write, is returned as the error it produced.
pub fn read_records_lenient<R: Read>(input: R) -> Result<Vec<Result<RunRecord>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rdr.records();
    let expected = header();
    match rows.next() {
        None => return Ok(Vec::new()),
        Some(h) => {
            let h = h?;
            if h.iter().ne(expected.iter().copied()) {
                return Err(SimError::Parse(
                    "results header does not match the expected columns".into(),
                ));
            }
        }
    }
    Ok(rows
        .map(|row| {
            let row = row?;
            let fields: Vec<&str> = row.iter().collect();
            RunRecord::from_fields(&fields)
        })
        .collect())
}

/// Reads every row, failing on the first malformed one.
pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    read_records_lenient(input)?.into_iter().collect()
}
