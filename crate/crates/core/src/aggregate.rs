//! Summaries of a results file: final-quarter method rankings per bias
//! condition, per-quarter traces at maximum bias, and pooled distributions.
//!
//! Rankings and traces only use rows with the fixed hyperparameters
//! [`RANK_DELTA`] and [`RANK_PROPORTION_CERTAIN`] where at most one bias knob
//! is nonzero.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::error::{Result, SimError};
use crate::format::{g17, g17_opt};
use crate::policies::Method;
use crate::record::RunRecord;
use crate::synthgen::BiasKnobs;

pub const RANK_DELTA: f64 = 0.05;
pub const RANK_PROPORTION_CERTAIN: f64 = 0.7;
pub const BASELINE: &str = "baseline";

/// Ranked metrics: the four gaps (by magnitude) and normalized profit.
pub const RANK_METRICS: [&str; 5] = ["delta_sr", "delta_fpr", "delta_fnr", "delta_acc", "profit_cum_norm"];
/// Traced metrics: the four signed gaps and per-quarter profit.
pub const TRACE_METRICS: [&str; 5] = ["delta_sr", "delta_fpr", "delta_fnr", "delta_acc", "profit_quarter"];
/// Distribution metrics, named after the value they pool.
pub const DIST_METRICS: [&str; 5] = [
    "abs_delta_sr",
    "abs_delta_fpr",
    "abs_delta_fnr",
    "abs_delta_acc",
    "profit_cum_norm",
];

fn is_profit(metric: &str) -> bool {
    metric.starts_with("profit")
}

/// The value a record contributes: gaps by magnitude, profit as is.
fn magnitude(r: &RunRecord, metric: &str) -> Option<f64> {
    let v = r.metric(metric.strip_prefix("abs_").unwrap_or(metric))?;
    Some(if is_profit(metric) { v } else { v.abs() })
}

/// The single bias condition of a record: `None` if more than one knob is
/// nonzero, otherwise the nonzero knob and its level.
fn condition(r: &RunRecord) -> Option<Option<(&'static str, f64)>> {
    let active: Vec<(&'static str, f64)> = BiasKnobs::NAMES
        .iter()
        .map(|&k| (k, r.params.knobs.get(k).expect("known knob")))
        .filter(|(_, v)| *v != 0.0)
        .collect();
    match active.as_slice() {
        [] => Some(None),
        [one] => Some(Some(*one)),
        _ => None,
    }
}

fn condition_label(c: Option<(&str, f64)>) -> String {
    match c {
        None => BASELINE.to_string(),
        Some((k, v)) => format!("{k}={}", g17(v)),
    }
}

fn one_knob_rows(records: &[RunRecord]) -> Vec<(&RunRecord, Option<(&'static str, f64)>)> {
    records
        .iter()
        .filter(|r| r.params.delta == RANK_DELTA && r.params.proportion_certain == RANK_PROPORTION_CERTAIN)
        .filter_map(|r| condition(r).map(|c| (r, c)))
        .collect()
}

fn final_quarter(r: &RunRecord) -> bool {
    r.quarter == r.params.num_partitions
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Condition order: baseline first, then knobs in canonical order, levels
/// ascending.
fn condition_order(c: &Option<(&str, f64)>) -> (usize, u64) {
    match c {
        None => (0, 0),
        Some((k, v)) => (
            1 + BiasKnobs::NAMES.iter().position(|n| n == k).expect("known knob"),
            v.to_bits(),
        ),
    }
}

/// Ranks with ties sharing the lowest rank; missing values get no rank.
/// Lower is better unless `descending`.
pub fn shared_lowest_ranks(values: &[Option<f64>], descending: bool) -> Vec<Option<usize>> {
    values
        .iter()
        .map(|v| {
            let v = (*v)?;
            let better = values
                .iter()
                .flatten()
                .filter(|&&o| if descending { o > v } else { o < v })
                .count();
            Some(better + 1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub condition: String,
    pub method: Method,
    pub metric: String,
    pub value: Option<f64>,
    pub rank: Option<usize>,
}

/// Seeds present anywhere in the filtered rows; every cell must cover them.
fn seed_set(rows: &[(&RunRecord, Option<(&'static str, f64)>)]) -> BTreeSet<u64> {
    rows.iter().map(|(r, _)| r.params.random_seed).collect()
}

/// Final-quarter method ranking of `metric` per bias condition. The value
/// is the seed mean of the magnitude of a gap, or of profit.
pub fn rank_table(records: &[RunRecord], metric: &str) -> Result<Vec<RankRow>> {
    let rows = one_knob_rows(records);
    if rows.is_empty() {
        return Err(SimError::MissingCells(vec![format!(
            "{BASELINE} (no rows with delta = {RANK_DELTA} and proportion_certain = {RANK_PROPORTION_CERTAIN})"
        )]));
    }
    let seeds = seed_set(&rows);
    let mut conditions: Vec<Option<(&'static str, f64)>> = rows.iter().map(|(_, c)| *c).collect();
    conditions.push(None);
    conditions.sort_by_key(condition_order);
    conditions.dedup();

    let mut cells: BTreeMap<(String, Method), BTreeMap<u64, Option<f64>>> = BTreeMap::new();
    for (r, c) in rows.iter().filter(|(r, _)| final_quarter(r)) {
        cells
            .entry((condition_label(*c), r.method))
            .or_default()
            .insert(r.params.random_seed, magnitude(r, metric));
    }

    let mut missing = Vec::new();
    let mut out = Vec::new();
    for c in &conditions {
        let label = condition_label(*c);
        let values: Vec<Option<f64>> = Method::ALL
            .iter()
            .map(|&m| {
                let cell = cells.get(&(label.clone(), m));
                for s in &seeds {
                    if cell.is_none_or(|c| !c.contains_key(s)) {
                        missing.push(format!("{label}/{m}/seed {s}"));
                    }
                }
                cell.and_then(|c| mean(&c.values().flatten().copied().collect::<Vec<_>>()))
            })
            .collect();
        let ranks = shared_lowest_ranks(&values, is_profit(metric));
        for ((&m, v), rank) in Method::ALL.iter().zip(values).zip(ranks) {
            out.push(RankRow {
                condition: label.clone(),
                method: m,
                metric: metric.to_string(),
                value: v,
                rank,
            });
        }
    }
    if !missing.is_empty() {
        return Err(SimError::MissingCells(missing));
    }
    Ok(out)
}

/// [`rank_table`] for every metric in [`RANK_METRICS`].
pub fn rank_tables(records: &[RunRecord]) -> Result<Vec<RankRow>> {
    let mut out = Vec::new();
    for m in RANK_METRICS {
        out.extend(rank_table(records, m)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub bias_type: String,
    pub method: Method,
    pub quarter: usize,
    pub metric: String,
    pub value: Option<f64>,
}

/// Per-quarter seed means of `metric` for the baseline and for each knob at
/// its highest level. Gaps keep their sign; profit is per quarter.
pub fn temporal_trace(records: &[RunRecord], metric: &str) -> Result<Vec<TraceRow>> {
    let rows = one_knob_rows(records);
    let seeds = seed_set(&rows);
    let mut max_level: BTreeMap<&'static str, f64> = BTreeMap::new();
    for (_, c) in &rows {
        if let Some((k, v)) = c {
            let e = max_level.entry(k).or_insert(*v);
            *e = e.max(*v);
        }
    }
    let mut bias_types: Vec<(String, Option<(&'static str, f64)>)> = vec![(BASELINE.to_string(), None)];
    for k in BiasKnobs::NAMES {
        if let Some(&v) = max_level.get(k) {
            bias_types.push((k.to_string(), Some((k, v))));
        }
    }
    let quarters = rows.iter().map(|(r, _)| r.params.num_partitions).max().unwrap_or(0);

    let mut cells: BTreeMap<(String, Method, usize), BTreeMap<u64, Option<f64>>> = BTreeMap::new();
    for (r, c) in &rows {
        cells
            .entry((condition_label(*c), r.method, r.quarter))
            .or_default()
            .insert(r.params.random_seed, r.metric(metric));
    }

    let mut missing = Vec::new();
    let mut out = Vec::new();
    for (name, c) in &bias_types {
        let label = condition_label(*c);
        for m in Method::ALL {
            for q in 1..=quarters {
                let cell = cells.get(&(label.clone(), m, q));
                let absent: Vec<&u64> = seeds
                    .iter()
                    .filter(|s| cell.is_none_or(|c| !c.contains_key(s)))
                    .collect();
                if !absent.is_empty() || seeds.is_empty() {
                    missing.push(format!("{label}/{m}/quarter {q}"));
                }
                let value = cell.and_then(|c| mean(&c.values().flatten().copied().collect::<Vec<_>>()));
                out.push(TraceRow {
                    bias_type: name.clone(),
                    method: m,
                    quarter: q,
                    metric: metric.to_string(),
                    value,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(SimError::MissingCells(missing));
    }
    Ok(out)
}

/// [`temporal_trace`] for every metric in [`TRACE_METRICS`].
pub fn temporal_traces(records: &[RunRecord]) -> Result<Vec<TraceRow>> {
    let mut out = Vec::new();
    for m in TRACE_METRICS {
        out.extend(temporal_trace(records, m)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistRow {
    pub method: Method,
    pub metric: String,
    pub min: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub n: usize,
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Final-quarter distribution of `metric` per method, pooled over every
/// config in the file. Missing values are left out of the sample.
pub fn distribution_summary(records: &[RunRecord], metric: &str) -> Vec<DistRow> {
    Method::ALL
        .iter()
        .map(|&m| {
            let mut xs: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m && final_quarter(r))
                .filter_map(|r| magnitude(r, metric))
                .collect();
            xs.sort_by(f64::total_cmp);
            DistRow {
                method: m,
                metric: metric.to_string(),
                min: xs.first().copied(),
                q25: quantile(&xs, 0.25),
                median: quantile(&xs, 0.5),
                q75: quantile(&xs, 0.75),
                max: xs.last().copied(),
                mean: mean(&xs),
                n: xs.len(),
            }
        })
        .collect()
}

/// [`distribution_summary`] for every metric in [`DIST_METRICS`].
pub fn distribution_summaries(records: &[RunRecord]) -> Vec<DistRow> {
    DIST_METRICS
        .iter()
        .flat_map(|m| distribution_summary(records, m))
        .collect()
}

pub const RANKS_HEADER: [&str; 5] = ["condition", "method", "metric", "value", "rank"];
pub const TRACES_HEADER: [&str; 5] = ["bias_type", "method", "quarter", "metric", "value"];
pub const DIST_HEADER: [&str; 9] = ["method", "metric", "min", "q25", "median", "q75", "max", "mean", "n"];

fn write_rows<W: Write, const N: usize>(
    out: W,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranks<W: Write>(out: W, rows: &[RankRow]) -> Result<()> {
    write_rows(
        out,
        RANKS_HEADER,
        rows.iter().map(|r| {
            [
                r.condition.clone(),
                r.method.name().to_string(),
                r.metric.clone(),
                g17_opt(r.value),
                r.rank.map(|k| k.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_traces<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    write_rows(
        out,
        TRACES_HEADER,
        rows.iter().map(|r| {
            [
                r.bias_type.clone(),
                r.method.name().to_string(),
                r.quarter.to_string(),
                r.metric.clone(),
                g17_opt(r.value),
            ]
        }),
    )
}

pub fn write_dist<W: Write>(out: W, rows: &[DistRow]) -> Result<()> {
    write_rows(
        out,
        DIST_HEADER,
        rows.iter().map(|r| {
            [
                r.method.name().to_string(),
                r.metric.clone(),
                g17_opt(r.min),
                g17_opt(r.q25),
                g17_opt(r.median),
                g17_opt(r.q75),
                g17_opt(r.max),
                g17_opt(r.mean),
                r.n.to_string(),
            ]
        }),
    )
}
