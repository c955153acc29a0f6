//! Grid sweeps: enumeration, parallel execution and resumable output.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use crate::config::{self, process_env, unknown_key, Entry, RunParams, KEYS};
use crate::error::{Result, SimError};
use crate::policies::Method;
use crate::record::{self, RunRecord};
use crate::simulator::run_all_methods;

/// Candidate values for every configurable key. A fixed key has one value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// In [`KEYS`] order; values ascending and distinct.
    levels: Vec<(&'static str, Vec<String>)>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self::paper()
    }
}

impl SweepGrid {
    /// Every key at its single default value.
    pub fn single(params: &RunParams) -> Self {
        SweepGrid {
            levels: KEYS
                .iter()
                .map(|&k| (k, vec![params.field(k).expect("known key")]))
                .collect(),
        }
    }

    /// The full experimental grid: six bias knobs at three levels, three
    /// certain proportions, three exploration rates and five seeds.
    pub fn paper() -> Self {
        let mut g = Self::single(&RunParams::default());
        for (k, v) in [
            ("l_y", "0,2,4"),
            ("l_m_y", "0,2,4"),
            ("l_h_r", "0,1,4"),
            ("l_h_q", "0,1,4"),
            ("l_m", "0,1,2"),
            ("l_y_b", "0,2,4"),
            ("proportion_certain", "0.6,0.7,0.8"),
            ("delta", "0.02,0.05,0.1"),
            ("random_seed", "0,20,40,60,80"),
        ] {
            g.set(k, &v.split(',').collect::<Vec<_>>()).expect("valid preset");
        }
        g
    }

    /// Desk-scale preset: one knob at three levels, two seeds, 2000 applicants.
    pub fn desk() -> Self {
        let mut g = Self::single(&RunParams::default());
        g.set("dim", &["2000"]).expect("valid preset");
        g.set("l_m_y", &["0", "2", "4"]).expect("valid preset");
        g.set("random_seed", &["0", "20"]).expect("valid preset");
        g
    }

    /// Two tiny configs for smoke tests.
    pub fn toy() -> Self {
        let mut g = Self::single(&RunParams::default());
        g.set("dim", &["400"]).expect("valid preset");
        g.set("random_seed", &["0", "20"]).expect("valid preset");
        g
    }

    /// Replaces one key's values. Each value is validated as that key's type;
    /// values are stored canonically, sorted and deduplicated.
    pub fn set(&mut self, key: &str, raw: &[&str]) -> Result<()> {
        if raw.is_empty() {
            return Err(SimError::config(key, "needs at least one value"));
        }
        let slot = self
            .levels
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| unknown_key(key))?;
        let mut probe = RunParams::default();
        let mut parsed = Vec::with_capacity(raw.len());
        for v in raw {
            probe.set(key, v)?;
            parsed.push((
                probe.value(key).expect("known key"),
                probe.field(key).expect("known key"),
            ));
        }
        parsed.sort_by(|a, b| a.0.total_cmp(&b.0));
        parsed.dedup_by(|a, b| a.1 == b.1);
        slot.1 = parsed.into_iter().map(|(_, f)| f).collect();
        Ok(())
    }

    pub fn values(&self, key: &str) -> Option<&[String]> {
        self.levels.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_slice())
    }

    /// Number of configurations in the cross product.
    pub fn len(&self) -> usize {
        self.levels.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a grid from config text on top of `base`; `SIM_<KEY>`
    /// environment overrides are applied through `env`.
    pub fn from_text(text: &str, base: SweepGrid, env: impl Fn(&str) -> Option<String>) -> Result<SweepGrid> {
        let mut grid = base;
        let entries: Vec<Entry> = config::with_env_overrides(config::parse_entries(text)?, env)?;
        for e in entries {
            let vals: Vec<&str> = e.values.iter().map(String::as_str).collect();
            grid.set(&e.key, &vals)?;
        }
        for p in grid.enumerate_configs() {
            p.validate()?;
        }
        Ok(grid)
    }

    pub fn from_text_with_process_env(text: &str, base: SweepGrid) -> Result<SweepGrid> {
        Self::from_text(text, base, process_env)
    }

    /// Lexicographic cross product: the first key varies slowest, values
    /// ascend within each key.
    pub fn enumerate_configs(&self) -> Vec<RunParams> {
        let n = self.len();
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; self.levels.len()];
        for _ in 0..n {
            let mut p = RunParams::default();
            for ((k, vals), &i) in self.levels.iter().zip(&idx) {
                p.set(k, &vals[i]).expect("values validated on insert");
            }
            out.push(p);
            for pos in (0..idx.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < self.levels[pos].1.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepSummary {
    pub configs_run: usize,
    pub configs_skipped: usize,
    pub rows_written: usize,
}

/// Rows a complete config contributes.
pub fn rows_per_config(p: &RunParams) -> usize {
    Method::ALL.len() * p.num_partitions
}

/// Hashes whose rows in `records` form a complete set of (method, quarter).
fn complete_hashes(records: &[RunRecord]) -> HashSet<String> {
    // Per hash: the (method, quarter) cells seen and the count expected.
    type Cells = (HashSet<(Method, usize)>, usize);
    let mut cells: BTreeMap<&str, Cells> = BTreeMap::new();
    for r in records {
        let e = cells
            .entry(&r.config_hash)
            .or_insert_with(|| (HashSet::new(), rows_per_config(&r.params)));
        e.0.insert((r.method, r.quarter));
    }
    cells
        .into_iter()
        .filter(|(_, (seen, want))| seen.len() == *want)
        .map(|(h, _)| h.to_string())
        .collect()
}

fn tmp_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    out.with_file_name(name)
}

/// Writes `records` with a header to `out` through a temporary file.
fn replace_file(out: &Path, records: &[RunRecord]) -> Result<()> {
    let tmp = tmp_path(out);
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        record::write_records(&mut f, records)?;
        f.flush()?;
    }
    fs::rename(&tmp, out)?;
    Ok(())
}

/// Keeps the rows of complete configs already in `out`, dropping partial
/// configs and malformed lines.
fn load_existing(out: &Path) -> Result<Vec<RunRecord>> {
    if !out.exists() || fs::metadata(out)?.len() == 0 {
        return Ok(Vec::new());
    }
    let rows: Vec<RunRecord> = record::read_records_lenient(File::open(out)?)?
        .into_iter()
        .filter_map(|r| r.ok())
        .collect();
    let done = complete_hashes(&rows);
    Ok(rows.into_iter().filter(|r| done.contains(&r.config_hash)).collect())
}

/// Runs every config in `grid` with `workers` threads, appending rows to
/// `out` as each config finishes. Configs already complete in `out` are
/// skipped. On success the file is rewritten in canonical order.
pub fn execute_sweep(grid: &SweepGrid, workers: usize, out: &Path) -> Result<SweepSummary> {
    if workers == 0 {
        return Err(SimError::config("workers", "must be >= 1"));
    }
    if grid.is_empty() {
        return Err(SimError::config("grid", "no configurations"));
    }
    // Fail on an unwritable destination before any simulation.
    OpenOptions::new().create(true).append(true).open(out)?;

    let existing = load_existing(out)?;
    let done: HashSet<String> = existing.iter().map(|r| r.config_hash.clone()).collect();
    replace_file(out, &existing)?;

    let mut pending = Vec::new();
    let mut summary = SweepSummary::default();
    for p in grid.enumerate_configs() {
        if done.contains(&p.config_hash()) {
            summary.configs_skipped += 1;
        } else {
            pending.push(p);
        }
    }

    let file = OpenOptions::new().append(true).open(out)?;
    let mut writer = record::csv_writer(BufWriter::new(file));
    let stop = AtomicBool::new(false);
    let (job_tx, job_rx) = crossbeam_channel::unbounded::<RunParams>();
    let (res_tx, res_rx) = crossbeam_channel::bounded::<Result<Vec<RunRecord>>>(workers * 2);
    for p in pending {
        job_tx.send(p).expect("receiver alive");
    }
    drop(job_tx);

    let outcome: Result<()> = std::thread::scope(|s| {
        for _ in 0..workers {
            let (jobs, results, stop) = (job_rx.clone(), res_tx.clone(), &stop);
            s.spawn(move || {
                for p in jobs {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let res = run_all_methods(&p.to_sim_config()).map(|runs| RunRecord::from_runs(&p, &runs));
                    if results.send(res).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);
        // Single writer: each config's rows are appended and flushed together.
        for res in res_rx {
            let rows = match res {
                Ok(rows) => rows,
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    return Err(e);
                }
            };
            let written = rows
                .iter()
                .try_for_each(|r| record::write_record(&mut writer, r))
                .and_then(|_| writer.flush().map_err(SimError::from));
            if let Err(e) = written {
                stop.store(true, Ordering::Relaxed);
                return Err(e);
            }
            summary.configs_run += 1;
            summary.rows_written += rows.len();
        }
        Ok(())
    });
    outcome?;
    drop(writer);
    finalize(out)?;
    Ok(summary)
}

/// Sorts a results file into canonical order in place.
pub fn finalize(out: &Path) -> Result<()> {
    let mut rows = record::read_records(File::open(out)?)?;
    rows.sort_by(RunRecord::canonical_cmp);
    replace_file(out, &rows)
}
