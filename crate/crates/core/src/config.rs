//! Flat key-value configuration.
//!
//! One `key = value` per line, `#` starts a comment, list values are
//! comma-separated. Every key can be overridden by an environment variable
//! named `SIM_` followed by the upper-cased key, e.g. `SIM_DIM`.

use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::format::g17;
use crate::glm::UtilityParams;
use crate::policies::PolicyConfig;
use crate::simulator::SimConfig;
use crate::synthgen::{BiasConfig, BiasKnobs};

/// Every configurable key, in results-file column order.
pub const KEYS: [&str; 18] = [
    "l_y",
    "l_m_y",
    "l_h_r",
    "l_h_q",
    "l_m",
    "l_y_b",
    "proportion_certain",
    "delta",
    "random_seed",
    "dim",
    "num_partitions",
    "l_q",
    "sy",
    "rejection_threshold",
    "budget_prop",
    "gain_percentage",
    "n_epochs",
    "lr",
];

pub const ENV_PREFIX: &str = "SIM_";

/// The parameters of one simulation run, one field per configurable key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub knobs: BiasKnobs,
    pub proportion_certain: f64,
    pub delta: f64,
    pub random_seed: u64,
    pub dim: usize,
    pub num_partitions: usize,
    pub l_q: u32,
    pub sy: f64,
    pub rejection_threshold: f64,
    pub budget_prop: f64,
    pub gain_percentage: f64,
    pub n_epochs: usize,
    pub lr: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            knobs: BiasKnobs::default(),
            proportion_certain: 0.7,
            delta: 0.05,
            random_seed: 0,
            dim: 20_000,
            num_partitions: 8,
            l_q: 2,
            sy: 2.0,
            rejection_threshold: 0.1,
            budget_prop: 0.8,
            gain_percentage: 0.4,
            n_epochs: 40,
            lr: 0.05,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, raw: &str, what: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| SimError::config(key, format!("cannot parse `{raw}` as {what}")))
}

fn parse_real(key: &str, raw: &str) -> Result<f64> {
    let v: f64 = parse_num(key, raw, "a real number")?;
    if !v.is_finite() {
        return Err(SimError::config(key, format!("`{raw}` is not finite")));
    }
    Ok(v)
}

impl RunParams {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        match key {
            k if BiasKnobs::NAMES.contains(&k) => {
                let v = parse_real(k, raw)?;
                self.knobs.set(k, v);
            }
            "proportion_certain" => self.proportion_certain = parse_real(key, raw)?,
            "delta" => self.delta = parse_real(key, raw)?,
            "random_seed" => self.random_seed = parse_num(key, raw, "a non-negative integer")?,
            "dim" => self.dim = parse_num(key, raw, "a non-negative integer")?,
            "num_partitions" => self.num_partitions = parse_num(key, raw, "a non-negative integer")?,
            "l_q" => self.l_q = parse_num(key, raw, "a non-negative integer")?,
            "sy" => self.sy = parse_real(key, raw)?,
            "rejection_threshold" => self.rejection_threshold = parse_real(key, raw)?,
            "budget_prop" => self.budget_prop = parse_real(key, raw)?,
            "gain_percentage" => self.gain_percentage = parse_real(key, raw)?,
            "n_epochs" => self.n_epochs = parse_num(key, raw, "a non-negative integer")?,
            "lr" => self.lr = parse_real(key, raw)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Canonical text of one key's value: integers plainly, reals with 17
    /// significant digits.
    pub fn field(&self, key: &str) -> Option<String> {
        Some(match key {
            k if BiasKnobs::NAMES.contains(&k) => g17(self.knobs.get(k)?),
            "proportion_certain" => g17(self.proportion_certain),
            "delta" => g17(self.delta),
            "random_seed" => self.random_seed.to_string(),
            "dim" => self.dim.to_string(),
            "num_partitions" => self.num_partitions.to_string(),
            "l_q" => self.l_q.to_string(),
            "sy" => g17(self.sy),
            "rejection_threshold" => g17(self.rejection_threshold),
            "budget_prop" => g17(self.budget_prop),
            "gain_percentage" => g17(self.gain_percentage),
            "n_epochs" => self.n_epochs.to_string(),
            "lr" => g17(self.lr),
            _ => return None,
        })
    }

    /// Numeric value of one key, for ordering and filtering.
    pub fn value(&self, key: &str) -> Option<f64> {
        Some(match key {
            k if BiasKnobs::NAMES.contains(&k) => self.knobs.get(k)?,
            "proportion_certain" => self.proportion_certain,
            "delta" => self.delta,
            "random_seed" => self.random_seed as f64,
            "dim" => self.dim as f64,
            "num_partitions" => self.num_partitions as f64,
            "l_q" => f64::from(self.l_q),
            "sy" => self.sy,
            "rejection_threshold" => self.rejection_threshold,
            "budget_prop" => self.budget_prop,
            "gain_percentage" => self.gain_percentage,
            "n_epochs" => self.n_epochs as f64,
            "lr" => self.lr,
            _ => return None,
        })
    }

    /// All values in [`KEYS`] order.
    pub fn fields(&self) -> Vec<String> {
        KEYS.iter().map(|k| self.field(k).expect("known key")).collect()
    }

    /// `key=value` lines in [`KEYS`] order; the input to the content hash.
    pub fn canonical(&self) -> String {
        KEYS.iter()
            .zip(self.fields())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Hex SHA-256 of [`RunParams::canonical`].
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn to_sim_config(&self) -> SimConfig {
        let mut bias = BiasConfig {
            sigma_s: self.sy,
            q_levels: self.l_q,
            ..BiasConfig::default()
        };
        bias.apply_knobs(&self.knobs);
        SimConfig {
            bias,
            policy: PolicyConfig {
                rejection_threshold: self.rejection_threshold,
                proportion_certain: self.proportion_certain,
                delta_explore: self.delta,
                ..PolicyConfig::default()
            },
            utility: UtilityParams {
                gain: self.gain_percentage,
                ..UtilityParams::default()
            },
            dim: self.dim,
            num_partitions: self.num_partitions,
            budget_prop: self.budget_prop,
            n_epochs: self.n_epochs,
            lr: self.lr,
            seed: self.random_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_sim_config().validate()
    }
}

pub(crate) fn unknown_key(key: &str) -> SimError {
    SimError::config(key, format!("unknown key; expected one of {}", KEYS.join(", ")))
}

/// One `key = v1, v2, ...` entry of a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses config text into entries, in file order. Duplicate keys, empty
/// values and lines without `=` are rejected.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once('=')
            .ok_or_else(|| SimError::Parse(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(SimError::Parse(format!("line {}: missing key", lineno + 1)));
        }
        let values = split_values(&key, rest)?;
        if out.iter().any(|e| e.key == key) {
            return Err(SimError::config(&key, "given more than once"));
        }
        out.push(Entry { key, values });
    }
    Ok(out)
}

fn split_values(key: &str, raw: &str) -> Result<Vec<String>> {
    let values: Vec<String> = raw.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err(SimError::config(key, "empty value"));
    }
    Ok(values)
}

/// Applies `SIM_<KEY>` overrides from `env` on top of the file entries.
pub fn with_env_overrides(mut entries: Vec<Entry>, env: impl Fn(&str) -> Option<String>) -> Result<Vec<Entry>> {
    for key in KEYS {
        if let Some(raw) = env(&format!("{ENV_PREFIX}{}", key.to_uppercase())) {
            let values = split_values(key, &raw)?;
            match entries.iter_mut().find(|e| e.key == key) {
                Some(e) => e.values = values,
                None => entries.push(Entry {
                    key: key.to_string(),
                    values,
                }),
            }
        }
    }
    Ok(entries)
}

/// Reads overrides from the process environment.
pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

/// Builds single-run parameters from config text. Unset keys keep their
/// defaults; each key must carry exactly one value.
pub fn load_run_params(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<RunParams> {
    let mut params = RunParams::default();
    for e in with_env_overrides(parse_entries(text)?, env)? {
        if !KEYS.contains(&e.key.as_str()) {
            return Err(unknown_key(&e.key));
        }
        if e.values.len() != 1 {
            return Err(SimError::config(
                &e.key,
                format!("expects a single value, got {}", e.values.len()),
            ));
        }
        params.set(&e.key, &e.values[0])?;
    }
    params.validate()?;
    Ok(params)
}
