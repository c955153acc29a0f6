//! Synthetic loan-applicant populations with tunable bias.
//!
//! Latent variables follow a small structural model:
//!
//! ```text
//! A  ~ Bernoulli(p_A)
//! R  = -β_R^h·A + N_R,                 N_R ~ Gamma(k_R, θ_R)
//! Q  ~ Binomial(K, σ(-(α_RQ·R - β_Q^h·A)))
//! S  = α_R·R - α_Q·Q - β_Y^h·A + N_S,  N_S ~ Normal(0, σ_S²)
//! Y  = 1{S > Π_S}
//! ```
//!
//! and the lender observes possibly distorted proxies
//!
//! ```text
//! R̃ = R - β_R^m·A + Normal(0, σ_R̃²)
//! S̃ = S - β_Y^m·A - β_Yb·A·(R - mean R) + Normal(0, σ_S̃²)
//! Ỹ = 1{S̃ > Π_S}
//! ```
//!
//! Each noise source draws from its own named substream, so changing one bias
//! knob leaves every other draw untouched (common random numbers).

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Bernoulli, Binomial, Distribution, Gamma, Normal};

use crate::error::{Result, SimError};
use crate::format::g17;
use crate::linalg::Matrix;
use crate::rng::substream;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct BiasConfig {
    /// P(A = 1). A = 0 is the minority group.
    pub p_a: f64,
    pub beta_r_hist: f64,
    pub beta_q_hist: f64,
    pub beta_y_hist: f64,
    pub beta_r_meas: f64,
    pub beta_y_meas: f64,
    /// Interaction between group membership and centred resources in the
    /// observed score.
    pub beta_y_interact: f64,
    pub k_r: f64,
    pub theta_r: f64,
    pub alpha_rq: f64,
    pub alpha_r: f64,
    pub alpha_q: f64,
    pub sigma_s: f64,
    pub sigma_r_meas: f64,
    pub sigma_s_meas: f64,
    /// Number of levels of Q; Q ranges over `0..q_levels`.
    pub q_levels: u32,
    /// Score threshold. `None` calibrates it to the median score of a
    /// bias-free draw with the same size and seed.
    pub pi_s: Option<f64>,
    /// Drop resources from the model's features.
    pub omit_resource: bool,
    /// Give the model the sensitive attribute as a feature.
    pub include_sensitive: bool,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            p_a: 0.7,
            beta_r_hist: 0.0,
            beta_q_hist: 0.0,
            beta_y_hist: 0.0,
            beta_r_meas: 0.0,
            beta_y_meas: 0.0,
            beta_y_interact: 0.0,
            k_r: 4.0,
            theta_r: 2.0,
            alpha_rq: 0.5,
            alpha_r: 1.0,
            alpha_q: 1.0,
            sigma_s: 2.0,
            sigma_r_meas: 0.0,
            sigma_s_meas: 0.0,
            q_levels: 2,
            pi_s: None,
            omit_resource: false,
            include_sensitive: true,
        }
    }
}

/// The six sweepable bias knobs, under their results-file names.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BiasKnobs {
    pub l_y: f64,
    pub l_m_y: f64,
    pub l_h_r: f64,
    pub l_h_q: f64,
    pub l_m: f64,
    pub l_y_b: f64,
}

impl BiasKnobs {
    pub const NAMES: [&'static str; 6] = ["l_y", "l_m_y", "l_h_r", "l_h_q", "l_m", "l_y_b"];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "l_y" => self.l_y,
            "l_m_y" => self.l_m_y,
            "l_h_r" => self.l_h_r,
            "l_h_q" => self.l_h_q,
            "l_m" => self.l_m,
            "l_y_b" => self.l_y_b,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, v: f64) -> bool {
        let slot = match name {
            "l_y" => &mut self.l_y,
            "l_m_y" => &mut self.l_m_y,
            "l_h_r" => &mut self.l_h_r,
            "l_h_q" => &mut self.l_h_q,
            "l_m" => &mut self.l_m,
            "l_y_b" => &mut self.l_y_b,
            _ => return false,
        };
        *slot = v;
        true
    }

    pub fn values(&self) -> [f64; 6] {
        [self.l_y, self.l_m_y, self.l_h_r, self.l_h_q, self.l_m, self.l_y_b]
    }
}

impl BiasConfig {
    /// Maps sweep knobs onto coefficients. Measurement noise is switched on
    /// (σ = 1) exactly when a knob distorting that observation is nonzero.
    pub fn apply_knobs(&mut self, k: &BiasKnobs) {
        self.beta_y_hist = k.l_y;
        self.beta_y_meas = k.l_m_y;
        self.beta_r_hist = k.l_h_r;
        self.beta_q_hist = k.l_h_q;
        self.beta_r_meas = k.l_m;
        self.beta_y_interact = k.l_y_b;
        self.sigma_r_meas = if k.l_m > 0.0 { 1.0 } else { 0.0 };
        self.sigma_s_meas = if k.l_m_y > 0.0 || k.l_y_b > 0.0 { 1.0 } else { 0.0 };
    }

    pub fn knobs(&self) -> BiasKnobs {
        BiasKnobs {
            l_y: self.beta_y_hist,
            l_m_y: self.beta_y_meas,
            l_h_r: self.beta_r_hist,
            l_h_q: self.beta_q_hist,
            l_m: self.beta_r_meas,
            l_y_b: self.beta_y_interact,
        }
    }

    /// Same structural constants with every bias coefficient and measurement
    /// noise set to zero.
    pub fn unbiased(&self) -> Self {
        let mut c = self.clone();
        c.apply_knobs(&BiasKnobs::default());
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_a) {
            return Err(SimError::config("p_a", format!("{} is not a probability", self.p_a)));
        }
        let betas = [
            ("l_h_r", self.beta_r_hist),
            ("l_h_q", self.beta_q_hist),
            ("l_y", self.beta_y_hist),
            ("l_m", self.beta_r_meas),
            ("l_m_y", self.beta_y_meas),
            ("l_y_b", self.beta_y_interact),
            ("sigma_r_meas", self.sigma_r_meas),
            ("sigma_s_meas", self.sigma_s_meas),
        ];
        for (key, v) in betas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (key, v) in [("k_r", self.k_r), ("theta_r", self.theta_r), ("sy", self.sigma_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        for (key, v) in [
            ("alpha_rq", self.alpha_rq),
            ("alpha_r", self.alpha_r),
            ("alpha_q", self.alpha_q),
        ] {
            if !v.is_finite() {
                return Err(SimError::config(key, format!("must be finite, got {v}")));
            }
        }
        if self.q_levels < 2 {
            return Err(SimError::config(
                "l_q",
                format!("needs at least 2 levels, got {}", self.q_levels),
            ));
        }
        if let Some(pi) = self.pi_s {
            if !pi.is_finite() {
                return Err(SimError::config("pi_s", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        1 + usize::from(!self.omit_resource) + usize::from(self.include_sensitive)
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        let mut names = Vec::with_capacity(3);
        if !self.omit_resource {
            names.push("r_obs");
        }
        names.push("q");
        if self.include_sensitive {
            names.push("a");
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applicant {
    /// Position in the generated population.
    pub id: usize,
    pub a: u8,
    pub r_latent: f64,
    pub q: u32,
    pub s_latent: f64,
    pub y_real: u8,
    pub r_obs: f64,
    pub y_obs: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub applicants: Vec<Applicant>,
    /// 1-based quarter number.
    pub quarter_index: usize,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.applicants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applicants.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.applicants.iter().filter(|a| a.y_real == 1).count()
    }
}

struct Latent {
    a: Vec<u8>,
    r: Vec<f64>,
    q: Vec<u32>,
    s: Vec<f64>,
}

fn sample_latent(cfg: &BiasConfig, dim: usize, seed: u64) -> Result<Latent> {
    let bern = Bernoulli::new(cfg.p_a).map_err(|e| SimError::config("p_a", e.to_string()))?;
    let gamma = Gamma::new(cfg.k_r, cfg.theta_r).map_err(|e| SimError::config("k_r", e.to_string()))?;
    let noise_s = Normal::new(0.0, cfg.sigma_s).map_err(|e| SimError::config("sy", e.to_string()))?;
    let mut rng_a = substream(seed, "population/a");
    let mut rng_r = substream(seed, "population/n_r");
    let mut rng_q = substream(seed, "population/q");
    let mut rng_s = substream(seed, "population/n_s");
    let trials = u64::from(cfg.q_levels - 1);

    let mut out = Latent {
        a: Vec::with_capacity(dim),
        r: Vec::with_capacity(dim),
        q: Vec::with_capacity(dim),
        s: Vec::with_capacity(dim),
    };
    for _ in 0..dim {
        let a = u8::from(bern.sample(&mut rng_a));
        let af = f64::from(a);
        let r = -cfg.beta_r_hist * af + gamma.sample(&mut rng_r);
        let p_q = sigmoid(-(cfg.alpha_rq * r - cfg.beta_q_hist * af));
        let q = Binomial::new(trials, p_q)
            .map_err(|e| SimError::config("alpha_rq", e.to_string()))?
            .sample(&mut rng_q) as u32;
        let s = cfg.alpha_r * r - cfg.alpha_q * f64::from(q) - cfg.beta_y_hist * af + noise_s.sample(&mut rng_s);
        out.a.push(a);
        out.r.push(r);
        out.q.push(q);
        out.s.push(s);
    }
    Ok(out)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Score threshold used for `cfg`: the configured value, or the median score
/// of the bias-free draw with the same size and seed.
pub fn score_threshold(cfg: &BiasConfig, dim: usize, seed: u64) -> Result<f64> {
    match cfg.pi_s {
        Some(pi) => Ok(pi),
        None => Ok(median(&sample_latent(&cfg.unbiased(), dim, seed)?.s)),
    }
}

pub fn generate_population(cfg: &BiasConfig, dim: usize, seed: u64) -> Result<Vec<Applicant>> {
    cfg.validate()?;
    if dim == 0 {
        return Err(SimError::config("dim", "population size must be >= 1"));
    }
    let pi_s = score_threshold(cfg, dim, seed)?;
    let lat = sample_latent(cfg, dim, seed)?;
    let mean_r = lat.r.iter().sum::<f64>() / dim as f64;

    let noise_r = Normal::new(0.0, cfg.sigma_r_meas).map_err(|e| SimError::config("sigma_r_meas", e.to_string()))?;
    let noise_s = Normal::new(0.0, cfg.sigma_s_meas).map_err(|e| SimError::config("sigma_s_meas", e.to_string()))?;
    let mut rng_rm = substream(seed, "population/r_meas");
    let mut rng_sm = substream(seed, "population/s_meas");

    let mut pop = Vec::with_capacity(dim);
    for i in 0..dim {
        let (a, r, q, s) = (lat.a[i], lat.r[i], lat.q[i], lat.s[i]);
        let af = f64::from(a);

        let mut r_obs = r;
        if cfg.beta_r_meas != 0.0 {
            r_obs -= cfg.beta_r_meas * af;
        }
        if cfg.sigma_r_meas > 0.0 {
            r_obs += noise_r.sample(&mut rng_rm);
        }

        let mut s_obs = s;
        if cfg.beta_y_meas != 0.0 {
            s_obs -= cfg.beta_y_meas * af;
        }
        if cfg.beta_y_interact != 0.0 {
            s_obs -= cfg.beta_y_interact * af * (r - mean_r);
        }
        if cfg.sigma_s_meas > 0.0 {
            s_obs += noise_s.sample(&mut rng_sm);
        }

        pop.push(Applicant {
            id: i,
            a,
            r_latent: r,
            q,
            s_latent: s,
            y_real: u8::from(s > pi_s),
            r_obs,
            y_obs: u8::from(s_obs > pi_s),
        });
    }
    Ok(pop)
}

/// Shuffles `pop` and cuts it into `num_partitions` contiguous quarters whose
/// sizes differ by at most one (larger blocks first).
pub fn partition_quarters(pop: &[Applicant], num_partitions: usize, seed: u64) -> Result<Vec<Cohort>> {
    if pop.is_empty() {
        return Err(SimError::config("dim", "cannot partition an empty population"));
    }
    if num_partitions < 2 {
        return Err(SimError::config(
            "num_partitions",
            format!("needs >= 2 quarters, got {num_partitions}"),
        ));
    }
    if num_partitions > pop.len() {
        return Err(SimError::config(
            "num_partitions",
            format!("{num_partitions} quarters exceed population size {}", pop.len()),
        ));
    }
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.shuffle(&mut substream(seed, "partition"));

    let (base, extra) = (pop.len() / num_partitions, pop.len() % num_partitions);
    let mut cohorts = Vec::with_capacity(num_partitions);
    let mut start = 0;
    for k in 0..num_partitions {
        let size = base + usize::from(k < extra);
        let applicants = order[start..start + size].iter().map(|&i| pop[i].clone()).collect();
        cohorts.push(Cohort {
            applicants,
            quarter_index: k + 1,
        });
        start += size;
    }
    Ok(cohorts)
}

/// Model inputs for a cohort, one row per applicant: `[R̃]`, `Q`, then `[A]`
/// depending on the feature flags. The intercept is not included.
pub fn feature_matrix<T: Scalar>(cohort: &Cohort, cfg: &BiasConfig) -> Matrix<T> {
    let mut m = Matrix::with_cols(cfg.feature_count());
    let mut row = Vec::with_capacity(cfg.feature_count());
    for app in &cohort.applicants {
        row.clear();
        if !cfg.omit_resource {
            row.push(T::of(app.r_obs));
        }
        row.push(T::of(f64::from(app.q)));
        if cfg.include_sensitive {
            row.push(T::of(f64::from(app.a)));
        }
        m.push_row(&row).expect("row width matches feature count");
    }
    m
}

pub const POPULATION_HEADER: &str = "a,r_latent,q,s_latent,y_real,r_obs,y_obs";

pub fn write_population_csv<W: Write>(mut out: W, pop: &[Applicant]) -> Result<()> {
    writeln!(out, "{POPULATION_HEADER}")?;
    for p in pop {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.a,
            g17(p.r_latent),
            p.q,
            g17(p.s_latent),
            p.y_real,
            g17(p.r_obs),
            p.y_obs
        )?;
    }
    out.flush()?;
    Ok(())
}
