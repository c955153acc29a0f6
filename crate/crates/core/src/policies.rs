//! Budgeted grant/deny rules.
//!
//! Every method first ranks applicants by predicted repayment probability
//! (descending, ties by ascending index) and never grants below the
//! rejection floor. The exploration methods split the budget into
//! `⌊proportion_certain · budget⌋` certain accepts and an exploration
//! remainder, the latter further capped at `⌈δ · |pool|⌉` where the pool is
//! the set of applicants that could be explored. Exploration slots that the
//! pool cannot fill are forfeited.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Result, SimError};
use crate::scalar::Scalar;
use crate::synthgen::Cohort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Naive,
    NaiveExploration,
    WeightedExploration,
    UncertaintyAware,
    CounterfactualUtility,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Naive,
        Method::NaiveExploration,
        Method::WeightedExploration,
        Method::UncertaintyAware,
        Method::CounterfactualUtility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::NaiveExploration => "naive_exploration",
            Method::WeightedExploration => "weighted_exploration",
            Method::UncertaintyAware => "uncertainty_aware",
            Method::CounterfactualUtility => "counterfactual_utility",
        }
    }

    pub fn valid_names() -> String {
        Method::ALL.map(Method::name).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            SimError::config(
                "method",
                format!("unknown method `{s}`; expected one of {}", Method::valid_names()),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig<T> {
    pub method: Method,
    pub rejection_threshold: T,
    pub proportion_certain: T,
    pub delta_explore: T,
}

impl<T: Scalar> Default for PolicyConfig<T> {
    fn default() -> Self {
        PolicyConfig {
            method: Method::Naive,
            rejection_threshold: T::of(0.1),
            proportion_certain: T::of(0.7),
            delta_explore: T::of(0.05),
        }
    }
}

impl<T: Scalar> PolicyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let (zero, one) = (T::zero(), T::one());
        if !(self.rejection_threshold >= zero && self.rejection_threshold < one) {
            return Err(SimError::config(
                "rejection_threshold",
                format!("must lie in [0, 1), got {}", self.rejection_threshold),
            ));
        }
        if !(self.proportion_certain > zero && self.proportion_certain <= one) {
            return Err(SimError::config(
                "proportion_certain",
                format!("must lie in (0, 1], got {}", self.proportion_certain),
            ));
        }
        if !(self.delta_explore > zero && self.delta_explore < one) {
            return Err(SimError::config(
                "delta",
                format!("must lie in (0, 1), got {}", self.delta_explore),
            ));
        }
        Ok(())
    }

    fn certain_slots(&self, budget: usize) -> usize {
        floor_product(self.proportion_certain.as_f64(), budget).min(budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    CertainAccept,
    Explored,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision<T> {
    pub applicant_index: usize,
    pub granted: bool,
    pub provenance: Provenance,
    pub p_hat: T,
    /// Half-width used by the decision, 0 when the method ignores it.
    pub ci_halfwidth: T,
}

/// One quarter's decisions, indexed like the input probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions<T> {
    pub decisions: Vec<PolicyDecision<T>>,
    /// Weighted sampling found no positive weight and sampled uniformly.
    pub fallback_uniform: bool,
}

impl<T: Scalar> Decisions<T> {
    fn build(p_hat: &[T], ci: Option<&[T]>, certain: &[usize], explored: &[usize]) -> Self {
        let mut decisions: Vec<PolicyDecision<T>> = p_hat
            .iter()
            .enumerate()
            .map(|(i, &p)| PolicyDecision {
                applicant_index: i,
                granted: false,
                provenance: Provenance::Denied,
                p_hat: p,
                ci_halfwidth: ci.map_or(T::zero(), |c| c[i]),
            })
            .collect();
        for &i in certain {
            decisions[i].granted = true;
            decisions[i].provenance = Provenance::CertainAccept;
        }
        for &i in explored {
            debug_assert!(!decisions[i].granted);
            decisions[i].granted = true;
            decisions[i].provenance = Provenance::Explored;
        }
        Decisions {
            decisions,
            fallback_uniform: false,
        }
    }

    pub fn n_granted(&self) -> usize {
        self.decisions.iter().filter(|d| d.granted).count()
    }

    pub fn n_explored(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.provenance == Provenance::Explored)
            .count()
    }

    pub fn granted_indices(&self) -> Vec<usize> {
        self.decisions
            .iter()
            .filter(|d| d.granted)
            .map(|d| d.applicant_index)
            .collect()
    }

    pub fn grants(&self) -> Vec<bool> {
        self.decisions.iter().map(|d| d.granted).collect()
    }
}

fn floor_product(frac: f64, n: usize) -> usize {
    // absorb representation error such as 0.7 * 10 = 7.000000000000001
    (frac * n as f64 + 1e-9).floor() as usize
}

fn ceil_product(frac: f64, n: usize) -> usize {
    (frac * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Loans available this quarter: `⌊budget_prop · #(y_real = 1)⌋`, at least 1.
pub fn quarter_budget(cohort: &Cohort, budget_prop: f64) -> usize {
    floor_product(budget_prop, cohort.positives()).max(1)
}

/// Indices ordered by descending probability, ties by ascending index.
pub fn rank(p_hat: &[impl Scalar]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p_hat.len()).collect();
    order.sort_by(|&a, &b| {
        p_hat[b]
            .partial_cmp(&p_hat[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Ranked applicants at or above the rejection floor.
fn eligible<T: Scalar>(p_hat: &[T], floor: T) -> Vec<usize> {
    rank(p_hat).into_iter().filter(|&i| p_hat[i] >= floor).collect()
}

pub fn decide_naive<T: Scalar>(p_hat: &[T], budget: usize, cfg: &PolicyConfig<T>) -> Decisions<T> {
    let ranked = eligible(p_hat, cfg.rejection_threshold);
    let n = budget.min(ranked.len());
    Decisions::build(p_hat, None, &ranked[..n], &[])
}

/// Certain accepts plus the remaining ranked-eligible applicants.
fn split_certain<T: Scalar>(p_hat: &[T], budget: usize, cfg: &PolicyConfig<T>) -> (Vec<usize>, Vec<usize>, usize) {
    let ranked = eligible(p_hat, cfg.rejection_threshold);
    let slots = cfg.certain_slots(budget);
    let n = slots.min(ranked.len());
    let rest = ranked[n..].to_vec();
    let mut certain = ranked;
    certain.truncate(n);
    (certain, rest, budget - slots)
}

fn explore_count<T: Scalar>(explore_slots: usize, pool: usize, cfg: &PolicyConfig<T>) -> usize {
    explore_slots
        .min(ceil_product(cfg.delta_explore.as_f64(), pool))
        .min(pool)
}

fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], amount: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    picked.sort_unstable();
    picked
}

pub fn decide_naive_exploration<T: Scalar, R: Rng + ?Sized>(
    p_hat: &[T],
    budget: usize,
    cfg: &PolicyConfig<T>,
    rng: &mut R,
) -> Decisions<T> {
    let (certain, pool, slots) = split_certain(p_hat, budget, cfg);
    let n = explore_count(slots, pool.len(), cfg);
    let explored = sample_uniform(rng, &pool, n);
    Decisions::build(p_hat, None, &certain, &explored)
}

/// Exploration sampled without replacement with inclusion weight ∝ p_hat.
pub fn decide_weighted_exploration<T: Scalar, R: Rng + ?Sized>(
    p_hat: &[T],
    budget: usize,
    cfg: &PolicyConfig<T>,
    rng: &mut R,
) -> Decisions<T> {
    let (certain, pool, slots) = split_certain(p_hat, budget, cfg);
    let n = explore_count(slots, pool.len(), cfg);
    let positive: Vec<usize> = pool.iter().copied().filter(|&i| p_hat[i] > T::zero()).collect();
    let (explored, fallback) = if n == 0 {
        (Vec::new(), false)
    } else if positive.is_empty() {
        (sample_uniform(rng, &pool, n), true)
    } else {
        let amount = n.min(positive.len());
        let picked = index::sample_weighted(rng, positive.len(), |k| p_hat[positive[k]].as_f64(), amount)
            .expect("weights are finite and positive");
        let mut v: Vec<usize> = picked.into_iter().map(|k| positive[k]).collect();
        v.sort_unstable();
        (v, false)
    };
    let mut d = Decisions::build(p_hat, None, &certain, &explored);
    d.fallback_uniform = fallback;
    d
}

/// Exploration restricted to applicants whose interval `[p − Δ, p + Δ]`
/// contains the acceptance threshold (the lowest certain accept's p_hat, or
/// the rejection floor when nobody was certain-accepted).
pub fn decide_uncertainty_aware<T: Scalar, R: Rng + ?Sized>(
    p_hat: &[T],
    ci: &[T],
    budget: usize,
    cfg: &PolicyConfig<T>,
    rng: &mut R,
) -> Result<Decisions<T>> {
    if ci.len() != p_hat.len() {
        return Err(SimError::contract(format!(
            "{} half-widths for {} applicants",
            ci.len(),
            p_hat.len()
        )));
    }
    let (certain, rest, slots) = split_certain(p_hat, budget, cfg);
    let pool = interval_pool(p_hat, ci, &certain, rest, cfg.rejection_threshold);
    let n = explore_count(slots, pool.len(), cfg);
    let explored = sample_uniform(rng, &pool, n);
    Ok(Decisions::build(p_hat, Some(ci), &certain, &explored))
}

fn interval_pool<T: Scalar>(p_hat: &[T], ci: &[T], certain: &[usize], candidates: Vec<usize>, floor: T) -> Vec<usize> {
    let threshold = certain.last().map_or(floor, |&i| p_hat[i]);
    candidates
        .into_iter()
        .filter(|&i| p_hat[i] - ci[i] <= threshold && threshold <= p_hat[i] + ci[i])
        .collect()
}

/// Applicants the uncertainty-aware method may explore.
pub fn uncertainty_pool<T: Scalar>(p_hat: &[T], ci: &[T], budget: usize, cfg: &PolicyConfig<T>) -> Vec<usize> {
    let (certain, rest, _) = split_certain(p_hat, budget, cfg);
    interval_pool(p_hat, ci, &certain, rest, cfg.rejection_threshold)
}

/// Budget-induced acceptance threshold: the `budget`-th largest p_hat, or
/// the rejection floor when fewer than `budget` applicants clear the floor.
pub fn counterfactual_threshold<T: Scalar>(p_hat: &[T], budget: usize, floor: T) -> T {
    let above = p_hat.iter().filter(|&&p| p >= floor).count();
    if budget == 0 || above < budget {
        return floor;
    }
    p_hat[rank(p_hat)[budget - 1]]
}

pub fn decide_counterfactual<T: Scalar>(p_hat: &[T], budget: usize, cfg: &PolicyConfig<T>) -> Decisions<T> {
    let tau = counterfactual_threshold(p_hat, budget, cfg.rejection_threshold);
    let cut = tau.max(cfg.rejection_threshold);
    let granted: Vec<usize> = rank(p_hat)
        .into_iter()
        .filter(|&i| p_hat[i] >= cut)
        .take(budget)
        .collect();
    Decisions::build(p_hat, None, &granted, &[])
}

/// Dispatches on `cfg.method`. `ci` is required for the uncertainty-aware
/// method and ignored otherwise.
pub fn decide<T: Scalar, R: Rng + ?Sized>(
    p_hat: &[T],
    ci: Option<&[T]>,
    budget: usize,
    cfg: &PolicyConfig<T>,
    rng: &mut R,
) -> Result<Decisions<T>> {
    if budget == 0 {
        return Err(SimError::contract("budget must be at least 1"));
    }
    Ok(match cfg.method {
        Method::Naive => decide_naive(p_hat, budget, cfg),
        Method::NaiveExploration => decide_naive_exploration(p_hat, budget, cfg, rng),
        Method::WeightedExploration => decide_weighted_exploration(p_hat, budget, cfg, rng),
        Method::UncertaintyAware => {
            let ci = ci.ok_or_else(|| SimError::contract("uncertainty-aware decisions need half-widths"))?;
            decide_uncertainty_aware(p_hat, ci, budget, cfg, rng)?
        }
        Method::CounterfactualUtility => decide_counterfactual(p_hat, budget, cfg),
    })
}
