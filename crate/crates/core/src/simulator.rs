//! The quarter-by-quarter lending loop.
//!
//! Quarter 1 is a base quarter: the model is fitted on every applicant's
//! observed label and nobody is decided on. From quarter 2 on, the current
//! model scores the cohort, a method grants loans under the quarter's
//! budget, and only the granted applicants' observed labels are fed back.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::glm::{LogisticModel, UtilityParams, Z_95};
use crate::linalg::Matrix;
use crate::metrics::{self, MetricRow};
use crate::policies::{self, Method, PolicyConfig, PolicyDecision};
use crate::rng::substream;
use crate::synthgen::{self, BiasConfig, Cohort};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub bias: BiasConfig,
    pub policy: PolicyConfig<f64>,
    pub utility: UtilityParams<f64>,
    pub dim: usize,
    pub num_partitions: usize,
    pub budget_prop: f64,
    pub n_epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bias: BiasConfig::default(),
            policy: PolicyConfig::default(),
            utility: UtilityParams::default(),
            dim: 20_000,
            num_partitions: 8,
            budget_prop: 0.8,
            n_epochs: crate::glm::DEFAULT_EPOCHS,
            lr: crate::glm::DEFAULT_LR,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.bias.validate()?;
        self.policy.validate()?;
        self.utility.validate()?;
        if self.num_partitions < 2 {
            return Err(SimError::config(
                "num_partitions",
                format!("needs >= 2 quarters, got {}", self.num_partitions),
            ));
        }
        if self.dim < self.num_partitions {
            return Err(SimError::config(
                "dim",
                format!("{} applicants cannot fill {} quarters", self.dim, self.num_partitions),
            ));
        }
        if !(self.budget_prop > 0.0 && self.budget_prop <= 1.0) {
            return Err(SimError::config(
                "budget_prop",
                format!("must lie in (0, 1], got {}", self.budget_prop),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SimError::config(
                "lr",
                format!("must be finite and > 0, got {}", self.lr),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterOutcome {
    pub quarter: usize,
    /// Base quarter: full label coverage, no decisions.
    pub is_base: bool,
    pub budget: usize,
    pub decisions: Vec<PolicyDecision<f64>>,
    pub realized_profit: f64,
    pub counterfactual_profit: f64,
    pub metrics: MetricRow,
    /// Population ids whose labels entered training this quarter.
    pub trained_ids: Vec<usize>,
    /// Model's cumulative row count after this quarter's update.
    pub train_count: usize,
    pub jitter_applied: bool,
    pub fallback_uniform: bool,
}

/// Generates the population and splits it into quarters.
pub fn prepare_cohorts(cfg: &SimConfig) -> Result<Vec<Cohort>> {
    cfg.validate()?;
    let pop = synthgen::generate_population(&cfg.bias, cfg.dim, cfg.seed)?;
    synthgen::partition_quarters(&pop, cfg.num_partitions, cfg.seed)
}

pub fn run_method(cfg: &SimConfig, method: Method) -> Result<Vec<QuarterOutcome>> {
    let cohorts = prepare_cohorts(cfg)?;
    Ok(run_on_cohorts(cfg, method, &cohorts)?.0)
}

/// Runs all five methods on one shared population and partition.
pub fn run_all_methods(cfg: &SimConfig) -> Result<BTreeMap<Method, Vec<QuarterOutcome>>> {
    let cohorts = prepare_cohorts(cfg)?;
    Method::ALL
        .into_iter()
        .map(|m| Ok((m, run_on_cohorts(cfg, m, &cohorts)?.0)))
        .collect()
}

fn observed_labels(cohort: &Cohort, idx: impl IntoIterator<Item = usize>) -> Vec<u8> {
    idx.into_iter().map(|i| cohort.applicants[i].y_obs).collect()
}

/// Runs one method over prepared cohorts and also returns the final model.
pub fn run_on_cohorts(
    cfg: &SimConfig,
    method: Method,
    cohorts: &[Cohort],
) -> Result<(Vec<QuarterOutcome>, LogisticModel<f64>)> {
    cfg.validate()?;
    let (base, rest) = cohorts
        .split_first()
        .ok_or_else(|| SimError::contract("no cohorts to simulate"))?;
    let policy = PolicyConfig { method, ..cfg.policy };
    let mut model = LogisticModel::centred(cfg.bias.feature_count());
    let mut outcomes = Vec::with_capacity(cohorts.len());

    let x_base: Matrix<f64> = synthgen::feature_matrix(base, &cfg.bias);
    let y_base = observed_labels(base, 0..base.len());
    model.fit_logloss(&x_base, &y_base, cfg.n_epochs, cfg.lr)?;
    outcomes.push(QuarterOutcome {
        quarter: base.quarter_index,
        is_base: true,
        budget: policies::quarter_budget(base, cfg.budget_prop),
        decisions: Vec::new(),
        realized_profit: 0.0,
        counterfactual_profit: 0.0,
        metrics: MetricRow::default(),
        trained_ids: base.applicants.iter().map(|a| a.id).collect(),
        train_count: model.train_count,
        jitter_applied: model.jitter_applied,
        fallback_uniform: false,
    });

    let mut profits = Vec::with_capacity(rest.len());
    let mut budgets = Vec::with_capacity(rest.len());
    for cohort in rest {
        let x: Matrix<f64> = synthgen::feature_matrix(cohort, &cfg.bias);
        let p_hat = model.predict_all(&x)?;
        let ci = match method {
            Method::UncertaintyAware => Some(model.ci_halfwidths(&x, Z_95)?),
            _ => None,
        };
        let budget = policies::quarter_budget(cohort, cfg.budget_prop);
        let mut rng = substream(
            cfg.seed,
            &format!("explore/{}/q{}", method.name(), cohort.quarter_index),
        );
        let decided = policies::decide(&p_hat, ci.as_deref(), budget, &policy, &mut rng)?;
        let grants = decided.grants();
        let granted = decided.granted_indices();

        if !granted.is_empty() {
            let xg = x.select_rows(&granted);
            let yg = observed_labels(cohort, granted.iter().copied());
            match method {
                Method::CounterfactualUtility => {
                    let tau = policies::counterfactual_threshold(&p_hat, budget, policy.rejection_threshold)
                        .clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                    model.fit_counterfactual_utility(&xg, &yg, tau, &cfg.utility, cfg.n_epochs, cfg.lr)?;
                }
                _ => model.fit_logloss(&xg, &yg, cfg.n_epochs, cfg.lr)?,
            }
        }

        let realized = metrics::realized_profit(&grants, cohort, &cfg.utility)?;
        profits.push(realized);
        budgets.push(budget);
        let cum_norm = *metrics::normalize_profit(&profits, &budgets)?
            .last()
            .expect("non-empty");
        let fairness = metrics::fairness_row(&grants, cohort)?;
        let row = MetricRow {
            profit_quarter: realized,
            profit_cum_norm: Some(cum_norm),
            n_granted: decided.n_granted(),
            n_explored: decided.n_explored(),
            ..MetricRow::default()
        }
        .with_fairness(&fairness);

        outcomes.push(QuarterOutcome {
            quarter: cohort.quarter_index,
            is_base: false,
            budget,
            realized_profit: realized,
            counterfactual_profit: metrics::counterfactual_profit(&grants, cohort, &cfg.utility)?,
            metrics: row,
            trained_ids: granted.iter().map(|&i| cohort.applicants[i].id).collect(),
            train_count: model.train_count,
            jitter_applied: model.jitter_applied,
            fallback_uniform: decided.fallback_uniform,
            decisions: decided.decisions,
        });
    }
    Ok((outcomes, model))
}
