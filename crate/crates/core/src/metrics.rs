//! Utility over factual and counterfactual outcomes, and group-fairness gaps.
//!
//! Everything here is evaluated against `y_real`; the observed label never
//! enters a metric.

use crate::error::{Result, SimError};
use crate::glm::UtilityParams;
use crate::scalar::Scalar;
use crate::synthgen::Cohort;

/// Slack allowed when a reward exceeds the oracle's through rounding.
pub const REGRET_SLACK: f64 = 1e-12;

/// Utility of decision `d` for an applicant whose potential outcome is `y1`:
///
/// | d \ y1 | 1            | 0            |
/// |--------|--------------|--------------|
/// | 1      | +g realized  | −l realized  |
/// | 0      | −l unrealized| +g unrealized|
pub fn utility<T: Scalar>(d: bool, y1: bool, g: T, l: T) -> T {
    let (d, y1) = (T::of(f64::from(u8::from(d))), T::of(f64::from(u8::from(y1))));
    let one = T::one();
    d * (y1 * g - (one - y1) * l) + (one - d) * ((one - y1) * g - y1 * l)
}

fn check_cover(grants: &[bool], cohort: &Cohort) -> Result<()> {
    if grants.len() != cohort.len() {
        return Err(SimError::contract(format!(
            "{} decisions for a cohort of {}",
            grants.len(),
            cohort.len()
        )));
    }
    Ok(())
}

/// Mean utility over the cohort, using every applicant's true outcome.
pub fn policy_reward<T: Scalar>(grants: &[bool], cohort: &Cohort, up: &UtilityParams<T>) -> Result<T> {
    check_cover(grants, cohort)?;
    if cohort.is_empty() {
        return Err(SimError::contract("reward of an empty cohort"));
    }
    let total = grants.iter().zip(&cohort.applicants).fold(T::zero(), |acc, (&d, a)| {
        acc + utility(d, a.y_real == 1, up.gain, up.loss)
    });
    Ok(total / T::of(cohort.len() as f64))
}

/// Grants exactly the applicants who would repay.
pub fn oracle_grants(cohort: &Cohort) -> Vec<bool> {
    cohort.applicants.iter().map(|a| a.y_real == 1).collect()
}

pub fn oracle_reward<T: Scalar>(cohort: &Cohort, up: &UtilityParams<T>) -> Result<T> {
    policy_reward(&oracle_grants(cohort), cohort, up)
}

/// `reward_star − reward_pi`, clamped at zero within [`REGRET_SLACK`].
pub fn regret<T: Scalar>(reward_pi: T, reward_star: T) -> Result<T> {
    let gap = reward_star - reward_pi;
    if gap < -T::of(REGRET_SLACK) {
        return Err(SimError::contract(format!(
            "policy reward {reward_pi} exceeds oracle reward {reward_star}"
        )));
    }
    Ok(gap.max(T::zero()))
}

/// Profit actually booked: granted loans only, scored on true repayment.
pub fn realized_profit<T: Scalar>(grants: &[bool], cohort: &Cohort, up: &UtilityParams<T>) -> Result<T> {
    check_cover(grants, cohort)?;
    Ok(grants
        .iter()
        .zip(&cohort.applicants)
        .filter(|(&d, _)| d)
        .fold(T::zero(), |acc, (_, a)| {
            acc + utility(true, a.y_real == 1, up.gain, up.loss)
        }))
}

/// Total utility over all applicants, granted or not.
pub fn counterfactual_profit<T: Scalar>(grants: &[bool], cohort: &Cohort, up: &UtilityParams<T>) -> Result<T> {
    Ok(policy_reward(grants, cohort, up)? * T::of(cohort.len() as f64))
}

/// Group gaps `value(A=0) − value(A=1)`; `None` where a conditioning cell is
/// empty.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FairnessDeltas {
    pub delta_sr: Option<f64>,
    pub delta_fpr: Option<f64>,
    pub delta_fnr: Option<f64>,
    pub delta_acc: Option<f64>,
    /// One of the groups is absent from the cohort.
    pub degenerate: bool,
}

impl FairnessDeltas {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "delta_sr" => self.delta_sr,
            "delta_fpr" => self.delta_fpr,
            "delta_fnr" => self.delta_fnr,
            "delta_acc" => self.delta_acc,
            _ => None,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    hits: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }

    fn rate(self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

fn gap(t: [Tally; 2]) -> Option<f64> {
    Some(t[0].rate()? - t[1].rate()?)
}

pub fn fairness_row(grants: &[bool], cohort: &Cohort) -> Result<FairnessDeltas> {
    check_cover(grants, cohort)?;
    let mut sr = [Tally::default(); 2];
    let mut fpr = [Tally::default(); 2];
    let mut fnr = [Tally::default(); 2];
    let mut acc = [Tally::default(); 2];
    for (&d, app) in grants.iter().zip(&cohort.applicants) {
        let g = usize::from(app.a == 1);
        let repays = app.y_real == 1;
        sr[g].add(d);
        if repays {
            fnr[g].add(!d);
        } else {
            fpr[g].add(d);
        }
        acc[g].add(d == repays);
    }
    Ok(FairnessDeltas {
        delta_sr: gap(sr),
        delta_fpr: gap(fpr),
        delta_fnr: gap(fnr),
        delta_acc: gap(acc),
        degenerate: sr[0].total == 0 || sr[1].total == 0,
    })
}

/// Cumulative profit divided by cumulative budget, quarter by quarter.
pub fn normalize_profit<T: Scalar>(profits: &[T], budgets: &[usize]) -> Result<Vec<T>> {
    if profits.len() != budgets.len() {
        return Err(SimError::contract(format!(
            "{} profits for {} budgets",
            profits.len(),
            budgets.len()
        )));
    }
    let mut cum_profit = T::zero();
    let mut cum_budget = 0usize;
    profits
        .iter()
        .zip(budgets)
        .map(|(&p, &b)| {
            cum_profit = cum_profit + p;
            cum_budget += b;
            if cum_budget == 0 {
                return Err(SimError::contract("cumulative budget is zero"));
            }
            Ok(cum_profit / T::of(cum_budget as f64))
        })
        .collect()
}

/// One quarter's evaluation of a method.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricRow {
    pub delta_sr: Option<f64>,
    pub delta_fpr: Option<f64>,
    pub delta_fnr: Option<f64>,
    pub delta_acc: Option<f64>,
    pub profit_quarter: f64,
    pub profit_cum_norm: Option<f64>,
    pub n_granted: usize,
    pub n_explored: usize,
}

impl MetricRow {
    pub fn with_fairness(mut self, f: &FairnessDeltas) -> Self {
        self.delta_sr = f.delta_sr;
        self.delta_fpr = f.delta_fpr;
        self.delta_fnr = f.delta_fnr;
        self.delta_acc = f.delta_acc;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::Applicant;
    use proptest::prelude::*;

    fn applicant(id: usize, a: u8, y: u8) -> Applicant {
        Applicant {
            id,
            a,
            r_latent: 0.0,
            q: 0,
            s_latent: 0.0,
            y_real: y,
            r_obs: 0.0,
            // opposite of the truth, so any leak into metrics would show
            y_obs: 1 - y,
        }
    }

    fn cohort(cells: &[(u8, u8)]) -> Cohort {
        Cohort {
            applicants: cells
                .iter()
                .enumerate()
                .map(|(i, &(a, y))| applicant(i, a, y))
                .collect(),
            quarter_index: 2,
        }
    }

    const UP: UtilityParams<f64> = UtilityParams {
        gain: 0.4,
        loss: 1.0,
        alpha_sharp: 10.0,
    };

    #[test]
    fn utility_quadrants() {
        assert_eq!(utility(true, true, 0.4, 1.0), 0.4);
        assert_eq!(utility(true, false, 0.4, 1.0), -1.0);
        assert_eq!(utility(false, true, 0.4, 1.0), -1.0);
        assert_eq!(utility(false, false, 0.4, 1.0), 0.4);
        assert_eq!(utility(false, false, 0.4f32, 1.0), 0.4f32);
    }

    #[test]
    fn oracle_and_anti_oracle_rewards() {
        let c = cohort(&[(0, 1), (1, 0), (1, 1), (0, 0), (1, 1)]);
        let oracle = oracle_grants(&c);
        let anti: Vec<bool> = oracle.iter().map(|d| !d).collect();
        let r_star = policy_reward(&oracle, &c, &UP).unwrap();
        let r_anti = policy_reward(&anti, &c, &UP).unwrap();
        assert!((r_star - 0.4).abs() < 1e-15);
        assert!((r_anti + 1.0).abs() < 1e-15);
        assert_eq!(regret(r_star, r_star).unwrap(), 0.0);
        assert!((regret(r_anti, r_star).unwrap() - 1.4).abs() < 1e-15);
        assert!(regret(0.5, 0.4).is_err());
        assert_eq!(regret(0.4 + 1e-13, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn profit_counts_only_granted_loans() {
        let c = cohort(&[(0, 1), (1, 0), (1, 1), (0, 0)]);
        let grants = [true, true, false, false];
        assert!((realized_profit(&grants, &c, &UP).unwrap() + 0.6).abs() < 1e-15);
        // 0.4 − 1 − 1 + 0.4
        assert!((counterfactual_profit(&grants, &c, &UP).unwrap() + 1.2).abs() < 1e-12);
    }

    #[test]
    fn grant_everyone_has_no_gaps() {
        let c = cohort(&[(0, 1), (0, 0), (1, 1), (1, 0), (1, 1)]);
        let f = fairness_row(&[true; 5], &c).unwrap();
        assert_eq!(f.delta_sr, Some(0.0));
        assert_eq!(f.delta_fpr, Some(0.0));
        assert_eq!(f.delta_fnr, Some(0.0));
    }

    #[test]
    fn grant_only_minority() {
        let c = cohort(&[(0, 1), (0, 0), (1, 1), (1, 0)]);
        let grants: Vec<bool> = c.applicants.iter().map(|a| a.a == 0).collect();
        assert_eq!(fairness_row(&grants, &c).unwrap().delta_sr, Some(1.0));
    }

    #[test]
    fn eight_cell_cohort_by_hand() {
        // One applicant per (A, y_real, granted) cell. Per group:
        // SR = 2/4, FPR = 1/2 (granted among y=0), FNR = 1/2 (denied among
        // y=1), Acc = 2/4 (granted∧y=1 plus denied∧y=0).
        let mut cells = Vec::new();
        let mut grants = Vec::new();
        for a in 0..2u8 {
            for y in 0..2u8 {
                for d in [false, true] {
                    cells.push((a, y));
                    grants.push(d);
                }
            }
        }
        let f = fairness_row(&grants, &cohort(&cells)).unwrap();
        assert_eq!(f.delta_sr, Some(0.0));
        assert_eq!(f.delta_fpr, Some(0.0));
        assert_eq!(f.delta_fnr, Some(0.0));
        assert_eq!(f.delta_acc, Some(0.0));
        assert!(!f.degenerate);
    }

    #[test]
    fn asymmetric_cohort_by_hand() {
        // A=0: (y1,g) (y1,d) (y0,g)   A=1: (y1,g) (y0,d) (y0,d)
        let c = cohort(&[(0, 1), (0, 1), (0, 0), (1, 1), (1, 0), (1, 0)]);
        let grants = [true, false, true, true, false, false];
        let f = fairness_row(&grants, &c).unwrap();
        assert_eq!(f.delta_sr, Some(2.0 / 3.0 - 1.0 / 3.0));
        assert_eq!(f.delta_fpr, Some(1.0 - 0.0));
        assert_eq!(f.delta_fnr, Some(0.5 - 0.0));
        assert_eq!(f.delta_acc, Some(1.0 / 3.0 - 1.0));
    }

    #[test]
    fn empty_cells_are_missing_not_zero() {
        let c = cohort(&[(0, 1), (0, 1), (1, 1), (1, 0)]);
        let f = fairness_row(&[true, false, true, false], &c).unwrap();
        assert_eq!(f.delta_fpr, None);
        assert!(f.delta_sr.is_some());
        let only_one_group = cohort(&[(1, 1), (1, 0)]);
        let f = fairness_row(&[true, false], &only_one_group).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.delta_sr, None);
    }

    #[test]
    fn metrics_ignore_observed_labels() {
        let c = cohort(&[(0, 1), (0, 0), (1, 1), (1, 0), (0, 1)]);
        let mut flipped = c.clone();
        for a in &mut flipped.applicants {
            a.y_obs = 1 - a.y_obs;
        }
        let g = [true, false, false, true, true];
        assert_eq!(fairness_row(&g, &c).unwrap(), fairness_row(&g, &flipped).unwrap());
    }

    #[test]
    fn normalized_profit_examples() {
        // every loan repays and grants equal budget: 0.4 per unit budget
        let budgets = [10usize, 20, 5];
        let profits: Vec<f64> = budgets.iter().map(|&b| 0.4 * b as f64).collect();
        for v in normalize_profit(&profits, &budgets).unwrap() {
            assert!((v - 0.4).abs() < 1e-15);
        }
        assert_eq!(normalize_profit(&[0.0, 0.0], &[3, 4]).unwrap(), vec![0.0, 0.0]);
        assert!(normalize_profit(&[1.0], &[0]).is_err());
        assert!(normalize_profit(&[1.0, 2.0], &[1]).is_err());
    }

    fn cohort_strategy() -> impl Strategy<Value = (Vec<(u8, u8)>, Vec<bool>)> {
        (2usize..80).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..2, 0u8..2), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn group_swap_negates_every_delta((cells, grants) in cohort_strategy()) {
            let c = cohort(&cells);
            let swapped = cohort(&cells.iter().map(|&(a, y)| (1 - a, y)).collect::<Vec<_>>());
            let f = fairness_row(&grants, &c).unwrap();
            let s = fairness_row(&grants, &swapped).unwrap();
            for m in ["delta_sr", "delta_fpr", "delta_fnr", "delta_acc"] {
                prop_assert_eq!(f.get(m).map(|v| -v), s.get(m));
            }
        }

        #[test]
        fn no_policy_beats_the_oracle((cells, grants) in cohort_strategy()) {
            let c = cohort(&cells);
            let r = policy_reward(&grants, &c, &UP).unwrap();
            let star = oracle_reward(&c, &UP).unwrap();
            prop_assert!(regret(r, star).unwrap() >= 0.0);
        }

        #[test]
        fn normalization_is_scale_free(
            profits in prop::collection::vec(-50.0f64..50.0, 1..10),
            k in 1usize..6,
        ) {
            let budgets: Vec<usize> = (0..profits.len()).map(|i| i + 1).collect();
            let scaled_p: Vec<f64> = profits.iter().map(|p| p * k as f64).collect();
            let scaled_b: Vec<usize> = budgets.iter().map(|b| b * k).collect();
            let a = normalize_profit(&profits, &budgets).unwrap();
            let b = normalize_profit(&scaled_p, &scaled_b).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
