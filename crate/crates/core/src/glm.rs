//! Logistic regression fitted by full-batch gradient descent.
//!
//! Two trainers share one model: the usual mean log-loss, and a
//! counterfactual-utility objective that credits denied applicants with
//! their expected outcome under the model. The model also keeps every row it
//! has been trained on so the delta-method information matrix always covers
//! all evidence absorbed so far.

use crate::error::{Result, SimError};
use crate::format::g17;
use crate::linalg::{dot, Matrix};
use crate::scalar::{sigmoid, Scalar};

/// Ridge added to a singular information matrix.
pub const RIDGE_JITTER: f64 = 1e-6;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

pub const DEFAULT_EPOCHS: usize = 40;
pub const DEFAULT_LR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParams<T> {
    /// Profit per unit principal on a repaid loan.
    pub gain: T,
    /// Loss per unit principal on a default.
    pub loss: T,
    /// Sharpness of the soft decision `σ(α(p − τ))`.
    pub alpha_sharp: T,
}

impl<T: Scalar> Default for UtilityParams<T> {
    fn default() -> Self {
        UtilityParams {
            gain: T::of(0.4),
            loss: T::one(),
            alpha_sharp: T::of(10.0),
        }
    }
}

impl<T: Scalar> UtilityParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("gain_percentage", self.gain),
            ("loss", self.loss),
            ("alpha_sharp", self.alpha_sharp),
        ] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(SimError::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    /// `(XᵀWX)⁻¹` over every row seen, with the intercept as the last
    /// coordinate. `None` until the first fit.
    pub xtwx_inv: Option<Matrix<T>>,
    pub train_count: usize,
    /// Set when the last information matrix needed ridge jitter.
    pub jitter_applied: bool,
    /// Per-feature centring. When present, weights and the information
    /// matrix live in centred coordinates.
    pub centre: Option<FeatureCentre<T>>,
    centring: bool,
    seen: Matrix<T>,
}

/// Column means frozen at the first fit. Centring keeps an uncentred
/// binary column from standing in for the intercept under short training.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCentre<T> {
    pub mean: Vec<T>,
}

impl<T: Scalar> FeatureCentre<T> {
    pub fn fit(x: &Matrix<T>) -> Self {
        let n = T::of(x.rows().max(1) as f64);
        let mean = (0..x.cols())
            .map(|j| x.column(j).iter().fold(T::zero(), |a, &v| a + v) / n)
            .collect();
        FeatureCentre { mean }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.mean).map(|(&v, &m)| v - m).collect()
    }

    pub fn apply_all(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::with_cols(x.cols());
        for r in x.iter_rows() {
            out.push_row(&self.apply(r)).expect("same width");
        }
        out
    }
}

impl<T: Scalar> LogisticModel<T> {
    pub fn new(n_features: usize) -> Self {
        LogisticModel {
            weights: vec![T::zero(); n_features],
            intercept: T::zero(),
            xtwx_inv: None,
            train_count: 0,
            jitter_applied: false,
            centre: None,
            centring: false,
            seen: Matrix::with_cols(n_features),
        }
    }

    /// A model that centres its inputs on the means of the first batch it is
    /// fitted on.
    pub fn centred(n_features: usize) -> Self {
        LogisticModel {
            centring: true,
            ..Self::new(n_features)
        }
    }

    /// Maps raw features into the coordinates the weights act on.
    fn prepare(&self, x: &Matrix<T>) -> Option<Matrix<T>> {
        self.centre.as_ref().map(|c| c.apply_all(x))
    }

    pub fn with_params(weights: Vec<T>, intercept: T) -> Self {
        let mut m = Self::new(weights.len());
        m.weights = weights;
        m.intercept = intercept;
        m
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Every row the model has been trained on, in arrival order and in
    /// model coordinates.
    pub fn seen_rows(&self) -> &Matrix<T> {
        &self.seen
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.weights.len() {
            return Err(SimError::contract(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// Linear predictor on already-prepared coordinates.
    fn linear(&self, x: &[T]) -> T {
        dot(&self.weights, x) + self.intercept
    }

    fn linear_raw(&self, x: &[T]) -> T {
        match &self.centre {
            Some(c) => self.linear(&c.apply(x)),
            None => self.linear(x),
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(sigmoid(self.linear_raw(x)))
    }

    pub fn predict_all(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.cols() != self.weights.len() {
            return Err(SimError::contract(format!(
                "matrix has {} columns, model expects {}",
                x.cols(),
                self.weights.len()
            )));
        }
        Ok(x.iter_rows().map(|r| sigmoid(self.linear_raw(r))).collect())
    }

    fn check_training_data(&self, x: &Matrix<T>, y: &[u8]) -> Result<()> {
        if x.rows() != y.len() {
            return Err(SimError::contract(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if x.cols() != self.weights.len() {
            return Err(SimError::contract(format!(
                "matrix has {} columns, model expects {}",
                x.cols(),
                self.weights.len()
            )));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(SimError::contract("labels must be 0 or 1"));
        }
        Ok(())
    }

    /// Mean negative log-likelihood.
    pub fn log_loss(&self, x: &Matrix<T>, y: &[u8]) -> T {
        match self.prepare(x) {
            Some(z) => self.log_loss_prepared(&z, y),
            None => self.log_loss_prepared(x, y),
        }
    }

    fn log_loss_prepared(&self, x: &Matrix<T>, y: &[u8]) -> T {
        let n = T::of(x.rows() as f64);
        x.iter_rows()
            .zip(y)
            .map(|(r, &yi)| {
                // log(1 + e^z) − y·z, computed stably
                let z = self.linear(r);
                let softplus = z.max(T::zero()) + (-z.abs()).exp().ln_1p();
                softplus - if yi == 1 { z } else { T::zero() }
            })
            .fold(T::zero(), |a, b| a + b)
            / n
    }

    /// Gradient of [`LogisticModel::log_loss`] with respect to the weights
    /// in model coordinates; the intercept is last.
    pub fn log_loss_gradient(&self, x: &Matrix<T>, y: &[u8]) -> Vec<T> {
        match self.prepare(x) {
            Some(z) => self.log_loss_gradient_prepared(&z, y),
            None => self.log_loss_gradient_prepared(x, y),
        }
    }

    fn log_loss_gradient_prepared(&self, x: &Matrix<T>, y: &[u8]) -> Vec<T> {
        let d = self.weights.len();
        let mut g = vec![T::zero(); d + 1];
        for (r, &yi) in x.iter_rows().zip(y) {
            let err = sigmoid(self.linear(r)) - T::of(f64::from(yi));
            for j in 0..d {
                g[j] = g[j] + err * r[j];
            }
            g[d] = g[d] + err;
        }
        let n = T::of(x.rows() as f64);
        g.iter_mut().for_each(|v| *v = *v / n);
        g
    }

    /// Gradient descent on mean log-loss, warm-started from the current
    /// parameters. The rows are added to the model's history and the
    /// information matrix is rebuilt over that history.
    pub fn fit_logloss(&mut self, x: &Matrix<T>, y: &[u8], epochs: usize, lr: T) -> Result<()> {
        self.check_training_data(x, y)?;
        if y.is_empty() {
            return Err(SimError::contract("cannot fit on zero rows"));
        }
        if self.train_count == 0 && (y.iter().all(|&v| v == 1) || y.iter().all(|&v| v == 0)) {
            return Err(SimError::contract("first fit needs both classes present"));
        }
        let x = self.prepare_for_fit(x);
        for _ in 0..epochs {
            let g = self.log_loss_gradient_prepared(&x, y);
            self.step(&g, -lr);
        }
        self.absorb(&x)
    }

    /// Freezes the feature means on the first fit and returns the batch in
    /// model coordinates.
    fn prepare_for_fit(&mut self, x: &Matrix<T>) -> Matrix<T> {
        if self.centring && self.centre.is_none() {
            self.centre = Some(FeatureCentre::fit(x));
        }
        self.prepare(x).unwrap_or_else(|| x.clone())
    }

    fn step(&mut self, grad: &[T], scale: T) {
        let d = self.weights.len();
        for (w, &g) in self.weights.iter_mut().zip(grad) {
            *w = *w + scale * g;
        }
        self.intercept = self.intercept + scale * grad[d];
    }

    /// `x` is in model coordinates.
    fn absorb(&mut self, x: &Matrix<T>) -> Result<()> {
        self.seen.extend(x)?;
        self.train_count += x.rows();
        self.refresh_information()
    }

    /// Rebuilds `(XᵀWX)⁻¹` at the current parameters over every seen row.
    pub fn refresh_information(&mut self) -> Result<()> {
        let k = self.weights.len() + 1;
        let mut info = Matrix::zeros(k, k);
        let mut full = vec![T::one(); k];
        for r in self.seen.iter_rows() {
            full[..k - 1].copy_from_slice(r);
            let p = sigmoid(self.linear(r));
            let w = p * (T::one() - p);
            for i in 0..k {
                let wi = w * full[i];
                for j in 0..=i {
                    info[(i, j)] = info[(i, j)] + wi * full[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                info[(j, i)] = info[(i, j)];
            }
        }
        let tol = T::epsilon().sqrt();
        let (mut inv, jitter) = match info.inverse(tol) {
            Some(inv) => (inv, false),
            None => {
                let mut ridged = info.clone();
                for i in 0..k {
                    ridged[(i, i)] = ridged[(i, i)] + T::of(RIDGE_JITTER);
                }
                let inv = ridged
                    .inverse(T::zero())
                    .ok_or_else(|| SimError::contract("information matrix singular even after ridge jitter"))?;
                (inv, true)
            }
        };
        inv.symmetrize();
        self.xtwx_inv = Some(inv);
        self.jitter_applied = jitter;
        Ok(())
    }

    /// Delta-method half-width `z·sqrt(∇pᵀ (XᵀWX)⁻¹ ∇p)` of the predicted
    /// probability at `x`, with `∇p = p(1−p)·[x, 1]`.
    pub fn ci_halfwidth(&self, x: &[T], z: T) -> Result<T> {
        self.check_dim(x)?;
        let inv = self
            .xtwx_inv
            .as_ref()
            .ok_or_else(|| SimError::contract("model has not been fitted"))?;
        let x = match &self.centre {
            Some(c) => c.apply(x),
            None => x.to_vec(),
        };
        let p = sigmoid(self.linear(&x));
        let s = p * (T::one() - p);
        let mut grad: Vec<T> = x.iter().map(|&v| s * v).collect();
        grad.push(s);
        let var = inv.quad_form(&grad).max(T::zero());
        Ok(z * var.sqrt())
    }

    pub fn ci_halfwidths(&self, x: &Matrix<T>, z: T) -> Result<Vec<T>> {
        x.iter_rows().map(|r| self.ci_halfwidth(r, z)).collect()
    }

    /// Mean per-applicant counterfactual utility:
    /// `D(y·g − (1−y)·l) + (1−D)(p·g − (1−p)·l)` with `D = σ(α(p − τ))`.
    pub fn counterfactual_objective(&self, x: &Matrix<T>, y: &[u8], tau: T, up: &UtilityParams<T>) -> T {
        match self.prepare(x) {
            Some(z) => self.cf_objective_prepared(&z, y, tau, up),
            None => self.cf_objective_prepared(x, y, tau, up),
        }
    }

    fn cf_objective_prepared(&self, x: &Matrix<T>, y: &[u8], tau: T, up: &UtilityParams<T>) -> T {
        let n = T::of(x.rows().max(1) as f64);
        x.iter_rows()
            .zip(y)
            .map(|(r, &yi)| {
                let p = sigmoid(self.linear(r));
                let d = sigmoid(up.alpha_sharp * (p - tau));
                let observed = if yi == 1 { up.gain } else { -up.loss };
                let expected = p * up.gain - (T::one() - p) * up.loss;
                d * observed + (T::one() - d) * expected
            })
            .fold(T::zero(), |a, b| a + b)
            / n
    }

    /// Gradient of [`LogisticModel::counterfactual_objective`] through both
    /// the soft decision and the probability; the intercept is last.
    pub fn counterfactual_gradient(&self, x: &Matrix<T>, y: &[u8], tau: T, up: &UtilityParams<T>) -> Vec<T> {
        match self.prepare(x) {
            Some(z) => self.cf_gradient_prepared(&z, y, tau, up),
            None => self.cf_gradient_prepared(x, y, tau, up),
        }
    }

    fn cf_gradient_prepared(&self, x: &Matrix<T>, y: &[u8], tau: T, up: &UtilityParams<T>) -> Vec<T> {
        let d = self.weights.len();
        let mut g = vec![T::zero(); d + 1];
        let gl = up.gain + up.loss;
        for (r, &yi) in x.iter_rows().zip(y) {
            let p = sigmoid(self.linear(r));
            let soft = sigmoid(up.alpha_sharp * (p - tau));
            let observed = if yi == 1 { up.gain } else { -up.loss };
            let expected = p * gl - up.loss;
            // ∂f/∂p, then chain through dp/dz = p(1−p)
            let df_dp = up.alpha_sharp * soft * (T::one() - soft) * (observed - expected) + (T::one() - soft) * gl;
            let coef = df_dp * p * (T::one() - p);
            for j in 0..d {
                g[j] = g[j] + coef * r[j];
            }
            g[d] = g[d] + coef;
        }
        let n = T::of(x.rows().max(1) as f64);
        g.iter_mut().for_each(|v| *v = *v / n);
        g
    }

    /// Gradient ascent on the counterfactual objective, warm-started. A step
    /// that would lower the objective is retried at half the rate, so the
    /// objective never decreases across an epoch.
    #[allow(clippy::too_many_arguments)]
    pub fn fit_counterfactual_utility(
        &mut self,
        x: &Matrix<T>,
        y: &[u8],
        tau: T,
        up: &UtilityParams<T>,
        epochs: usize,
        lr: T,
    ) -> Result<()> {
        self.check_training_data(x, y)?;
        up.validate()?;
        if !(tau > T::zero() && tau < T::one()) {
            return Err(SimError::contract(format!("tau must lie in (0, 1), got {tau}")));
        }
        if y.is_empty() {
            return Err(SimError::contract("cannot fit on zero rows"));
        }
        const MAX_HALVINGS: usize = 30;
        let half = T::of(0.5);
        let x = self.prepare_for_fit(x);
        let x = &x;
        for _ in 0..epochs {
            let before = self.cf_objective_prepared(x, y, tau, up);
            let g = self.cf_gradient_prepared(x, y, tau, up);
            let (w0, b0) = (self.weights.clone(), self.intercept);
            let mut rate = lr;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                self.step(&g, rate);
                if self.cf_objective_prepared(x, y, tau, up) >= before {
                    accepted = true;
                    break;
                }
                self.weights.clone_from(&w0);
                self.intercept = b0;
                rate = rate * half;
            }
            if !accepted {
                break;
            }
        }
        self.absorb(x)
    }

    /// `weights..., intercept, train_count` as one CSV line.
    pub fn checkpoint_row(&self) -> String {
        let mut fields: Vec<String> = self.weights.iter().map(|w| g17(w.as_f64())).collect();
        fields.push(g17(self.intercept.as_f64()));
        fields.push(self.train_count.to_string());
        fields.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    /// Newton-Raphson / IRLS for logistic regression, written directly from
    /// the normal equations as an independent reference.
    fn irls(x: &Matrix<f64>, y: &[u8], iters: usize) -> Vec<f64> {
        let k = x.cols() + 1;
        let mut beta = vec![0.0; k];
        for _ in 0..iters {
            let mut h = Matrix::zeros(k, k);
            let mut g = vec![0.0; k];
            for (r, &yi) in x.iter_rows().zip(y) {
                let mut xf = r.to_vec();
                xf.push(1.0);
                let eta: f64 = xf.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                for i in 0..k {
                    g[i] += (f64::from(yi) - p) * xf[i];
                    for j in 0..k {
                        h[(i, j)] += p * (1.0 - p) * xf[i] * xf[j];
                    }
                }
            }
            let hinv = h.inverse(1e-14).unwrap();
            let delta = hinv.mat_vec(&g);
            for i in 0..k {
                beta[i] += delta[i];
            }
        }
        beta
    }

    fn synthetic(n: usize, seed: u64) -> (Matrix<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Matrix::with_cols(2);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            let p = 1.0 / (1.0 + (-(0.3 + 1.2 * a - 0.8 * b)).exp());
            x.push_row(&[a, b]).unwrap();
            y.push(u8::from(rng.random::<f64>() < p));
        }
        (x, y)
    }

    #[test]
    fn predict_basics() {
        let m = LogisticModel::<f64>::new(2);
        assert_eq!(m.predict(&[3.0, -1.0]).unwrap(), 0.5);
        let m = LogisticModel::with_params(vec![0.0, 0.0], 20.0);
        assert!(m.predict(&[1.0, 1.0]).unwrap() > 0.9999);
        assert!(m.predict(&[1.0]).is_err());
        let m = LogisticModel::with_params(vec![0.7, -0.2], 0.1);
        let mut prev = 0.0;
        for i in 0..50 {
            let p = m.predict(&[i as f64 * 0.3 - 5.0, 1.0]).unwrap();
            assert!(p >= prev && p > 0.0 && p < 1.0);
            prev = p;
        }
    }

    #[test]
    fn log_loss_decreases_every_epoch_on_separable_pair() {
        let x = mat(&[vec![-1.0], vec![1.0]]);
        let y = [0u8, 1];
        let mut m = LogisticModel::new(1);
        let mut prev = m.log_loss(&x, &y);
        for _ in 0..100 {
            let mut next = m.clone();
            next.fit_logloss(&x, &y, 1, 0.1).unwrap();
            let loss = next.log_loss(&x, &y);
            assert!(loss < prev);
            prev = loss;
            m.weights = next.weights;
            m.intercept = next.intercept;
        }
    }

    #[test]
    fn zero_epochs_leaves_parameters_unchanged() {
        let (x, y) = synthetic(50, 1);
        let mut m = LogisticModel::with_params(vec![0.3, -0.4], 0.2);
        m.fit_logloss(&x, &y, 0, 0.05).unwrap();
        assert_eq!((m.weights.clone(), m.intercept), (vec![0.3, -0.4], 0.2));
        m.fit_counterfactual_utility(&x, &y, 0.5, &UtilityParams::default(), 0, 0.05)
            .unwrap();
        assert_eq!((m.weights.clone(), m.intercept), (vec![0.3, -0.4], 0.2));
    }

    #[test]
    fn gradient_descent_converges_to_irls() {
        let (x, y) = synthetic(200, 7);
        let oracle = irls(&x, &y, 25);
        let mut m = LogisticModel::new(2);
        m.fit_logloss(&x, &y, 4000, 0.5).unwrap();
        let fitted = LogisticModel::with_params(oracle[..2].to_vec(), oracle[2]);
        let p_gd = m.predict_all(&x).unwrap();
        let p_or = fitted.predict_all(&x).unwrap();
        let worst = p_gd.iter().zip(&p_or).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 0.02, "max |dp| = {worst}");
    }

    #[test]
    fn centred_model_reaches_the_same_fit() {
        // Shift the columns far from zero; centring must not change the
        // probabilities the fit converges to.
        let (x0, y) = synthetic(200, 7);
        let mut x = Matrix::with_cols(2);
        for r in x0.iter_rows() {
            x.push_row(&[r[0] + 8.0, r[1] - 3.0]).unwrap();
        }
        let oracle = irls(&x, &y, 25);
        let fitted = LogisticModel::with_params(oracle[..2].to_vec(), oracle[2]);
        let mut m = LogisticModel::centred(2);
        m.fit_logloss(&x, &y, 4000, 0.5).unwrap();
        let centre = m.centre.as_ref().unwrap();
        let expect: f64 = x.column(0).iter().sum::<f64>() / 200.0;
        assert!((centre.mean[0] - expect).abs() < 1e-12);
        let worst = m
            .predict_all(&x)
            .unwrap()
            .iter()
            .zip(&fitted.predict_all(&x).unwrap())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.02, "max |dp| = {worst}");
        // Means are frozen after the first batch.
        let before = m.centre.clone();
        m.fit_logloss(&x.select_rows(&[0, 1, 2]), &y[..3], 1, 0.1).unwrap();
        assert_eq!(m.centre, before);
    }

    #[test]
    fn centred_halfwidth_matches_uncentred_at_same_optimum() {
        // The delta-method band is a property of the fitted probabilities,
        // so a reparametrization by centring must leave it unchanged.
        let (x, y) = synthetic(300, 11);
        let mut raw = LogisticModel::new(2);
        raw.fit_logloss(&x, &y, 6000, 0.5).unwrap();
        let mut cen = LogisticModel::centred(2);
        cen.fit_logloss(&x, &y, 6000, 0.5).unwrap();
        for probe in [[0.0, 0.0], [1.0, -1.5], [-1.7, 0.4]] {
            let a = raw.ci_halfwidth(&probe, Z_95).unwrap();
            let b = cen.ci_halfwidth(&probe, Z_95).unwrap();
            assert!((a - b).abs() < 1e-3 * a.max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn first_fit_requires_both_classes() {
        let x = mat(&[vec![1.0], vec![2.0]]);
        let mut m = LogisticModel::new(1);
        assert!(m.fit_logloss(&x, &[1, 1], 5, 0.1).is_err());
        m.fit_logloss(&x, &[0, 1], 5, 0.1).unwrap();
        m.fit_logloss(&x, &[1, 1], 5, 0.1).unwrap();
        assert_eq!(m.train_count, 4);
        assert_eq!(m.seen_rows().rows(), 4);
    }

    #[test]
    fn shape_mismatches_are_contract_errors() {
        let mut m = LogisticModel::<f64>::new(2);
        let x = mat(&[vec![1.0, 2.0]]);
        assert!(matches!(m.fit_logloss(&x, &[0, 1], 1, 0.1), Err(SimError::Contract(_))));
        assert!(matches!(m.ci_halfwidth(&[1.0, 2.0], 1.96), Err(SimError::Contract(_))));
    }

    #[test]
    fn collinear_features_get_ridge_jitter() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, i as f64 * 0.2]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i % 3 == 0)).collect();
        let mut m = LogisticModel::new(2);
        m.fit_logloss(&mat(&rows), &y, 10, 0.1).unwrap();
        assert!(m.jitter_applied);
        let inv = m.xtwx_inv.as_ref().unwrap();
        assert!(inv.is_symmetric(1e-9));
        assert!(m.ci_halfwidth(&[0.5, 1.0], 1.96).unwrap() >= 0.0);
    }

    #[test]
    fn halfwidth_is_linear_in_z_and_vanishes_at_saturation() {
        let (x, y) = synthetic(300, 3);
        let mut m = LogisticModel::new(2);
        m.fit_logloss(&x, &y, 500, 0.5).unwrap();
        let probe = [0.4, -0.3];
        let d1 = m.ci_halfwidth(&probe, 1.0).unwrap();
        let d2 = m.ci_halfwidth(&probe, 2.0).unwrap();
        assert!(d1 > 0.0);
        assert!((d2 - 2.0 * d1).abs() < 1e-15);
        let far = m.ci_halfwidth(&[200.0, -200.0], Z_95).unwrap();
        assert!(far < 1e-12, "{far}");
    }

    #[test]
    fn information_matrix_is_symmetric_psd() {
        let (x, y) = synthetic(100, 5);
        let mut m = LogisticModel::new(2);
        m.fit_logloss(&x, &y, 100, 0.3).unwrap();
        let inv = m.xtwx_inv.clone().unwrap();
        assert!(inv.is_symmetric(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(inv.quad_form(&v) >= 0.0);
        }
    }

    #[test]
    fn counterfactual_objective_single_applicant() {
        let m = LogisticModel::with_params(vec![0.0], 0.0);
        let x = mat(&[vec![1.0]]);
        let up = UtilityParams {
            gain: 0.4,
            loss: 1.0,
            alpha_sharp: 10.0,
        };
        let v = m.counterfactual_objective(&x, &[1], 0.5, &up);
        assert!((v - 0.05).abs() < 1e-15, "{v}");
    }

    #[test]
    fn sharp_decision_recovers_observed_utility() {
        // p = σ(2) ≈ 0.88 > τ = 0.5
        let m = LogisticModel::with_params(vec![0.0], 2.0);
        let x = mat(&[vec![0.0]]);
        let up = UtilityParams {
            gain: 0.4,
            loss: 1.0,
            alpha_sharp: 1e4,
        };
        assert!((m.counterfactual_objective(&x, &[1], 0.5, &up) - 0.4).abs() < 1e-9);
        assert!((m.counterfactual_objective(&x, &[0], 0.5, &up) + 1.0).abs() < 1e-9);
    }

    fn central_difference(f: impl Fn(&LogisticModel<f64>) -> f64, m: &LogisticModel<f64>, h: f64) -> Vec<f64> {
        let k = m.n_features() + 1;
        (0..k)
            .map(|j| {
                let bump = |delta: f64| {
                    let mut c = m.clone();
                    if j < k - 1 {
                        c.weights[j] += delta;
                    } else {
                        c.intercept += delta;
                    }
                    f(&c)
                };
                (bump(h) - bump(-h)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn counterfactual_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let up = UtilityParams::<f64>::default();
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let x = mat(&rows);
            let y: Vec<u8> = (0..10).map(|_| u8::from(rng.random::<bool>())).collect();
            let m = LogisticModel::with_params(
                (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                rng.random_range(-1.0..1.0),
            );
            let tau = rng.random_range(0.2..0.8);
            let analytic = m.counterfactual_gradient(&x, &y, tau, &up);
            let numeric = central_difference(|c| c.counterfactual_objective(&x, &y, tau, &up), &m, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() < 1e-5, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn counterfactual_trainer_never_lowers_objective() {
        let (x, y) = synthetic(80, 13);
        let up = UtilityParams::default();
        let mut m = LogisticModel::new(2);
        m.fit_logloss(&x, &y, 20, 0.3).unwrap();
        let mut prev = m.counterfactual_objective(&x, &y, 0.6, &up);
        for _ in 0..30 {
            m.fit_counterfactual_utility(&x, &y, 0.6, &up, 1, 5.0).unwrap();
            let now = m.counterfactual_objective(&x, &y, 0.6, &up);
            assert!(now >= prev);
            prev = now;
        }
    }

    #[test]
    fn counterfactual_trainer_rejects_bad_tau() {
        let (x, y) = synthetic(10, 1);
        let mut m = LogisticModel::new(2);
        let up = UtilityParams::default();
        assert!(m.fit_counterfactual_utility(&x, &y, 0.0, &up, 1, 0.1).is_err());
        assert!(m.fit_counterfactual_utility(&x, &y, 1.0, &up, 1, 0.1).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let x = Matrix::<f32>::from_rows(&[vec![-1.0], vec![-0.5], vec![0.5], vec![1.0]]).unwrap();
        let mut m = LogisticModel::<f32>::new(1);
        m.fit_logloss(&x, &[0, 1, 0, 1], 200, 0.5).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(m.ci_halfwidth(&[0.0], Z_95 as f32).unwrap() > 0.0);
    }

    #[test]
    fn checkpoint_row_layout() {
        let mut m = LogisticModel::with_params(vec![0.5, -2.0], 0.25);
        m.train_count = 12;
        assert_eq!(m.checkpoint_row(), "0.5,-2,0.25,12");
    }

    proptest! {
        #[test]
        fn log_loss_gradient_matches_finite_differences(
            w in proptest::collection::vec(-1.5f64..1.5, 2),
            b in -1.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let (x, y) = synthetic(10, seed);
            let m = LogisticModel::with_params(w, b);
            let analytic = m.log_loss_gradient(&x, &y);
            let numeric = central_difference(|c| c.log_loss(&x, &y), &m, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                prop_assert!((a - n).abs() < 1e-5 * (1.0 + n.abs()));
            }
        }

        #[test]
        fn halfwidth_is_never_negative(px in -50.0f64..50.0, py in -50.0f64..50.0) {
            let (x, y) = synthetic(60, 2);
            let mut m = LogisticModel::new(2);
            m.fit_logloss(&x, &y, 50, 0.3).unwrap();
            prop_assert!(m.ci_halfwidth(&[px, py], Z_95).unwrap() >= 0.0);
        }
    }
}
