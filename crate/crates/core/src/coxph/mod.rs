//! Linear Cox proportional-hazards model: the Breslow partial likelihood,
//! a ridge-regularized Adam fit, the Breslow baseline hazard, and risk and
//! survival prediction.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::numerics::{dot, AdamConfig, AdamState};

mod risk_set;

pub use risk_set::RiskSetIndex;

pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Why the optimizer stopped.
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub coefficients: Vec<f64>,
    pub ridge_lambda: f64,
    pub feature_names: Vec<String>,
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineHazard>,
}

impl CoxModel {
    /// An unfitted model with the given coefficients.
    pub fn from_coefficients(coefficients: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if coefficients.len() != feature_names.len() {
            return Err(Error::dim("coefficient and feature-name counts differ"));
        }
        if let Some(index) = coefficients.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "Cox coefficient".into(),
            });
        }
        Ok(Self {
            coefficients,
            ridge_lambda: 0.0,
            feature_names,
            diagnostics: FitDiagnostics {
                final_loss: f64::NAN,
                iterations: 0,
                converged: false,
                message: "not fitted".into(),
            },
            baseline: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn with_baseline(mut self, baseline: BaselineHazard) -> Self {
        self.baseline = Some(baseline);
        self
    }
}

/// Step-function cumulative baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// Strictly increasing distinct event times.
    pub event_times: Vec<f64>,
    /// Non-decreasing, same length as `event_times`.
    pub cumulative_hazard: Vec<f64>,
}

impl BaselineHazard {
    /// Breslow estimator from arbitrary log-risks, shared by the linear and
    /// network models.
    pub fn from_log_risks(times: &[f64], events: &[bool], log_risks: &[f64]) -> Result<Self> {
        let index = RiskSetIndex::new(times, events)?;
        let (event_times, cumulative_hazard) = index.breslow(times, log_risks)?;
        Ok(Self {
            event_times,
            cumulative_hazard,
        })
    }

    /// `Lambda0(t)`: right-continuous, zero before the first event time.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative_hazard[k - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxFitConfig {
    pub ridge_lambda: f64,
    pub max_iters: usize,
    /// Relative loss change below which the fit counts as converged.
    pub tolerance: f64,
    pub learning_rate: f64,
}

impl Default for CoxFitConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: DEFAULT_RIDGE,
            max_iters: 20_000,
            tolerance: 1e-9,
            learning_rate: AdamConfig::NETWORK.learning_rate,
        }
    }
}

/// Cohort-bound objective: design matrix and risk-set order are built once
/// and reused across evaluations.
#[derive(Debug, Clone)]
pub struct CoxObjective {
    design: Array2<f64>,
    // Row-major copy of the transpose for the gradient product.
    design_t: Array2<f64>,
    index: RiskSetIndex,
    ridge_lambda: f64,
}

impl CoxObjective {
    pub fn new(cohort: &Cohort, ridge_lambda: f64) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::invalid("cohort is empty"));
        }
        if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "ridge lambda must be non-negative, got {ridge_lambda}"
            )));
        }
        let index = RiskSetIndex::new(&cohort.times(), &cohort.events())?;
        if index.event_count() == 0 {
            return Err(Error::NoEvents);
        }
        let design = cohort.feature_matrix();
        let design_t = design.t().as_standard_layout().into_owned();
        Ok(Self {
            design,
            design_t,
            index,
            ridge_lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    /// Loss and gradient at `w`.
    pub fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        if w.len() != self.dim() {
            return Err(Error::dim(format!(
                "{} coefficients for {} features",
                w.len(),
                self.dim()
            )));
        }
        let h = self.design.dot(&ArrayView1::from(w));
        let (nll, d_h) = self
            .index
            .negative_log_likelihood(h.as_slice().expect("contiguous"))?;
        let grad = self.design_t.dot(&Array1::from(d_h));
        let penalty: f64 = w.iter().map(|x| x * x).sum::<f64>() * self.ridge_lambda;
        let grad = grad
            .iter()
            .zip(w)
            .map(|(g, x)| g + 2.0 * self.ridge_lambda * x)
            .collect();
        Ok((nll + penalty, grad))
    }
}

/// Negative log partial likelihood (Breslow ties) of the linear log-risk
/// `h(f) = w . f`, plus `ridge_lambda * |w|^2`, with its exact gradient.
pub fn cox_nll(w: &[f64], cohort: &Cohort, ridge_lambda: f64) -> Result<(f64, Vec<f64>)> {
    CoxObjective::new(cohort, ridge_lambda)?.evaluate(w)
}

/// Plateau length (iterations without a new best loss) that halves the
/// learning rate.
const PLATEAU_PATIENCE: usize = 25;
/// Iterations over which the relative loss change is measured.
const CONVERGENCE_WINDOW: usize = 100;

/// Fits `w` from zero. See [`fit_coxph_from`].
pub fn fit_coxph(cohort: &Cohort, config: &CoxFitConfig) -> Result<CoxModel> {
    fit_coxph_from(cohort, config, &vec![0.0; cohort.feature_dim()])
}

/// Full-batch Adam on [`cox_nll`] from `init`.
///
/// Constant-step Adam settles into an oscillation of order the learning rate
/// around the optimum, so the step is halved whenever the loss has not
/// improved on its best value for a while. Near the optimum single Adam steps
/// change the loss very little, so convergence is judged on the relative
/// change of the best loss across a window of iterations. The lowest-loss
/// iterate is returned.
pub fn fit_coxph_from(cohort: &Cohort, config: &CoxFitConfig, init: &[f64]) -> Result<CoxModel> {
    let objective = CoxObjective::new(cohort, config.ridge_lambda)?;
    if init.len() != objective.dim() {
        return Err(Error::dim(
            "initial coefficients do not match feature count",
        ));
    }
    let mut adam = AdamState::new(
        objective.dim(),
        AdamConfig::NETWORK.with_learning_rate(config.learning_rate),
    );
    let mut w = init.to_vec();
    let mut best_w = w.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0;
    // Best loss at the end of each of the last `CONVERGENCE_WINDOW` steps.
    let mut history = std::collections::VecDeque::with_capacity(CONVERGENCE_WINDOW + 1);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let (loss, grad) = objective.evaluate(&w)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "Cox fit diverged at iteration {iterations}"
            )));
        }
        if loss < best_loss {
            best_loss = loss;
            best_w.clone_from(&w);
            since_best = 0;
        } else {
            since_best += 1;
        }

        history.push_back(best_loss);
        if history.len() > CONVERGENCE_WINDOW {
            let old = history.pop_front().expect("nonempty");
            if (old - best_loss) / best_loss.abs().max(f64::MIN_POSITIVE) < config.tolerance {
                converged = true;
                break;
            }
        }

        if since_best >= PLATEAU_PATIENCE {
            adam.hyper.learning_rate *= 0.5;
            w.clone_from(&best_w);
            since_best = 0;
        } else {
            adam.step(&mut w, &grad)?;
        }
        iterations += 1;
    }

    let (final_loss, _) = objective.evaluate(&best_w)?;
    let message = if converged {
        format!(
            "relative loss change below {:e} over {CONVERGENCE_WINDOW} iterations",
            config.tolerance
        )
    } else {
        format!(
            "stopped at max_iters = {} before reaching tolerance",
            config.max_iters
        )
    };
    Ok(CoxModel {
        coefficients: best_w,
        ridge_lambda: config.ridge_lambda,
        feature_names: cohort.feature_names().to_vec(),
        diagnostics: FitDiagnostics {
            final_loss,
            iterations,
            converged,
            message,
        },
        baseline: None,
    })
}

/// Breslow cumulative baseline hazard for a fitted linear model.
pub fn breslow_baseline(model: &CoxModel, cohort: &Cohort) -> Result<BaselineHazard> {
    if cohort.feature_dim() != model.feature_dim() {
        return Err(Error::dim(format!(
            "model has {} features, cohort {}",
            model.feature_dim(),
            cohort.feature_dim()
        )));
    }
    let h: Vec<f64> = cohort
        .records()
        .iter()
        .map(|r| dot(&model.coefficients, &r.features))
        .collect();
    BaselineHazard::from_log_risks(&cohort.times(), &cohort.events(), &h)
}

/// Linear log-risk `w . f`.
pub fn predict_risk(model: &CoxModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.feature_dim() {
        return Err(Error::dim(format!(
            "{} features for a {}-feature model",
            features.len(),
            model.feature_dim()
        )));
    }
    Ok(dot(&model.coefficients, features))
}

/// `S(t | f) = exp(-Lambda0(t) * exp(h(f)))`.
pub fn predict_survival(
    model: &CoxModel,
    baseline: &BaselineHazard,
    features: &[f64],
    t: f64,
) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid(format!(
            "time must be non-negative, got {t}"
        )));
    }
    let h = predict_risk(model, features)?;
    Ok(survival_from_log_risk(baseline, h, t))
}

pub(crate) fn survival_from_log_risk(baseline: &BaselineHazard, h: f64, t: f64) -> f64 {
    (-baseline.at(t) * h.exp()).exp().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{simulate_cohort, SimConfig, SurvivalRecord};
    use crate::numerics::{finite_diff_grad, relative_error, Rng};

    fn cohort(rows: &[(f64, bool, &[f64])]) -> Cohort {
        let dim = rows.first().map_or(0, |r| r.2.len());
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (t, e, f))| SurvivalRecord {
                id: format!("r{i}"),
                time: *t,
                event: *e,
                features: f.to_vec(),
            })
            .collect();
        Cohort::new(records, Cohort::default_feature_names(dim, "x")).unwrap()
    }

    fn random_cohort(n: usize, d: usize, rng: &mut Rng) -> Cohort {
        let records = (0..n)
            .map(|i| SurvivalRecord {
                id: format!("r{i}"),
                time: 1.0 + rng.uniform() * 100.0,
                event: i == 0 || rng.uniform() < 0.7,
                features: rng.normal_vec(d),
            })
            .collect();
        Cohort::new(records, Cohort::default_feature_names(d, "x")).unwrap()
    }

    #[test]
    fn two_subject_hand_value() {
        let c = cohort(&[(1.0, true, &[1.0]), (2.0, true, &[0.0])]);
        let (loss, grad) = cox_nll(&[0.0], &c, 0.0).unwrap();
        // Subject 1: log(e^0 + e^0) - 0; subject 2: log(1) - 0.
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        // -f_1 + (f_1 + f_2)/2 = -0.5; subject 2 contributes -0 + 0.
        assert!((grad[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_censored_is_an_error() {
        let c = cohort(&[(1.0, false, &[1.0]), (2.0, false, &[0.0])]);
        let err = cox_nll(&[0.0], &c, 0.0).unwrap_err();
        assert!(matches!(err, Error::NoEvents));
        assert!(err.to_string().contains("partial likelihood undefined"));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(20);
        for _ in 0..5 {
            let c = random_cohort(20, 3, &mut rng);
            let w = rng.normal_vec(3);
            let (_, grad) = cox_nll(&w, &c, 0.01).unwrap();
            let fd = finite_diff_grad(|x| cox_nll(x, &c, 0.01).unwrap().0, &w, 1e-5).unwrap();
            assert!(relative_error(&grad, &fd) < 1e-4);
        }
    }

    #[test]
    fn invariant_under_feature_centering() {
        let mut rng = Rng::new(21);
        let c = random_cohort(30, 4, &mut rng);
        let w = rng.normal_vec(4);
        let x = c.feature_matrix();
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let centered: Vec<Vec<f64>> = x.outer_iter().map(|r| (&r - &mean).to_vec()).collect();
        let cc = c
            .with_features(centered, c.feature_names().to_vec())
            .unwrap();
        let a = cox_nll(&w, &c, 0.0).unwrap().0;
        let b = cox_nll(&w, &cc, 0.0).unwrap().0;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ridge_loss_is_convex_along_chords() {
        let mut rng = Rng::new(22);
        let c = random_cohort(25, 3, &mut rng);
        for _ in 0..20 {
            let w1 = rng.normal_vec(3);
            let w2 = rng.normal_vec(3);
            let f = |w: &[f64]| cox_nll(w, &c, DEFAULT_RIDGE).unwrap().0;
            for &lam in &[0.25, 0.5, 0.75] {
                let mid: Vec<f64> = w1
                    .iter()
                    .zip(&w2)
                    .map(|(a, b)| lam * a + (1.0 - lam) * b)
                    .collect();
                assert!(f(&mid) <= lam * f(&w1) + (1.0 - lam) * f(&w2) + 1e-9);
            }
        }
    }

    #[test]
    fn breslow_single_event() {
        let c = cohort(&[
            (1.0, true, &[0.3]),
            (2.0, false, &[1.0]),
            (3.0, false, &[-2.0]),
        ]);
        let model = CoxModel::from_coefficients(vec![0.0], c.feature_names().to_vec()).unwrap();
        let b = breslow_baseline(&model, &c).unwrap();
        assert_eq!(b.event_times, vec![1.0]);
        assert!((b.at(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.at(0.5), 0.0);
        let s = predict_survival(&model, &b, &[0.3], 1.5).unwrap();
        assert!((s - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((s - 0.716531).abs() < 1e-6);
        assert_eq!(predict_survival(&model, &b, &[0.3], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn breslow_reduces_to_nelson_aalen() {
        for n in 1..=10usize {
            let rows: Vec<(f64, bool, Vec<f64>)> = (0..n)
                .map(|i| (i as f64 + 1.0, true, vec![i as f64]))
                .collect();
            let refs: Vec<(f64, bool, &[f64])> = rows
                .iter()
                .map(|(t, e, f)| (*t, *e, f.as_slice()))
                .collect();
            let c = cohort(&refs);
            let model = CoxModel::from_coefficients(vec![0.0], c.feature_names().to_vec()).unwrap();
            let b = breslow_baseline(&model, &c).unwrap();
            let expected: f64 = (1..=n).map(|k| 1.0 / (n - k + 1) as f64).sum();
            assert!((b.at(n as f64) - expected).abs() < 1e-12);
            assert!(b.cumulative_hazard.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn survival_monotone_in_time_and_risk() {
        let mut rng = Rng::new(23);
        let c = random_cohort(40, 2, &mut rng);
        let model =
            CoxModel::from_coefficients(vec![0.4, -0.2], c.feature_names().to_vec()).unwrap();
        let b = breslow_baseline(&model, &c).unwrap();
        let f = [0.5, 0.5];
        let mut prev = 1.0;
        for k in 0..200 {
            let s = predict_survival(&model, &b, &f, k as f64 * 0.6).unwrap();
            assert!((0.0..=1.0).contains(&s));
            assert!(s <= prev);
            prev = s;
        }
        let t = b.event_times[3];
        let low = predict_survival(&model, &b, &[0.0, 0.0], t).unwrap();
        let high = predict_survival(&model, &b, &[2.0, -1.0], t).unwrap();
        assert!(high < low);
        assert!(predict_survival(&model, &b, &f, -1.0).is_err());
    }

    #[test]
    fn predict_risk_cases() {
        let zero =
            CoxModel::from_coefficients(vec![0.0, 0.0], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(predict_risk(&zero, &[3.0, -7.0]).unwrap(), 0.0);
        let m = CoxModel::from_coefficients(vec![1.0, -2.0], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(predict_risk(&m, &[3.0, 1.0]).unwrap(), 1.0);
        let (f, g) = ([0.3, -1.2], [2.5, 0.7]);
        let sum = [f[0] + g[0], f[1] + g[1]];
        let lhs = predict_risk(&m, &sum).unwrap();
        let rhs = predict_risk(&m, &f).unwrap() + predict_risk(&m, &g).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(predict_risk(&m, &[1.0]).is_err());
    }

    #[test]
    fn constant_feature_gets_zero_weight() {
        let mut cfg = SimConfig::linear(500, vec![0.0, 0.8, -0.5], 31);
        cfg.target_censor_fraction = 0.3;
        let (c, _) = simulate_cohort(&cfg).unwrap();
        let feats: Vec<Vec<f64>> = c
            .records()
            .iter()
            .map(|r| vec![1.0, r.features[1], r.features[2]])
            .collect();
        let c = c.with_features(feats, c.feature_names().to_vec()).unwrap();
        let m = fit_coxph(&c, &CoxFitConfig::default()).unwrap();
        assert!(m.coefficients[0].abs() < 1e-3, "{:?}", m.coefficients);
    }

    #[test]
    fn fit_is_start_independent() {
        let mut cfg = SimConfig::linear(400, vec![0.7, -0.4, 0.2], 32);
        cfg.target_censor_fraction = 0.3;
        let (c, _) = simulate_cohort(&cfg).unwrap();
        let config = CoxFitConfig::default();
        let a = fit_coxph(&c, &config).unwrap();
        let b = fit_coxph_from(&c, &config, &Rng::new(5).normal_vec(3)).unwrap();
        assert!(a.diagnostics.converged && b.diagnostics.converged);
        assert!(
            (a.diagnostics.final_loss - b.diagnostics.final_loss).abs() < 1e-6,
            "{:?} vs {:?}",
            a.diagnostics,
            b.diagnostics
        );
    }

    #[test]
    fn model_json_round_trip() {
        let c = cohort(&[
            (1.0, true, &[0.1, 0.2]),
            (2.0, true, &[0.3, -0.1]),
            (3.0, false, &[0.0, 1.0]),
        ]);
        let m = fit_coxph(
            &c,
            &CoxFitConfig {
                max_iters: 50,
                ..CoxFitConfig::default()
            },
        )
        .unwrap();
        let b = breslow_baseline(&m, &c).unwrap();
        let m = m.with_baseline(b);
        let text = serde_json::to_string(&m).unwrap();
        let back: CoxModel = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
    }
}
