//! Synthetic proportional-hazards cohorts with a known true log-risk.
//!
//! Event times follow `lambda(t | f) = lambda0(t) * exp(h*(f))` with a Weibull
//! baseline, sampled by inverting the survival function. Censoring times are
//! exponential with a rate calibrated on a pilot sample, and follow-up ends
//! administratively at the upper end of the time range.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Cohort, SurvivalRecord};
use crate::error::{Error, Result};
use crate::numerics::{dot, Rng};

const PILOT_SIZE: usize = 10_000;
const BISECTION_ITERS: usize = 100;
/// A target below the administrative-only censoring fraction by more than
/// this is reported as infeasible.
const CALIBRATION_SLACK: f64 = 0.02;
const TIE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogRiskForm {
    /// `h*(f) = w* . f`
    Linear,
    /// `h*(f) = f1 * f2 + sin(f3)` on the first three features; the
    /// coefficients are ignored.
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullBaseline {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullBaseline {
    /// Cumulative baseline hazard `(t / scale)^shape`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        (t / self.scale).powf(self.shape)
    }

    /// Inverse-transform draw of an event time for log-risk `h`, given
    /// `u` uniform on (0, 1].
    pub fn sample_time(&self, h: f64, u: f64) -> f64 {
        self.scale * (-u.ln() / h.exp()).powf(1.0 / self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub feature_dim: usize,
    pub true_coefficients: Vec<f64>,
    pub log_risk_form: LogRiskForm,
    pub baseline: WeibullBaseline,
    pub target_censor_fraction: f64,
    /// `(min_days, max_days)`: observed times are floored at the minimum and
    /// administratively censored at the maximum.
    pub time_range: (f64, f64),
    pub seed: u64,
    /// Keep ties created by rounding times to whole days instead of
    /// separating them by `1e-6 * rank`.
    pub allow_ties: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            feature_dim: 10,
            true_coefficients: vec![0.0; 10],
            log_risk_form: LogRiskForm::Linear,
            baseline: WeibullBaseline {
                shape: 1.2,
                scale: 1000.0,
            },
            target_censor_fraction: 0.533,
            time_range: (2.0, 4923.0),
            seed: 0,
            allow_ties: false,
        }
    }
}

impl SimConfig {
    /// Linear log-risk with the given coefficients; other fields default.
    pub fn linear(n: usize, true_coefficients: Vec<f64>, seed: u64) -> Self {
        Self {
            n,
            feature_dim: true_coefficients.len(),
            true_coefficients,
            seed,
            ..Self::default()
        }
    }

    pub fn nonlinear(n: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            n,
            feature_dim,
            true_coefficients: vec![0.0; feature_dim],
            log_risk_form: LogRiskForm::Nonlinear,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if self.true_coefficients.len() != self.feature_dim {
            return Err(Error::dim(format!(
                "{} true coefficients for feature_dim {}",
                self.true_coefficients.len(),
                self.feature_dim
            )));
        }
        if self.true_coefficients.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("true coefficients must be finite"));
        }
        if self.log_risk_form == LogRiskForm::Nonlinear && self.feature_dim < 3 {
            return Err(Error::invalid(
                "nonlinear log-risk needs at least 3 features",
            ));
        }
        let WeibullBaseline { shape, scale } = self.baseline;
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("Weibull shape and scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.target_censor_fraction) {
            return Err(Error::invalid("target censor fraction must be in [0, 1)"));
        }
        let (lo, hi) = self.time_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid("time range must satisfy 0 < min < max"));
        }
        Ok(())
    }

    pub fn log_risk(&self, features: &[f64]) -> f64 {
        match self.log_risk_form {
            LogRiskForm::Linear => dot(&self.true_coefficients, features),
            LogRiskForm::Nonlinear => features[0] * features[1] + features[2].sin(),
        }
    }
}

/// True log-risk of every simulated record, in cohort order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ids: Vec<String>,
    pub true_log_risk: Vec<f64>,
    pub true_coefficients: Vec<f64>,
}

impl GroundTruth {
    /// `id,true_log_risk` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
        w.write_record(["id", "true_log_risk"]).map_err(csv_err)?;
        for (id, h) in self.ids.iter().zip(&self.true_log_risk) {
            w.write_record([id.as_str(), &format!("{h}")])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

struct Draw {
    features: Vec<f64>,
    log_risk: f64,
    event_u: f64,
    censor_u: f64,
}

fn draw(config: &SimConfig, rng: &mut Rng) -> Draw {
    let features = rng.normal_vec(config.feature_dim);
    let log_risk = config.log_risk(&features);
    let event_u = rng.uniform_open();
    let censor_u = rng.uniform_open();
    Draw {
        features,
        log_risk,
        event_u,
        censor_u,
    }
}

/// `(observed time, event)` before rounding.
fn observe(config: &SimConfig, d: &Draw, censor_rate: f64) -> (f64, bool) {
    let (min_days, max_days) = config.time_range;
    let t = config.baseline.sample_time(d.log_risk, d.event_u);
    let c = if censor_rate > 0.0 {
        -d.censor_u.ln() / censor_rate
    } else {
        f64::INFINITY
    };
    let (time, event) = if t <= c { (t, true) } else { (c, false) };
    if time > max_days {
        (max_days, false)
    } else {
        (time.max(min_days), event)
    }
}

/// Exponential censoring rate whose realized censor fraction on a pilot
/// sample matches the target. The pilot reuses its uniforms across rates so
/// the fraction is monotone in the rate.
fn calibrate_censor_rate(config: &SimConfig, rng: &Rng) -> Result<f64> {
    let target = config.target_censor_fraction;
    let mut pilot_rng = rng.substream(1);
    let pilot: Vec<Draw> = (0..PILOT_SIZE)
        .map(|_| draw(config, &mut pilot_rng))
        .collect();
    let fraction = |rate: f64| {
        pilot.iter().filter(|d| !observe(config, d, rate).1).count() as f64 / PILOT_SIZE as f64
    };

    let administrative = fraction(0.0);
    if administrative > target + CALIBRATION_SLACK {
        return Err(Error::Numerical(format!(
            "infeasible censoring target {target}: administrative censoring alone gives {administrative:.3}"
        )));
    }
    if administrative >= target {
        return Ok(0.0);
    }

    let mut lo = 0.0;
    let mut hi = 1.0 / config.baseline.scale;
    let mut doublings = 0;
    while fraction(hi) < target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Numerical(format!(
                "infeasible censoring target {target}"
            )));
        }
    }
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws a cohort and its ground truth. Fully determined by `config`.
///
/// Features are standard normal. Observed times are rounded to whole days;
/// unless `allow_ties` is set, records sharing a rounded time are separated
/// by `1e-6 * rank` in record order.
pub fn simulate_cohort(config: &SimConfig) -> Result<(Cohort, GroundTruth)> {
    config.validate()?;
    let names = Cohort::default_feature_names(config.feature_dim, "f");
    if config.n == 0 {
        return Ok((
            Cohort::new(Vec::new(), names)?,
            GroundTruth {
                ids: Vec::new(),
                true_log_risk: Vec::new(),
                true_coefficients: config.true_coefficients.clone(),
            },
        ));
    }

    let rng = Rng::new(config.seed);
    let rate = calibrate_censor_rate(config, &rng)?;
    let mut main = rng.substream(0);

    let width = config.n.to_string().len();
    let mut records = Vec::with_capacity(config.n);
    let mut log_risks = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let d = draw(config, &mut main);
        let (time, event) = observe(config, &d, rate);
        let time = time.round().max(config.time_range.0.ceil());
        log_risks.push(d.log_risk);
        records.push(SurvivalRecord {
            id: format!("sim{i:0width$}"),
            time,
            event,
            features: d.features,
        });
    }

    if !config.allow_ties {
        let rounded: Vec<f64> = records.iter().map(|r| r.time).collect();
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| rounded[a].total_cmp(&rounded[b]).then(a.cmp(&b)));
        let mut rank = 0usize;
        for k in 1..order.len() {
            if rounded[order[k]] == rounded[order[k - 1]] {
                rank += 1;
                records[order[k]].time = rounded[order[k]] + rank as f64 * TIE_STEP;
            } else {
                rank = 0;
            }
        }
    }

    let ids = records.iter().map(|r| r.id.clone()).collect();
    let cohort = Cohort::new(records, names)?;
    Ok((
        cohort,
        GroundTruth {
            ids,
            true_log_risk: log_risks,
            true_coefficients: config.true_coefficients.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn censor_fraction_near_target() {
        let cfg = SimConfig {
            n: 100,
            target_censor_fraction: 0.533,
            seed: 1,
            ..SimConfig::linear(100, vec![0.5, -0.5, 0.0], 1)
        };
        let (c, _) = simulate_cohort(&cfg).unwrap();
        assert!(
            (c.censored_fraction() - 0.533).abs() < 0.10,
            "{}",
            c.censored_fraction()
        );
    }

    #[test]
    fn large_sample_censor_fraction_tracks_target() {
        for &target in &[0.1, 0.3, 0.533, 0.8] {
            let cfg = SimConfig {
                target_censor_fraction: target,
                ..SimConfig::linear(5000, vec![0.7, -0.3], 9)
            };
            let (c, _) = simulate_cohort(&cfg).unwrap();
            assert!(
                (c.censored_fraction() - target).abs() < 0.03,
                "target {target}: {}",
                c.censored_fraction()
            );
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig::linear(200, vec![1.0, -1.0, 0.25], 42);
        let (a, ta) = simulate_cohort(&cfg).unwrap();
        let (b, tb) = simulate_cohort(&cfg).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(ta, tb);
        let (c, _) = simulate_cohort(&SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_cohort_is_not_an_error() {
        let (c, t) = simulate_cohort(&SimConfig::linear(0, vec![1.0], 0)).unwrap();
        assert!(c.is_empty());
        assert!(t.true_log_risk.is_empty());
    }

    #[test]
    fn times_distinct_and_in_range() {
        let cfg = SimConfig::linear(3000, vec![1.5, -1.0], 5);
        let (c, truth) = simulate_cohort(&cfg).unwrap();
        let mut t = c.times();
        assert!(t.iter().all(|&x| (2.0..4924.0).contains(&x)));
        t.sort_by(f64::total_cmp);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(truth.true_log_risk.len(), c.len());
        for (r, h) in c.records().iter().zip(&truth.true_log_risk) {
            assert!((cfg.log_risk(&r.features) - h).abs() < 1e-15);
        }
    }

    #[test]
    fn ties_kept_when_allowed() {
        let cfg = SimConfig {
            allow_ties: true,
            ..SimConfig::linear(3000, vec![1.0], 5)
        };
        let (c, _) = simulate_cohort(&cfg).unwrap();
        assert!(c.times().iter().all(|t| t.fract() == 0.0));
        let mut t = c.times();
        t.sort_by(f64::total_cmp);
        assert!(t.windows(2).any(|w| w[0] == w[1]));
    }

    #[test]
    fn nonlinear_form() {
        let cfg = SimConfig::nonlinear(50, 4, 3);
        let (c, truth) = simulate_cohort(&cfg).unwrap();
        for (r, h) in c.records().iter().zip(&truth.true_log_risk) {
            let f = &r.features;
            assert_eq!(*h, f[0] * f[1] + f[2].sin());
        }
        assert!(simulate_cohort(&SimConfig::nonlinear(10, 2, 0)).is_err());
    }

    #[test]
    fn infeasible_calibration() {
        // Scale far beyond the follow-up window: nearly everyone is still
        // alive at the administrative cutoff.
        let cfg = SimConfig {
            baseline: WeibullBaseline {
                shape: 1.0,
                scale: 1e7,
            },
            target_censor_fraction: 0.3,
            ..SimConfig::linear(10, vec![0.0], 0)
        };
        assert!(simulate_cohort(&cfg).is_err());
    }

    #[test]
    fn invalid_configs() {
        let base = SimConfig::linear(10, vec![1.0, 2.0], 0);
        assert!(simulate_cohort(&SimConfig {
            feature_dim: 3,
            ..base.clone()
        })
        .is_err());
        assert!(simulate_cohort(&SimConfig {
            target_censor_fraction: 1.0,
            ..base.clone()
        })
        .is_err());
        assert!(simulate_cohort(&SimConfig {
            time_range: (5.0, 1.0),
            ..base.clone()
        })
        .is_err());
        assert!(simulate_cohort(&SimConfig {
            baseline: WeibullBaseline {
                shape: 0.0,
                scale: 1.0
            },
            ..base
        })
        .is_err());
    }

    #[test]
    fn ground_truth_csv() {
        let (_, t) = simulate_cohort(&SimConfig::linear(3, vec![1.0], 0)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,true_log_risk\nsim0,"));
        assert_eq!(text.lines().count(), 4);
    }
}
