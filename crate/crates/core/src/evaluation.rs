//! Censored-data metrics: Kaplan-Meier, Harrell's concordance index and the
//! inverse-probability-of-censoring-weighted Brier score.

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Right-continuous non-increasing step function with `S(t) = 1` before the
/// first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvival {
    /// Strictly increasing jump times.
    pub times: Vec<f64>,
    /// Value from each jump time until the next one.
    pub values: Vec<f64>,
}

impl StepSurvival {
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// `S(t-)`, the limit from the left.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Product-limit estimator. With `for_censoring` the event indicators are
/// flipped, giving the censoring survival `G(t)`.
///
/// Subjects are at risk at `t` when their time is `>= t`, so a subject
/// censored at an event time still counts in that event's risk set.
pub fn kaplan_meier(times: &[f64], events: &[bool], for_censoring: bool) -> Result<StepSurvival> {
    if times.is_empty() {
        return Err(Error::invalid(
            "Kaplan-Meier needs at least one observation",
        ));
    }
    if times.len() != events.len() {
        return Err(Error::dim(format!(
            "{} times but {} event flags",
            times.len(),
            events.len()
        )));
    }
    if let Some(i) = times.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::invalid(format!(
            "time {i} must be positive and finite"
        )));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut at_risk = times.len();
    let mut surv = 1.0;
    let mut out = StepSurvival {
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        let mut deaths = 0usize;
        while end < order.len() && times[order[end]] == t {
            if events[order[end]] != for_censoring {
                deaths += 1;
            }
            end += 1;
        }
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / at_risk as f64;
            out.times.push(t);
            out.values.push(surv);
        }
        at_risk -= end - k;
        k = end;
    }
    Ok(out)
}

/// Pair counts behind Harrell's C-index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
}

impl ConcordanceCounts {
    pub fn comparable(&self) -> u64 {
        self.concordant + self.discordant + self.tied_risk
    }

    /// `(concordant + tied / 2) / comparable`.
    pub fn index(&self) -> Result<f64> {
        let comparable = self.comparable();
        if comparable == 0 {
            return Err(Error::NoComparablePairs);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied_risk as f64) / comparable as f64)
    }
}

/// Fenwick tree of counts over risk ranks.
struct RankCounter {
    tree: Vec<u64>,
}

impl RankCounter {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's pair counts in `O(n log n)`.
///
/// A pair `(i, j)` is comparable when `t_i < t_j` and `i` had the event; it
/// is concordant when `risk_i > risk_j`, tied when the risks are equal.
/// Pairs with equal times are never comparable.
pub fn concordance_counts(
    times: &[f64],
    events: &[bool],
    risks: &[f64],
) -> Result<ConcordanceCounts> {
    let n = times.len();
    if events.len() != n || risks.len() != n {
        return Err(Error::dim(
            "times, events and risks must have equal lengths",
        ));
    }
    if let Some(index) = risks.iter().position(|r| r.is_nan()) {
        return Err(Error::NonFinite {
            index,
            context: "risk score".into(),
        });
    }

    // Dense ranks of the risk scores.
    let mut by_risk: Vec<usize> = (0..n).collect();
    by_risk.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]));
    let mut rank = vec![0usize; n];
    let mut distinct = 0;
    for k in 0..n {
        if k > 0 && risks[by_risk[k]] != risks[by_risk[k - 1]] {
            distinct += 1;
        }
        rank[by_risk[k]] = distinct;
    }

    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    // Walk from the latest time down; the tree holds every subject with a
    // strictly later time than the current group.
    let mut later = RankCounter::new(distinct + 1);
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts::default();
    let mut k = 0;
    while k < n {
        let t = times[by_time[k]];
        let mut end = k;
        while end < n && times[by_time[end]] == t {
            end += 1;
        }
        for &i in &by_time[k..end] {
            if events[i] {
                let lower = later.below(rank[i]);
                let lower_or_equal = later.below(rank[i] + 1);
                counts.concordant += lower;
                counts.tied_risk += lower_or_equal - lower;
                counts.discordant += inserted - lower_or_equal;
            }
        }
        for &i in &by_time[k..end] {
            later.add(rank[i]);
            inserted += 1;
        }
        k = end;
    }
    Ok(counts)
}

/// Harrell's concordance index; higher risk should mean earlier death.
pub fn concordance_index(times: &[f64], events: &[bool], risks: &[f64]) -> Result<f64> {
    concordance_counts(times, events, risks)?.index()
}

fn check_survival(s: f64, horizon: f64) -> Result<f64> {
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Numerical(format!(
            "predicted survival at horizon {horizon} is not finite"
        )))
    }
}

/// IPCW Brier score at horizon `t`:
/// `(1/n) sum_i [ S(t|f_i)^2 1{T_i <= t, event_i} / G(T_i-) + (1 - S(t|f_i))^2 1{T_i > t} / G(t) ]`.
pub fn brier_score<P>(
    predictor: P,
    cohort: &Cohort,
    t: f64,
    censor_dist: &StepSurvival,
) -> Result<f64>
where
    P: Fn(&[f64], f64) -> f64,
{
    if cohort.is_empty() {
        return Err(Error::invalid("Brier score on an empty cohort"));
    }
    let g_t = censor_dist.at(t);
    let mut total = 0.0;
    for r in cohort.records() {
        if r.time <= t {
            if r.event {
                let g = censor_dist.left_limit(r.time);
                if g <= 0.0 {
                    return Err(Error::ZeroCensoringWeight { horizon: t });
                }
                let s = check_survival(predictor(&r.features, t), t)?;
                total += s * s / g;
            }
        } else {
            if g_t <= 0.0 {
                return Err(Error::ZeroCensoringWeight { horizon: t });
            }
            let s = check_survival(predictor(&r.features, t), t)?;
            total += (1.0 - s) * (1.0 - s) / g_t;
        }
    }
    Ok(total / cohort.len() as f64)
}

/// Brier score at every grid horizon.
pub fn brier_curve<P>(
    predictor: P,
    cohort: &Cohort,
    censor_dist: &StepSurvival,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>>
where
    P: Fn(&[f64], f64) -> f64,
{
    grid.iter()
        .map(|&t| Ok((t, brier_score(&predictor, cohort, t, censor_dist)?)))
        .collect()
}

/// Trapezoidal integral of a curve divided by its span.
pub fn trapezoid_mean(curve: &[(f64, f64)]) -> Result<f64> {
    check_grid(&curve.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let span = curve[curve.len() - 1].0 - curve[0].0;
    let area: f64 = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum();
    Ok(area / span)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("horizon grid needs at least 2 points"));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "horizon grid must be finite and non-decreasing",
        ));
    }
    if grid[grid.len() - 1] <= grid[0] {
        return Err(Error::invalid("horizon grid has zero span"));
    }
    Ok(())
}

/// Integrated Brier score over `grid`, normalized by the grid span.
pub fn integrated_brier<P>(
    predictor: P,
    cohort: &Cohort,
    censor_dist: &StepSurvival,
    grid: &[f64],
) -> Result<f64>
where
    P: Fn(&[f64], f64) -> f64,
{
    check_grid(grid)?;
    trapezoid_mean(&brier_curve(predictor, cohort, censor_dist, grid)?)
}

/// Evenly spaced quantile levels of the observed event times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 100,
            lower_quantile: 0.05,
            upper_quantile: 0.95,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Horizons at `points` equally spaced quantile levels of the event times
/// between the two bounds.
pub fn horizon_grid(cohort: &Cohort, spec: &GridSpec) -> Result<Vec<f64>> {
    if spec.points < 2
        || !(0.0 <= spec.lower_quantile
            && spec.lower_quantile < spec.upper_quantile
            && spec.upper_quantile <= 1.0)
    {
        return Err(Error::invalid(
            "grid needs >= 2 points and 0 <= lower < upper <= 1",
        ));
    }
    let mut event_times: Vec<f64> = cohort
        .records()
        .iter()
        .filter(|r| r.event)
        .map(|r| r.time)
        .collect();
    if event_times.is_empty() {
        return Err(Error::NoEvents);
    }
    event_times.sort_by(f64::total_cmp);
    let step = (spec.upper_quantile - spec.lower_quantile) / (spec.points - 1) as f64;
    let grid: Vec<f64> = (0..spec.points)
        .map(|k| quantile(&event_times, spec.lower_quantile + step * k as f64))
        .collect();
    check_grid(&grid)?;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub c_index: f64,
    pub integrated_brier: f64,
    pub brier_curve: Vec<(f64, f64)>,
    pub n: usize,
    pub events: usize,
}

/// C-index and Brier metrics for per-record log-risks under a
/// proportional-hazards survival model `S(t) = exp(-Lambda0(t) exp(h))`.
pub fn evaluate_log_risks(
    cohort: &Cohort,
    log_risks: &[f64],
    cumulative_hazard: impl Fn(f64) -> f64,
    grid: &GridSpec,
) -> Result<EvaluationReport> {
    if log_risks.len() != cohort.len() {
        return Err(Error::dim(format!(
            "{} log-risks for {} records",
            log_risks.len(),
            cohort.len()
        )));
    }
    let times = cohort.times();
    let events = cohort.events();
    let c_index = concordance_index(&times, &events, log_risks)?;
    let censor = kaplan_meier(&times, &events, true)?;
    let horizons = horizon_grid(cohort, grid)?;
    // Carry each record's log-risk as its only feature so the predictor is
    // a plain function of (features, t).
    let risk_cohort = cohort.with_features(
        log_risks.iter().map(|&h| vec![h]).collect(),
        vec!["log_risk".to_owned()],
    )?;
    let predictor = |f: &[f64], t: f64| (-cumulative_hazard(t) * f[0].exp()).exp();
    let curve = brier_curve(predictor, &risk_cohort, &censor, &horizons)?;
    Ok(EvaluationReport {
        c_index,
        integrated_brier: trapezoid_mean(&curve)?,
        brier_curve: curve,
        n: cohort.len(),
        events: cohort.event_count(),
    })
}
