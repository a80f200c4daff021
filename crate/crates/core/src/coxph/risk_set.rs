use crate::error::{Error, Result};

/// Subjects ordered by descending time and grouped by tied time, so the risk
/// set `{j : t_j >= t_i}` of every group is a prefix of `order`.
#[derive(Debug, Clone)]
pub struct RiskSetIndex {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order`, one per distinct time, descending.
    groups: Vec<(usize, usize)>,
    events: Vec<bool>,
    event_count: usize,
}

impl RiskSetIndex {
    pub fn new(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::dim(format!(
                "{} times but {} event flags",
                times.len(),
                events.len()
            )));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || times[order[k]] != times[order[start]] {
                groups.push((start, k));
                start = k;
            }
        }
        Ok(Self {
            order,
            groups,
            events: events.to_vec(),
            event_count: events.iter().filter(|&&e| e).count(),
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.event_count
    }

    /// Breslow negative log partial likelihood
    /// `-sum_events [h_i - log sum_{t_j >= t_i} exp(h_j)]` and its gradient
    /// with respect to every `h_j`.
    ///
    /// Exponentials are taken relative to `max h`, so the log-sum-exp terms
    /// never overflow.
    pub fn negative_log_likelihood(&self, log_risk: &[f64]) -> Result<(f64, Vec<f64>)> {
        if log_risk.len() != self.len() {
            return Err(Error::dim(format!(
                "{} log-risks for {} subjects",
                log_risk.len(),
                self.len()
            )));
        }
        if self.event_count == 0 {
            return Err(Error::NoEvents);
        }
        if let Some(index) = log_risk.iter().position(|h| !h.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "log-risk".into(),
            });
        }
        let shift = log_risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_risk.iter().map(|h| (h - shift).exp()).collect();

        let mut loss = 0.0;
        let mut risk_sum = 0.0;
        // d_g / S_g for each group, in descending-time order.
        let mut inv_weights = Vec::with_capacity(self.groups.len());
        for &(start, end) in &self.groups {
            let members = &self.order[start..end];
            risk_sum += members.iter().map(|&j| scaled[j]).sum::<f64>();
            let log_denominator = shift + risk_sum.ln();
            let mut deaths = 0usize;
            for &i in members.iter().filter(|&&i| self.events[i]) {
                loss += log_denominator - log_risk[i];
                deaths += 1;
            }
            inv_weights.push(deaths as f64 / risk_sum);
        }

        // Subject j sits in the risk set of every group with time <= t_j.
        let mut grad = vec![0.0; self.len()];
        let mut acc = 0.0;
        for (&(start, end), &w) in self.groups.iter().zip(&inv_weights).rev() {
            acc += w;
            for &j in &self.order[start..end] {
                grad[j] = scaled[j] * acc - if self.events[j] { 1.0 } else { 0.0 };
            }
        }
        Ok((loss, grad))
    }

    /// Breslow cumulative baseline hazard: at each distinct event time `t_k`
    /// the increment is `d_k / sum_{t_j >= t_k} exp(h_j)`. Returns ascending
    /// `(event_times, cumulative_hazard)`.
    pub fn breslow(&self, times: &[f64], log_risk: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if log_risk.len() != self.len() || times.len() != self.len() {
            return Err(Error::dim("breslow inputs differ in length"));
        }
        if self.event_count == 0 {
            return Err(Error::NoEvents);
        }
        let shift = log_risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut risk_sum = 0.0;
        let mut increments = Vec::new();
        for &(start, end) in &self.groups {
            let members = &self.order[start..end];
            risk_sum += members
                .iter()
                .map(|&j| (log_risk[j] - shift).exp())
                .sum::<f64>();
            let deaths = members.iter().filter(|&&i| self.events[i]).count();
            if deaths > 0 {
                increments.push((times[members[0]], deaths as f64 * (-shift).exp() / risk_sum));
            }
        }
        increments.reverse();
        let mut cumulative = 0.0;
        let (event_times, hazard) = increments
            .into_iter()
            .map(|(t, inc)| {
                cumulative += inc;
                (t, cumulative)
            })
            .unzip();
        Ok((event_times, hazard))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, Rng};

    /// Direct O(n^2) evaluation over explicit risk sets.
    fn brute_force(times: &[f64], events: &[bool], h: &[f64]) -> f64 {
        let mut loss = 0.0;
        for i in 0..times.len() {
            if events[i] {
                let s: f64 = (0..times.len())
                    .filter(|&j| times[j] >= times[i])
                    .map(|j| h[j].exp())
                    .sum();
                loss += s.ln() - h[i];
            }
        }
        loss
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let n = 15;
            let times: Vec<f64> = (0..n)
                .map(|_| (rng.uniform() * 5.0).floor() + 1.0)
                .collect();
            let events: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.6).collect();
            if !events.iter().any(|&e| e) {
                continue;
            }
            let h = rng.normal_vec(n);
            let idx = RiskSetIndex::new(&times, &events).unwrap();
            let (loss, grad) = idx.negative_log_likelihood(&h).unwrap();
            assert!((loss - brute_force(&times, &events, &h)).abs() < 1e-10);
            let fd = finite_diff_grad(|x| brute_force(&times, &events, x), &h, 1e-5).unwrap();
            assert!(relative_error(&grad, &fd) < 1e-6);
        }
    }

    #[test]
    fn stable_for_large_log_risk() {
        let times = [1.0, 2.0, 3.0];
        let events = [true, true, false];
        let idx = RiskSetIndex::new(&times, &events).unwrap();
        let (loss, grad) = idx
            .negative_log_likelihood(&[1000.0, 1000.0, 1000.0])
            .unwrap();
        assert!((loss - (3f64.ln() + 2f64.ln())).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn no_events() {
        let idx = RiskSetIndex::new(&[1.0, 2.0], &[false, false]).unwrap();
        assert!(matches!(
            idx.negative_log_likelihood(&[0.0, 0.0]),
            Err(Error::NoEvents)
        ));
    }
}
