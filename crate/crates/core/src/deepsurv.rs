//! DeepSurv: a multi-layer perceptron trained with the Cox partial
//! likelihood computed inside each mini-batch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{split_cohort, Cohort};
use crate::coxph::{BaselineHazard, RiskSetIndex};
use crate::error::{Error, Result};
use crate::evaluation::concordance_index;
use crate::numerics::{AdamConfig, AdamState, MlpNetwork, Mode, Rng};

/// Hidden widths of the default six-layer network (five hidden layers plus
/// the scalar output).
pub const DEFAULT_HIDDEN: [usize; 5] = [256, 128, 64, 32, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Epochs without a better validation C-index before stopping.
    pub patience: usize,
    /// Share of the training cohort held out for early stopping.
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: AdamConfig::NETWORK.learning_rate,
            dropout: 0.4,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub train_loss: Vec<f64>,
    pub validation_c_index: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSurvModel {
    pub network: MlpNetwork,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
    pub diagnostics: TrainDiagnostics,
    /// Breslow baseline over the training cohort, for survival curves.
    pub baseline: Option<BaselineHazard>,
}

impl DeepSurvModel {
    pub fn from_network(mut network: MlpNetwork, feature_names: Vec<String>) -> Result<Self> {
        if network.output_dim() != 1 {
            return Err(Error::dim("DeepSurv network must have a single output"));
        }
        if network.input_dim() != feature_names.len() {
            return Err(Error::dim("network input does not match feature names"));
        }
        network.set_mode(Mode::Eval);
        Ok(Self {
            network,
            feature_names,
            config: TrainConfig::default(),
            diagnostics: TrainDiagnostics::default(),
            baseline: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }
}

/// Mean negative log partial likelihood over the events of one batch,
/// `-(1/k) sum_events [h_i - log sum_{t_j >= t_i} exp(h_j)]`, and its
/// gradient with respect to each log-risk.
pub fn deepsurv_loss(log_risks: &[f64], times: &[f64], events: &[bool]) -> Result<(f64, Vec<f64>)> {
    if log_risks.len() != times.len() || times.len() != events.len() {
        return Err(Error::dim("log-risks, times and events differ in length"));
    }
    if log_risks.len() < 2 {
        return Err(Error::invalid("batch needs at least 2 subjects"));
    }
    let index = RiskSetIndex::new(times, events)?;
    let k = index.event_count();
    if k == 0 {
        return Err(Error::BatchHasNoEvents);
    }
    let (loss, mut grad) = index.negative_log_likelihood(log_risks)?;
    let scale = 1.0 / k as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Splits a shuffled index order into batches of `batch_size`. A batch
/// without events is merged into the next one; a trailing remainder that is
/// eventless or a single subject joins the last batch.
fn make_batches(order: &[usize], events: &[bool], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    for chunk in order.chunks(batch_size) {
        pending.extend_from_slice(chunk);
        if pending.len() >= 2 && pending.iter().any(|&i| events[i]) {
            batches.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        match batches.last_mut() {
            Some(last) => last.extend(pending),
            None => return Err(Error::BatchHasNoEvents),
        }
    }
    Ok(batches)
}

fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), idx)
}

fn validation_c_index(
    net: &MlpNetwork,
    x: &Array2<f64>,
    times: &[f64],
    events: &[bool],
) -> Result<f64> {
    let h = net.predict(x)?;
    concordance_index(times, events, h.as_slice().expect("contiguous"))
}

/// Trains on `cohort` with mini-batch Adam and early stopping on the
/// validation C-index; returns the weights of the best validation epoch.
pub fn train_deepsurv(cohort: &Cohort, config: &TrainConfig) -> Result<DeepSurvModel> {
    config.validate()?;
    if cohort.len() < 2 * config.batch_size {
        return Err(Error::invalid(format!(
            "need at least {} records for batch size {}, got {}",
            2 * config.batch_size,
            config.batch_size,
            cohort.len()
        )));
    }
    if cohort.event_count() == 0 {
        return Err(Error::NoEvents);
    }

    let rng = Rng::new(config.seed);
    let (train, val) = split_cohort(cohort, 1.0 - config.validation_fraction, config.seed)?;
    let x_train = train.feature_matrix();
    let t_train = train.times();
    let e_train = train.events();
    let x_val = val.feature_matrix();
    let t_val = val.times();
    let e_val = val.events();

    let mut net = MlpNetwork::survival_head(
        cohort.feature_dim(),
        &config.hidden,
        config.dropout,
        &mut rng.substream(1),
    )?;
    let mut adam = AdamState::new(
        net.param_count(),
        AdamConfig::NETWORK.with_learning_rate(config.learning_rate),
    );
    let mut params = net.params();
    let mut shuffle_rng = rng.substream(2);
    let mut dropout_rng = rng.substream(3);

    let mut diagnostics = TrainDiagnostics::default();
    let mut best: Option<(f64, MlpNetwork)> = None;
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        net.set_mode(Mode::Train);
        let order = shuffle_rng.permutation(train.len());
        let batches = make_batches(&order, &e_train, config.batch_size)?;
        let mut epoch_loss = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let xb = gather_rows(&x_train, idx);
            let tb: Vec<f64> = idx.iter().map(|&i| t_train[i]).collect();
            let eb: Vec<bool> = idx.iter().map(|&i| e_train[i]).collect();
            let (out, cache) = net.forward(&xb, &mut dropout_rng)?;
            let (loss, d_h) = deepsurv_loss(out.as_slice().expect("contiguous"), &tb, &eb)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            let d_out = Array2::from_shape_vec((idx.len(), 1), d_h).expect("shape");
            let (grads, _) = net.backward(&cache, &d_out)?;
            adam.step(&mut params, &grads.flatten())
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {b}: {e}")))?;
            net.set_params(&params)?;
            epoch_loss += loss;
        }
        diagnostics
            .train_loss
            .push(epoch_loss / batches.len() as f64);

        net.set_mode(Mode::Eval);
        let c = validation_c_index(&net, &x_val, &t_val, &e_val)?;
        diagnostics.validation_c_index.push(c);
        if best.as_ref().is_none_or(|(bc, _)| c > *bc) {
            best = Some((c, net.clone()));
            diagnostics.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                diagnostics.stopped_early = true;
                break;
            }
        }
    }

    let (_, mut network) = best.expect("at least one epoch ran");
    network.set_mode(Mode::Eval);
    let h_all = network.predict(&cohort.feature_matrix())?;
    let baseline = BaselineHazard::from_log_risks(
        &cohort.times(),
        &cohort.events(),
        h_all.as_slice().expect("contiguous"),
    )?;
    Ok(DeepSurvModel {
        network,
        feature_names: cohort.feature_names().to_vec(),
        config: config.clone(),
        diagnostics,
        baseline: Some(baseline),
    })
}

/// Eval-mode log-risk of one feature vector.
pub fn predict_log_risk(model: &DeepSurvModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.feature_dim() {
        return Err(Error::dim(format!(
            "{} features for a {}-feature model",
            features.len(),
            model.feature_dim()
        )));
    }
    let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("shape");
    Ok(model.network.predict(&x)?[[0, 0]])
}

/// Eval-mode log-risks for every record of a cohort.
pub fn predict_log_risks(model: &DeepSurvModel, cohort: &Cohort) -> Result<Vec<f64>> {
    if cohort.feature_dim() != model.feature_dim() {
        return Err(Error::dim(format!(
            "cohort has {} features, model {}",
            cohort.feature_dim(),
            model.feature_dim()
        )));
    }
    Ok(model
        .network
        .predict(&cohort.feature_matrix())?
        .into_iter()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{simulate_cohort, SimConfig};
    use crate::numerics::{finite_diff_grad, relative_error};

    #[test]
    fn two_subject_batch() {
        let (loss, _) = deepsurv_loss(&[0.0, 0.0], &[1.0, 2.0], &[true, false]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_events_equal_risk() {
        let (loss, grad) = deepsurv_loss(&[0.4; 3], &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let expected = (3f64.ln() + 2f64.ln() + 1f64.ln()) / 3.0;
        assert!((loss - expected).abs() < 1e-15);
        assert!(grad.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn eventless_batch() {
        let err = deepsurv_loss(&[0.0, 1.0], &[1.0, 2.0], &[false, false]).unwrap_err();
        assert!(matches!(err, Error::BatchHasNoEvents));
        assert_eq!(err.to_string(), "batch has no events");
    }

    #[test]
    fn gradient_and_invariances() {
        let mut rng = Rng::new(40);
        for _ in 0..10 {
            let n = 12;
            let h = rng.normal_vec(n);
            let t: Vec<f64> = (0..n)
                .map(|_| 1.0 + (rng.uniform() * 6.0).floor())
                .collect();
            let mut e: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
            e[0] = true;
            let (loss, grad) = deepsurv_loss(&h, &t, &e).unwrap();
            let fd = finite_diff_grad(|x| deepsurv_loss(x, &t, &e).unwrap().0, &h, 1e-5).unwrap();
            assert!(relative_error(&grad, &fd) < 1e-4);
            let shifted: Vec<f64> = h.iter().map(|v| v + 3.7).collect();
            assert!((deepsurv_loss(&shifted, &t, &e).unwrap().0 - loss).abs() < 1e-9);
            let all = vec![true; n];
            let (_, g) = deepsurv_loss(&h, &t, &all).unwrap();
            assert!(g.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn batches_merge_eventless_runs() {
        let events = [false, false, true, false, false, false, true];
        let order: Vec<usize> = (0..7).collect();
        let b = make_batches(&order, &events, 2).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2, 3], vec![4, 5, 6]]);
        let b = make_batches(&order, &[true, false, false, true, false, false, false], 3).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let mut rng = Rng::new(41);
        let mut net = MlpNetwork::survival_head(4, &[8, 4], 0.4, &mut rng).unwrap();
        let last = net.layers.len() - 1;
        net.layers[last].weight.fill(0.0);
        net.layers[last].bias.fill(0.0);
        let model =
            DeepSurvModel::from_network(net, Cohort::default_feature_names(4, "f")).unwrap();
        for _ in 0..5 {
            assert_eq!(predict_log_risk(&model, &rng.normal_vec(4)).unwrap(), 0.0);
        }
    }

    #[test]
    fn batch_prediction_matches_single() {
        let (c, _) = simulate_cohort(&SimConfig::linear(50, vec![0.5, -0.5, 1.0], 3)).unwrap();
        let mut rng = Rng::new(42);
        let mut net = MlpNetwork::survival_head(3, &[8, 4], 0.4, &mut rng).unwrap();
        // Give the running statistics non-trivial values.
        net.forward(&c.feature_matrix(), &mut rng).unwrap();
        let model = DeepSurvModel::from_network(net, c.feature_names().to_vec()).unwrap();
        let batch = predict_log_risks(&model, &c).unwrap();
        for (r, b) in c.records().iter().zip(&batch) {
            let single = predict_log_risk(&model, &r.features).unwrap();
            assert!((single - b).abs() < 1e-12);
            assert_eq!(single, predict_log_risk(&model, &r.features).unwrap());
        }
        assert!(predict_log_risk(&model, &[1.0]).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (c, _) = simulate_cohort(&SimConfig::linear(300, vec![1.0, -0.5, 0.0], 4)).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8, 4],
            max_epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_deepsurv(&c, &cfg).unwrap();
        let b = train_deepsurv(&c, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.diagnostics.train_loss.len(), 5);
    }

    #[test]
    fn small_cohort_rejected() {
        let (c, _) = simulate_cohort(&SimConfig::linear(100, vec![1.0], 4)).unwrap();
        assert!(train_deepsurv(&c, &TrainConfig::default()).is_err());
    }
}
