//! Fixed inputs shared by the benchmarks.

use latsurv::cohort::{simulate_cohort, SimConfig};
use latsurv::numerics::{MlpNetwork, Rng};
use latsurv::Cohort;
use ndarray::Array2;

/// Linear simulated cohort with a decaying coefficient profile.
pub fn cohort(n: usize, dim: usize) -> Cohort {
    let w = (0..dim).map(|i| 1.0 / (1.0 + i as f64)).collect();
    simulate_cohort(&SimConfig::linear(n, w, 1))
        .expect("valid config")
        .0
}

/// Default-width DeepSurv network and a standard-normal input batch.
pub fn network_and_batch(input: usize, batch: usize) -> (MlpNetwork, Array2<f64>) {
    let mut rng = Rng::new(2);
    let net = MlpNetwork::survival_head(input, &latsurv::deepsurv::DEFAULT_HIDDEN, 0.4, &mut rng)
        .expect("valid network");
    let x = Array2::from_shape_vec((batch, input), rng.normal_vec(batch * input)).expect("shape");
    (net, x)
}
