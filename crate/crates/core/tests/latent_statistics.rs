use latsurv::cohort::{simulate_cohort, SimConfig};
use latsurv::coxph::{predict_risk, CoxFitConfig};
use latsurv::latent::{health_attribute, manipulate, manipulation_sweep, IdentityGenerator};

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, w| m.max(w.abs()))
}

#[test]
fn null_signal_gives_small_direction() {
    let mut cfg = SimConfig::linear(10000, vec![0.0; 16], 11);
    cfg.target_censor_fraction = 0.0;
    let (c, _) = simulate_cohort(&cfg).unwrap();
    let (attr, _) = health_attribute(&c, &CoxFitConfig::default()).unwrap();
    assert_eq!(attr.direction.len(), 16);
    assert!(max_abs(&attr.direction) < 0.05, "{:?}", attr.direction);
}

#[test]
fn single_coordinate_signal_dominates() {
    let mut w = vec![0.0; 32];
    w[0] = 2.0;
    let (c, _) = simulate_cohort(&SimConfig::linear(2000, w, 12)).unwrap();
    let (attr, _) = health_attribute(&c, &CoxFitConfig::default()).unwrap();
    let w0 = attr.direction[0];
    assert!(w0 > 0.0);
    assert!(w0.abs() > 5.0 * max_abs(&attr.direction[1..]));
    assert!(attr.metadata.fit_loss.unwrap().is_finite());
}

#[test]
fn direction_follows_coordinate_permutation() {
    let (c, _) =
        simulate_cohort(&SimConfig::linear(800, vec![0.8, -0.5, 0.0, 0.3, 0.1], 13)).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let permuted: Vec<Vec<f64>> = c
        .records()
        .iter()
        .map(|r| perm.iter().map(|&p| r.features[p]).collect())
        .collect();
    let names = perm.iter().map(|&p| c.feature_names()[p].clone()).collect();
    let pc = c.with_features(permuted, names).unwrap();
    let (a, _) = health_attribute(&c, &CoxFitConfig::default()).unwrap();
    let (b, _) = health_attribute(&pc, &CoxFitConfig::default()).unwrap();
    for (k, &p) in perm.iter().enumerate() {
        assert!((b.direction[k] - a.direction[p]).abs() < 1e-6);
    }
}

#[test]
fn sweep_risk_increases_with_beta() {
    let (c, _) = simulate_cohort(&SimConfig::linear(500, vec![0.6, -0.4, 0.2], 14)).unwrap();
    let (attr, model) = health_attribute(&c, &CoxFitConfig::default()).unwrap();
    let z = &c.records()[0].features;
    let betas = [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0];
    let out = manipulation_sweep(z, &attr, &betas, &IdentityGenerator { dim: 3 }).unwrap();
    let risks: Vec<f64> = out
        .iter()
        .map(|(_, x)| predict_risk(&model, x).unwrap())
        .collect();
    assert!(risks.windows(2).all(|w| w[1] > w[0]));
    // A basis-vector edit moves the risk by beta times that coefficient.
    let e1 = latsurv::latent::single_dim_attribute(1, 3).unwrap();
    let moved = manipulate(z, &e1, 5.0).unwrap();
    let delta = predict_risk(&model, &moved).unwrap() - predict_risk(&model, z).unwrap();
    assert!((delta - 5.0 * model.coefficients[1]).abs() < 1e-10);
}
