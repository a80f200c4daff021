//! Survival analysis on generator latent spaces.

pub mod cohort;
pub mod coxph;
pub mod deepsurv;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod model;
pub mod numerics;
mod serde_arrays;

pub use cohort::{
    fuse_features, simulate_cohort, split_cohort, Cohort, GroundTruth, SimConfig, SurvivalRecord,
};
pub use coxph::{fit_coxph, predict_risk, predict_survival, CoxFitConfig, CoxModel};
pub use deepsurv::{train_deepsurv, DeepSurvModel, TrainConfig};
pub use error::{Error, Result};
pub use evaluation::{concordance_index, EvaluationReport, GridSpec};
pub use latent::{Attribute, AttributeName, LatentVector, ToyGenerator};
pub use model::SurvivalModel;
pub use numerics::Rng;
