//! Fitted survival models as one persisted type.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::coxph::{predict_risk, BaselineHazard, CoxModel};
use crate::deepsurv::{predict_log_risks, DeepSurvModel};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_log_risks, EvaluationReport, GridSpec};

/// A fitted model, stored as JSON with a `kind` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SurvivalModel {
    Coxph(CoxModel),
    Deepsurv(DeepSurvModel),
}

impl SurvivalModel {
    pub fn feature_names(&self) -> &[String] {
        match self {
            Self::Coxph(m) => &m.feature_names,
            Self::Deepsurv(m) => &m.feature_names,
        }
    }

    pub fn baseline(&self) -> Option<&BaselineHazard> {
        match self {
            Self::Coxph(m) => m.baseline.as_ref(),
            Self::Deepsurv(m) => m.baseline.as_ref(),
        }
    }

    pub fn log_risks(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        match self {
            Self::Coxph(m) => cohort
                .records()
                .iter()
                .map(|r| predict_risk(m, &r.features))
                .collect(),
            Self::Deepsurv(m) => predict_log_risks(m, cohort),
        }
    }

    /// C-index and integrated Brier score on `cohort`, using the stored
    /// baseline hazard for survival probabilities.
    pub fn evaluate(&self, cohort: &Cohort, grid: &GridSpec) -> Result<EvaluationReport> {
        let baseline = self
            .baseline()
            .ok_or_else(|| Error::invalid("model has no baseline hazard; refit to evaluate"))?;
        let h = self.log_risks(cohort)?;
        evaluate_log_risks(cohort, &h, |t| baseline.at(t), grid)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
