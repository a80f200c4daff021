use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::toys::Generator;
use crate::cohort::Cohort;
use crate::coxph::{fit_coxph, CoxFitConfig, CoxModel};
use crate::error::{Error, Result};
use crate::numerics::dot;

/// Ridge penalty of the age regression.
pub const AGE_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeName {
    Health,
    Age,
    SingleDim(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetadata {
    /// `coxph`, `ridge` or `basis`.
    pub model: String,
    pub regularization: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    /// Whether the direction was rescaled to unit length.
    #[serde(default)]
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: AttributeName,
    pub direction: Vec<f64>,
    pub metadata: AttributeMetadata,
}

impl Attribute {
    pub fn latent_dim(&self) -> usize {
        self.direction.len()
    }

    /// Same attribute with a unit-length direction.
    pub fn normalized(&self) -> Result<Self> {
        let norm = dot(&self.direction, &self.direction).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero direction"));
        }
        let mut out = self.clone();
        out.direction.iter_mut().for_each(|w| *w /= norm);
        out.metadata.normalized = true;
        Ok(out)
    }
}

/// Cox fit on a cohort whose features are latent vectors; the direction is
/// the coefficient vector.
pub fn health_attribute(cohort: &Cohort, config: &CoxFitConfig) -> Result<(Attribute, CoxModel)> {
    let model = fit_coxph(cohort, config)?;
    let attr = Attribute {
        name: AttributeName::Health,
        direction: model.coefficients.clone(),
        metadata: AttributeMetadata {
            model: "coxph".into(),
            regularization: model.ridge_lambda,
            fit_loss: Some(model.diagnostics.final_loss),
            intercept: None,
            normalized: false,
        },
    };
    Ok((attr, model))
}

/// Ridge least squares of age on latents with an unpenalized intercept,
/// solved on centered data.
pub fn age_attribute<Z: AsRef<[f64]>>(
    latents: &[Z],
    ages: &[f64],
    ridge: f64,
) -> Result<Attribute> {
    let n = latents.len();
    if n != ages.len() {
        return Err(Error::dim(format!("{n} latents but {} ages", ages.len())));
    }
    if n < 2 {
        return Err(Error::invalid("age regression needs at least 2 records"));
    }
    if let Some(index) = ages.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::NonFinite {
            index,
            context: "age must be positive and finite".into(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge penalty must be non-negative"));
    }
    let d = latents[0].as_ref().len();
    if let Some(i) = latents.iter().position(|z| z.as_ref().len() != d) {
        return Err(Error::dim(format!("latent {i} has a different length")));
    }
    let x = DMatrix::from_fn(n, d, |i, j| latents[i].as_ref()[j]);
    let x_mean = x.row_mean();
    let y_mean = ages.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, ages.iter().map(|a| a - y_mean));
    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += ridge;
    }
    let rhs = xc.transpose() * &yc;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical("age regression normal equations are singular; increase the ridge".into())
    })?;
    let w = chol.solve(&rhs);
    let intercept = y_mean - (x_mean * &w)[0];
    let resid = &yc - &xc * &w;
    Ok(Attribute {
        name: AttributeName::Age,
        direction: w.iter().copied().collect(),
        metadata: AttributeMetadata {
            model: "ridge".into(),
            regularization: ridge,
            fit_loss: Some(resid.norm_squared() / n as f64),
            intercept: Some(intercept),
            normalized: false,
        },
    })
}

/// Unit basis vector along one latent coordinate.
pub fn single_dim_attribute(dim: usize, latent_dim: usize) -> Result<Attribute> {
    if dim >= latent_dim {
        return Err(Error::invalid(format!(
            "dimension {dim} out of range for latent size {latent_dim}"
        )));
    }
    let mut direction = vec![0.0; latent_dim];
    direction[dim] = 1.0;
    Ok(Attribute {
        name: AttributeName::SingleDim(dim),
        direction,
        metadata: AttributeMetadata {
            model: "basis".into(),
            regularization: 0.0,
            fit_loss: None,
            intercept: None,
            normalized: true,
        },
    })
}

/// `z + beta * w`.
pub fn manipulate(z: &[f64], attribute: &Attribute, beta: f64) -> Result<Vec<f64>> {
    if z.len() != attribute.latent_dim() {
        return Err(Error::dim(format!(
            "latent has length {}, attribute {}",
            z.len(),
            attribute.latent_dim()
        )));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("beta must be finite"));
    }
    Ok(z.iter()
        .zip(&attribute.direction)
        .map(|(z, w)| z + beta * w)
        .collect())
}

/// Generator output for each manipulated latent, in the order of `betas`.
pub fn manipulation_sweep(
    z: &[f64],
    attribute: &Attribute,
    betas: &[f64],
    generator: &dyn Generator,
) -> Result<Vec<(f64, Vec<f64>)>> {
    betas
        .iter()
        .map(|&beta| Ok((beta, generator.forward(&manipulate(z, attribute, beta)?)?)))
        .collect()
}
