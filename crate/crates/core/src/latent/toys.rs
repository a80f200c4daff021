//! Small differentiable generators and feature extractors.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, LayerSpec, MlpNetwork, Rng};

/// Maps a latent vector to a synthetic observation.
pub trait Generator {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;
    /// Gradient with respect to `z` of `upstream . forward(z)`.
    fn vjp(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Maps an observation to the space in which projection distances are taken.
pub trait FeatureExtractor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

fn matvec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.dot(&Array1::from(v.to_vec())).to_vec()
}

fn matvec_t(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.t().dot(&Array1::from(v.to_vec())).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityGenerator {
    pub dim: usize,
}

impl Generator for IdentityGenerator {
    fn latent_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.dim)?;
        Ok(z.to_vec())
    }
    fn vjp(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.dim)?;
        check_len("upstream gradient", upstream.len(), self.dim)?;
        Ok(upstream.to_vec())
    }
}

/// `x = A z` with `A` of shape `output x latent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGenerator {
    #[serde(with = "crate::serde_arrays::matrix")]
    pub matrix: Array2<f64>,
}

impl LinearGenerator {
    /// Gaussian entries scaled by `1/sqrt(latent)`.
    pub fn random(latent: usize, output: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let scale = 1.0 / (latent.max(1) as f64).sqrt();
        let matrix = Array2::from_shape_fn((output, latent), |_| rng.normal() * scale);
        Self { matrix }
    }

    /// Orthonormal columns (`A^T A = I`), from the QR factor of a Gaussian matrix.
    pub fn orthonormal(latent: usize, output: usize, seed: u64) -> Result<Self> {
        if output < latent {
            return Err(Error::invalid(format!(
                "orthonormal generator needs output >= latent ({output} < {latent})"
            )));
        }
        let mut rng = Rng::new(seed);
        let gauss = DMatrix::from_fn(output, latent, |_, _| rng.normal());
        let q = gauss.qr().q();
        let matrix = Array2::from_shape_fn((output, latent), |(i, j)| q[(i, j)]);
        Ok(Self { matrix })
    }
}

impl Generator for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.latent_dim())?;
        Ok(matvec(&self.matrix, z))
    }
    fn vjp(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.latent_dim())?;
        check_len("upstream gradient", upstream.len(), self.output_dim())?;
        Ok(matvec_t(&self.matrix, upstream))
    }
}

/// Fixed tanh network `latent -> hidden -> output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGenerator {
    pub network: MlpNetwork,
}

impl MlpGenerator {
    pub fn new(latent: usize, hidden: usize, output: usize, seed: u64) -> Result<Self> {
        let spec = |input, output, activation| LayerSpec {
            input,
            output,
            batch_norm: false,
            activation,
            dropout: false,
        };
        let specs = [
            spec(latent, hidden, Activation::Tanh),
            spec(hidden, output, Activation::Tanh),
        ];
        let network = MlpNetwork::new(&specs, 0.0, &mut Rng::new(seed))?;
        Ok(Self { network })
    }

    fn row(z: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("shape")
    }
}

impl Generator for MlpGenerator {
    fn latent_dim(&self) -> usize {
        self.network.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.network.output_dim()
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.latent_dim())?;
        Ok(self.network.predict(&Self::row(z))?.into_iter().collect())
    }
    fn vjp(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.latent_dim())?;
        check_len("upstream gradient", upstream.len(), self.output_dim())?;
        // No dropout or batch norm, so the train-mode pass is deterministic.
        let (_, cache) = self
            .network
            .forward_train(&Self::row(z), &mut Rng::new(0))?;
        let (_, d_input) = self.network.backward(&cache, &Self::row(upstream))?;
        Ok(d_input.into_iter().collect())
    }
}

/// Generators selectable by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyGenerator {
    Identity(IdentityGenerator),
    Linear(LinearGenerator),
    Mlp(MlpGenerator),
}

impl ToyGenerator {
    /// `identity`, `linear`, `orthonormal` or `toy-mlp`.
    pub fn build(kind: &str, latent: usize, output: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            "identity" => Self::Identity(IdentityGenerator { dim: latent }),
            "linear" => Self::Linear(LinearGenerator::random(latent, output, seed)),
            "orthonormal" => Self::Linear(LinearGenerator::orthonormal(latent, output, seed)?),
            "toy-mlp" => Self::Mlp(MlpGenerator::new(latent, 64, output, seed)?),
            other => return Err(Error::invalid(format!(
                "unknown generator {other:?} (expected identity, linear, orthonormal or toy-mlp)"
            ))),
        })
    }

    fn inner(&self) -> &dyn Generator {
        match self {
            Self::Identity(g) => g,
            Self::Linear(g) => g,
            Self::Mlp(g) => g,
        }
    }
}

impl Generator for ToyGenerator {
    fn latent_dim(&self) -> usize {
        self.inner().latent_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.inner().forward(z)
    }
    fn vjp(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.inner().vjp(z, upstream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityExtractor {
    pub dim: usize,
}

impl FeatureExtractor for IdentityExtractor {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("observation", x.len(), self.dim)?;
        Ok(x.to_vec())
    }
    fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("observation", x.len(), self.dim)?;
        check_len("upstream gradient", upstream.len(), self.dim)?;
        Ok(upstream.to_vec())
    }
}

/// `phi(x) = B x` with `B` of shape `features x input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearExtractor {
    #[serde(with = "crate::serde_arrays::matrix")]
    pub matrix: Array2<f64>,
}

impl LinearExtractor {
    pub fn random(input: usize, features: usize, seed: u64) -> Self {
        let LinearGenerator { matrix } = LinearGenerator::random(input, features, seed);
        Self { matrix }
    }
}

impl FeatureExtractor for LinearExtractor {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("observation", x.len(), self.input_dim())?;
        Ok(matvec(&self.matrix, x))
    }
    fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("observation", x.len(), self.input_dim())?;
        check_len("upstream gradient", upstream.len(), self.output_dim())?;
        Ok(matvec_t(&self.matrix, upstream))
    }
}
