//! Dense kernels shared by the survival models and the latent projection:
//! a seeded random stream, Adam, a finite-difference checker and a small
//! multi-layer perceptron.

pub mod adam;
pub mod fd;
pub mod mlp;
pub mod rng;

pub use adam::{AdamConfig, AdamState};
pub use fd::{finite_diff_grad, relative_error};
pub use mlp::{
    Activation, BatchNorm, ForwardCache, Layer, LayerSpec, MlpGradients, MlpNetwork, Mode,
};
pub use rng::Rng;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Stacks equal-length rows into an `n x d` matrix.
pub fn rows_to_matrix<R: AsRef<[f64]>>(rows: &[R], width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::dim(format!(
                "row {i} has length {}, expected {width}",
                r.len()
            )));
        }
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), data).map_err(|e| Error::dim(e.to_string()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
