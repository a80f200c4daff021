//! Fully connected network with optional batch normalization and inverted
//! dropout, with a hand-written backward pass.
//!
//! Each layer computes `affine -> batch norm -> activation -> dropout`.
//! Weights are stored `in x out` so a batch (one row per sample) maps as
//! `X W + b`.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation input.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    #[serde(with = "crate::serde_arrays::vector")]
    pub scale: Array1<f64>,
    #[serde(with = "crate::serde_arrays::vector")]
    pub shift: Array1<f64>,
    #[serde(with = "crate::serde_arrays::vector")]
    pub running_mean: Array1<f64>,
    #[serde(with = "crate::serde_arrays::vector")]
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "crate::serde_arrays::matrix")]
    pub weight: Array2<f64>,
    #[serde(with = "crate::serde_arrays::vector")]
    pub bias: Array1<f64>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
    /// Whether the network's dropout rate applies after this layer.
    pub dropout: bool,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Shape of one layer, used to build a freshly initialized network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub batch_norm: bool,
    pub activation: Activation,
    pub dropout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
    pub mode: Mode,
}

/// Intermediate values of one train-mode layer evaluation.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    /// Batch-norm output (or the affine output when the layer has none):
    /// the activation input.
    pre_activation: Array2<f64>,
    normalized: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
    /// Already scaled by `1 / (1 - rate)`.
    dropout_mask: Option<Array2<f64>>,
}

/// Everything [`MlpNetwork::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    batch_size: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Normalized pre-activations of layer `index`, if it has batch norm.
    pub fn normalized(&self, index: usize) -> Option<&Array2<f64>> {
        self.layers.get(index).and_then(|l| l.normalized.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// `(scale, shift)` gradients when the layer has batch norm.
    pub batch_norm: Option<(Array1<f64>, Array1<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradients>,
}

impl MlpGradients {
    /// Flattened in the same order as [`MlpNetwork::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some((s, b)) = &l.batch_norm {
                out.extend(s.iter());
                out.extend(b.iter());
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

impl MlpNetwork {
    /// Builds a network with weights and biases drawn uniformly from
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))`; batch norm starts at unit scale.
    pub fn new(specs: &[LayerSpec], dropout_rate: f64, rng: &mut Rng) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| {
                let bound = 1.0 / (s.input as f64).sqrt();
                let weight = Array2::from_shape_fn((s.input, s.output), |_| {
                    rng.uniform_range(-bound, bound)
                });
                let bias = Array1::from_shape_fn(s.output, |_| rng.uniform_range(-bound, bound));
                Layer {
                    weight,
                    bias,
                    batch_norm: s.batch_norm.then(|| BatchNorm::new(s.output)),
                    activation: s.activation,
                    dropout: s.dropout,
                }
            })
            .collect();
        Self::from_layers(layers, dropout_rate)
    }

    /// Hidden layers `input -> widths[0] -> ... -> widths[k-1]` with batch norm,
    /// ReLU and dropout, then a linear layer to a single output.
    pub fn survival_head(
        input: usize,
        hidden: &[usize],
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &w in hidden {
            specs.push(LayerSpec {
                input: prev,
                output: w,
                batch_norm: true,
                activation: Activation::Relu,
                dropout: true,
            });
            prev = w;
        }
        specs.push(LayerSpec {
            input: prev,
            output: 1,
            batch_norm: false,
            activation: Activation::Linear,
            dropout: false,
        });
        Self::new(&specs, dropout_rate, rng)
    }

    pub fn from_layers(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dim(format!(
                    "layer {i}: bias length {} != {}",
                    l.bias.len(),
                    l.output_dim()
                )));
            }
            if let Some(bn) = &l.batch_norm {
                let w = l.output_dim();
                if [
                    bn.scale.len(),
                    bn.shift.len(),
                    bn.running_mean.len(),
                    bn.running_var.len(),
                ]
                .iter()
                .any(|&n| n != w)
                {
                    return Err(Error::dim(format!("layer {i}: batch norm width mismatch")));
                }
                if bn.running_var.iter().any(|&v| v.is_nan() || v <= 0.0) {
                    return Err(Error::invalid(format!(
                        "layer {i}: running variance must be positive"
                    )));
                }
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::dim(format!(
                    "layer {} outputs {} but layer {i} expects {}",
                    i - 1,
                    layers[i - 1].output_dim(),
                    l.input_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
            mode: Mode::Train,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm.is_some())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass in the network's current mode. In train mode the
    /// batch-norm running statistics are updated.
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        match self.mode {
            Mode::Train => {
                let (out, cache) = self.forward_train(x, rng)?;
                self.update_running_stats(&cache);
                Ok((out, cache))
            }
            Mode::Eval => {
                let out = self.predict(x)?;
                Ok((
                    out,
                    ForwardCache {
                        mode: Mode::Eval,
                        batch_size: x.nrows(),
                        layers: Vec::new(),
                    },
                ))
            }
        }
    }

    /// Train-mode forward (batch statistics, dropout) that leaves the network
    /// untouched. Pair with [`update_running_stats`](Self::update_running_stats).
    pub fn forward_train(
        &self,
        x: &Array2<f64>,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let n = x.nrows();
        if n < 2 && self.has_batch_norm() {
            return Err(Error::invalid(
                "train-mode batch norm needs a batch of at least 2",
            ));
        }
        let keep = 1.0 - self.dropout_rate;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let affine = current.dot(&layer.weight) + &layer.bias;
            let (pre_activation, normalized, inv_std, mean, var) = match &layer.batch_norm {
                Some(bn) => {
                    let mean = affine.mean_axis(Axis(0)).expect("nonempty batch");
                    let centered = &affine - &mean;
                    let var = centered
                        .mapv(|v| v * v)
                        .mean_axis(Axis(0))
                        .expect("nonempty batch");
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                    let normalized = &centered * &inv_std;
                    let out = &normalized * &bn.scale + &bn.shift;
                    (out, Some(normalized), Some(inv_std), Some(mean), Some(var))
                }
                None => (affine, None, None, None, None),
            };
            let mut activated = pre_activation.mapv(|v| layer.activation.apply(v));
            let dropout_mask = if layer.dropout && self.dropout_rate > 0.0 {
                let mask = Array2::from_shape_fn(activated.dim(), |_| {
                    if rng.uniform() >= self.dropout_rate {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                activated *= &mask;
                Some(mask)
            } else {
                None
            };
            caches.push(LayerCache {
                input: current,
                pre_activation,
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                dropout_mask,
            });
            current = activated;
        }
        Ok((
            current,
            ForwardCache {
                mode: Mode::Train,
                batch_size: n,
                layers: caches,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates: `running = momentum * running + (1 - momentum) * batch`.
    /// The running variance uses the unbiased batch variance.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let n = cache.batch_size as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(mean), Some(var)) =
                (&mut layer.batch_norm, &lc.batch_mean, &lc.batch_var)
            {
                bn.running_mean = &bn.running_mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
                bn.running_var =
                    &bn.running_var * BN_MOMENTUM + &(var * unbias) * (1.0 - BN_MOMENTUM);
            }
        }
    }

    /// Eval-mode forward: running statistics, no dropout.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight) + &layer.bias;
            if let Some(bn) = &layer.batch_norm {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                z = (&z - &bn.running_mean) * &inv_std * &bn.scale + &bn.shift;
            }
            z.mapv_inplace(|v| layer.activation.apply(v));
            current = z;
        }
        Ok(current)
    }

    /// Exact gradients of `sum(d_output * output)` with respect to every
    /// parameter and to the input batch, for a train-mode cache.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &Array2<f64>,
    ) -> Result<(MlpGradients, Array2<f64>)> {
        if cache.mode != Mode::Train {
            return Err(Error::invalid("backward needs a train-mode forward cache"));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::dim("cache does not belong to this network"));
        }
        if d_output.dim() != (cache.batch_size, self.output_dim()) {
            return Err(Error::dim(format!(
                "upstream gradient is {:?}, expected ({}, {})",
                d_output.dim(),
                cache.batch_size,
                self.output_dim()
            )));
        }
        let n = cache.batch_size as f64;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = d_output.to_owned();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            if let Some(mask) = &lc.dropout_mask {
                upstream *= mask;
            }
            let act = layer.activation;
            let mut d_pre = lc.pre_activation.mapv(|v| act.derivative(v));
            d_pre *= &upstream;

            let (d_affine, bn_grads) = match (&layer.batch_norm, &lc.normalized, &lc.inv_std) {
                (Some(bn), Some(xhat), Some(inv_std)) => {
                    let d_scale = (&d_pre * xhat).sum_axis(Axis(0));
                    let d_shift = d_pre.sum_axis(Axis(0));
                    let d_xhat = &d_pre * &bn.scale;
                    let sum_dxhat = d_xhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&d_xhat * xhat).sum_axis(Axis(0));
                    let d_affine =
                        (&d_xhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat)) * &(inv_std / n);
                    (d_affine, Some((d_scale, d_shift)))
                }
                _ => (d_pre, None),
            };

            let d_weight = lc.input.t().dot(&d_affine);
            let d_bias = d_affine.sum_axis(Axis(0));
            upstream = d_affine.dot(&layer.weight.t());
            grads.push(LayerGradients {
                weight: d_weight,
                bias: d_bias,
                batch_norm: bn_grads,
            });
        }
        grads.reverse();
        Ok((MlpGradients { layers: grads }, upstream))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.len()
                    + l.bias.len()
                    + l.batch_norm.as_ref().map_or(0, |b| 2 * b.scale.len())
            })
            .sum()
    }

    /// Trainable parameters, flattened layer by layer as weight (row-major),
    /// bias, batch-norm scale, batch-norm shift.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some(bn) = &l.batch_norm {
                out.extend(bn.scale.iter());
                out.extend(bn.shift.iter());
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = it.next().expect("length checked");
            }
        };
        for l in &mut self.layers {
            fill(&mut l.weight.iter_mut());
            fill(&mut l.bias.iter_mut());
            if let Some(bn) = &mut l.batch_norm {
                fill(&mut bn.scale.iter_mut());
                fill(&mut bn.shift.iter_mut());
            }
        }
        Ok(())
    }
}
