//! Minimal dense-network core: forward/backward passes, Adam and
//! autoencoder pretraining.
//!
//! Weights are stored `in x out` so a batch `X` (rows = samples) maps to
//! `X W`. Hidden layers use a leaky ReLU with slope [`LEAKY_SLOPE`]; the final
//! layer is linear.

mod adam;
mod autoencoder;
mod checkpoint;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

pub use adam::{Adam, AdamConfig};
pub use autoencoder::{pretrain_autoencoder, reconstruction_loss, Autoencoder};
pub use checkpoint::CHECKPOINT_MAGIC;
pub(crate) use checkpoint::write_values as checkpoint_values;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Epoch budget, mini-batch size and optimizer settings for one training phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("layer widths must list at least an input and an output width")]
    TooFewWidths,
    #[error("tape does not belong to this network state")]
    StaleTape,
    #[error("gradient shapes do not match the network parameters")]
    ShapeMismatch,
    #[error("no training data")]
    EmptyData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::LeakyRelu if z <= T::zero() => z * T::lit(LEAKY_SLOPE),
            _ => z,
        }
    }

    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::LeakyRelu if z <= T::zero() => T::lit(LEAKY_SLOPE),
            _ => T::one(),
        }
    }

    pub(crate) fn token(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Identity => "identity",
        }
    }

    pub(crate) fn from_token(s: &str) -> Option<Self> {
        match s {
            "leaky_relu" => Some(Activation::LeakyRelu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Option<Array1<T>>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn input_width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.ncols()
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected feed-forward network.
#[derive(Debug)]
pub struct DenseNet<T> {
    layers: Vec<Dense<T>>,
    // Identity and mutation counter, used to reject tapes from another state.
    id: u64,
    revision: u64,
}

impl<T: Clone> Clone for DenseNet<T> {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: fresh_id(),
            revision: 0,
        }
    }
}

impl<T: PartialEq> PartialEq for DenseNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations cached by [`DenseNet::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    net_id: u64,
    revision: u64,
    inputs: Vec<Array2<T>>,
    pre_activations: Vec<Array2<T>>,
}

impl<T> Tape<T> {
    pub fn rows(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    /// Per-layer values before the activation.
    pub fn pre_activations(&self) -> &[Array2<T>] {
        &self.pre_activations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient<T> {
    pub weights: Array2<T>,
    pub bias: Option<Array1<T>>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGradient<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: l.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
                })
                .collect(),
        }
    }

    /// Parameters in [`DenseNet::parameters`] order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            if let Some(b) = &l.bias {
                out.extend(b.iter().copied());
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|v| v.is_zero())
    }

    fn matches(&self, net: &DenseNet<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.dim() == l.weights.dim()
                    && g.bias.as_ref().map(|b| b.len()) == l.bias.as_ref().map(|b| b.len())
            })
    }
}

/// Result of a backward pass: parameter gradients and the gradient with
/// respect to the network input (for chaining networks).
#[derive(Clone, Debug)]
pub struct Backprop<T> {
    pub params: Gradients<T>,
    pub input: Array2<T>,
}

impl<T: Scalar> DenseNet<T> {
    /// Builds a network with the given widths (`[input, hidden.., output]`),
    /// leaky-ReLU hidden layers and a linear output layer. Weights are drawn
    /// from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], bias: bool, rng: &mut R) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::TooFewWidths);
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    T::lit(rng.random_range(-bound..bound))
                });
                Dense {
                    weights,
                    bias: bias.then(|| Array1::zeros(fan_out)),
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::LeakyRelu
                    },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::TooFewWidths);
        }
        for pair in layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].output_width(),
                    found: pair[1].input_width(),
                });
            }
        }
        for l in &layers {
            if let Some(b) = &l.bias {
                if b.len() != l.output_width() {
                    return Err(NnError::DimensionMismatch {
                        expected: l.output_width(),
                        found: b.len(),
                    });
                }
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
            revision: 0,
        })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Dense::output_width));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| l.bias.is_some())
    }

    pub fn forward(&self, batch: ArrayView2<'_, T>) -> Result<(Array2<T>, Tape<T>), NnError> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = batch.to_owned();
        for layer in &self.layers {
            let z = affine(layer, current.view());
            let a = z.mapv(|v| layer.activation.apply(v));
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        let tape = Tape {
            net_id: self.id,
            revision: self.revision,
            inputs,
            pre_activations,
        };
        Ok((current, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, batch: ArrayView2<'_, T>) -> Result<Array2<T>, NnError> {
        self.check_input(batch)?;
        let mut current = batch.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            current = affine(layer, current.view()).mapv_into(|v| act.apply(v));
        }
        Ok(current)
    }

    pub fn backward(&self, tape: &Tape<T>, output_gradient: ArrayView2<'_, T>) -> Result<Backprop<T>, NnError> {
        if tape.net_id != self.id || tape.revision != self.revision || tape.inputs.len() != self.layers.len() {
            return Err(NnError::StaleTape);
        }
        if output_gradient.dim() != (tape.rows(), self.output_width()) {
            return Err(NnError::DimensionMismatch {
                expected: self.output_width(),
                found: output_gradient.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_gradient.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut dz = upstream;
            Zip::from(&mut dz)
                .and(&tape.pre_activations[i])
                .for_each(|g, &z| *g *= layer.activation.derivative(z));
            let weights = tape.inputs[i].t().dot(&dz);
            let bias = layer.bias.as_ref().map(|_| dz.sum_axis(Axis(0)));
            upstream = dz.dot(&layer.weights.t());
            grads.push(LayerGradient { weights, bias });
        }
        grads.reverse();
        Ok(Backprop {
            params: Gradients { layers: grads },
            input: upstream,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            if let Some(b) = &l.bias {
                out.extend(b.iter().copied());
            }
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<(), NnError> {
        if values.len() != self.parameter_count() {
            return Err(NnError::DimensionMismatch {
                expected: self.parameter_count(),
                found: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            if let Some(b) = l.bias.as_mut() {
                b.iter_mut().for_each(|w| *w = it.next().unwrap());
            }
        }
        self.touch();
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.touch();
        &mut self.layers
    }

    fn touch(&mut self) {
        self.revision += 1;
    }

    fn check_input(&self, batch: ArrayView2<'_, T>) -> Result<(), NnError> {
        if batch.ncols() != self.input_width() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_width(),
                found: batch.ncols(),
            });
        }
        Ok(())
    }
}

fn affine<T: Scalar>(layer: &Dense<T>, x: ArrayView2<'_, T>) -> Array2<T> {
    let mut z = x.dot(&layer.weights);
    if let Some(b) = &layer.bias {
        z += b;
    }
    z
}

/// Row indices split into mini-batches after a seeded shuffle. The tail batch
/// is kept even when shorter than `batch_size`.
pub fn shuffled_batches<R: Rng + ?Sized>(indices: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
