//! Minimal dense feedforward networks with reverse-mode gradients.
//!
//! Activations are stored column-per-record: a batch of `B` inputs is a
//! `d_in × B` matrix. Gradients returned by [`Network::backward`] are sums
//! over the batch columns; callers scale them into means.

mod adam;
pub mod checkpoint;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::lit(LEAKY_SLOPE)
                }
            }
        }
    }

    #[inline]
    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::lit(LEAKY_SLOPE)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "leaky_relu" => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

/// Affine layer followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real> {
    /// `out × in`.
    pub weights: DMatrix<T>,
    pub bias: DVector<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real> {
    layers: Vec<Dense<T>>,
}

/// Intermediate values of one batched forward pass, consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T: Real> {
    inputs: Vec<DMatrix<T>>,
    pre_activations: Vec<DMatrix<T>>,
    output: DMatrix<T>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &DMatrix<T> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.ncols()
    }
}

/// Per-parameter gradient buffers, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<T: Real> {
    pub layers: Vec<(DMatrix<T>, DVector<T>)>,
}

impl<T: Real> GradientTape<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                        DVector::zeros(l.bias.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, net: &Network<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|((w, b), l)| {
                w.shape() == l.weights.shape() && b.len() == l.bias.len()
            })
    }

    pub fn zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(T::zero());
            b.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn accumulate(&mut self, other: &GradientTape<T>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| *v == T::zero()))
    }

    /// Flattened in the same order as [`Network::parameters`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }
}

impl<T: Real> Network<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::InvalidArgument(format!("layer {i} bias length")));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `widths` lists every layer
    /// boundary including input and output.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let limit = T::lit((6.0 / (fan_in + fan_out) as f64).sqrt());
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    (T::unit_uniform(rng) * T::lit(2.0) - T::one()) * limit
                });
                Dense {
                    weights,
                    bias: DVector::zeros(fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| Dense {
                weights: DMatrix::zeros(widths[i + 1], widths[i]),
                bias: DVector::zeros(widths[i + 1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// `Σ θ²` over all weights and biases.
    pub fn squared_norm(&self) -> T {
        self.layers
            .iter()
            .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn forward(&self, input: &DVector<T>) -> Result<DVector<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut act = input.clone();
        for layer in &self.layers {
            let mut pre = &layer.weights * &act + &layer.bias;
            pre.apply(|v| *v = layer.activation.apply(*v));
            act = pre;
        }
        Ok(act)
    }

    pub fn forward_batch(&self, input: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("network input", self.input_dim(), input.nrows())?;
        let mut act = input.clone();
        for layer in &self.layers {
            act = self.affine(layer, &act);
            act.apply(|v| *v = layer.activation.apply(*v));
        }
        Ok(act)
    }

    fn affine(&self, layer: &Dense<T>, act: &DMatrix<T>) -> DMatrix<T> {
        let mut pre = &layer.weights * act;
        for mut col in pre.column_iter_mut() {
            col += &layer.bias;
        }
        pre
    }

    /// Forward pass that keeps what [`Network::backward`] needs.
    pub fn trace(&self, input: &DMatrix<T>) -> Result<Trace<T>> {
        check_dim("network input", self.input_dim(), input.nrows())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut act = input.clone();
        for layer in &self.layers {
            let pre = self.affine(layer, &act);
            let mut next = pre.clone();
            next.apply(|v| *v = layer.activation.apply(*v));
            inputs.push(act);
            pre_activations.push(pre);
            act = next;
        }
        Ok(Trace {
            inputs,
            pre_activations,
            output: act,
        })
    }

    /// Reverse pass. `upstream` is `∂loss/∂output` with one column per
    /// record. Returns parameter gradients summed over records and the
    /// gradient with respect to the input batch.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: &DMatrix<T>,
    ) -> Result<(GradientTape<T>, DMatrix<T>)> {
        if trace.inputs.len() != self.layers.len()
            || trace
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.nrows() != l.input_dim())
        {
            return Err(Error::InvalidArgument(
                "trace was not produced by this network".into(),
            ));
        }
        check_dim("upstream rows", self.output_dim(), upstream.nrows())?;
        check_dim("upstream columns", trace.batch_size(), upstream.ncols())?;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre_activations[i];
            delta.zip_apply(pre, |d, p| *d *= layer.activation.derivative(p));
            let gw = &delta * trace.inputs[i].transpose();
            let gb = delta.column_sum();
            let next = layer.weights.transpose() * &delta;
            grads.push((gw, gb));
            delta = next;
        }
        grads.reverse();
        Ok((GradientTape { layers: grads }, delta))
    }

    /// Adds `2·coeff·θ` to `tape`, the gradient of `coeff·Σθ²`.
    pub fn add_l2_gradient(&self, tape: &mut GradientTape<T>, coeff: T) {
        let two = coeff * T::lit(2.0);
        for ((w, b), l) in tape.layers.iter_mut().zip(&self.layers) {
            *w += &l.weights * two;
            *b += &l.bias * two;
        }
    }

    /// Row-major weights then bias, layer by layer.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    out.push(l.weights[(r, c)]);
                }
            }
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<()> {
        check_dim("parameter vector", self.num_parameters(), values.len())?;
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    l.weights[(r, c)] = it.next().unwrap();
                }
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.finite()))
    }
}
