//! Parameterized layers and named-parameter traversal.

use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{BatchNormState, Conv2dSpec, Mode, Real, Tensor};

/// Named access to trainable tensors and normalization statistics.
///
/// Names are dotted paths (`stage0.block1.grapher.fc_nb.weight`); the order
/// of traversal is fixed and shared by checkpointing and the optimizer.
pub trait Parameterized<T: Real> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);
    fn norms<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, &'a BatchNorm<T>)>) {}

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn named_norms(&self) -> Vec<(String, &BatchNorm<T>)> {
        let mut out = Vec::new();
        self.norms("", &mut out);
        out
    }

    fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn zero_grad(&self) {
        for (_, t) in self.named_params() {
            t.zero_grad();
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Kaiming-uniform draw for a layer with the given fan-in:
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub(crate) fn kaiming_uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::param(data, shape).expect("shape matches draw count")
}

pub(crate) fn zeros_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).requires_grad()
}

/// Affine map over the last axis; `weight` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            weight: kaiming_uniform(rng, &[d_in, d_out], d_in),
            bias: bias.then(|| zeros_param(&[d_out])),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

impl<T: Real> Parameterized<T> for Linear<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

/// 2-D convolution layer with bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub spec: Conv2dSpec,
}

impl<T: Real> Conv2d<T> {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, kernel: usize, spec: Conv2dSpec) -> Self {
        Conv2d {
            weight: kaiming_uniform(rng, &[c_out, c_in, kernel, kernel], c_in * kernel * kernel),
            bias: zeros_param(&[c_out]),
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, Some(&self.bias), self.spec)
    }
}

impl<T: Real> Parameterized<T> for Conv2d<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Batch normalization over axis 1 with running statistics.
///
/// The statistics sit behind a mutex so a shared model can be evaluated from
/// several threads; train-mode forwards update them.
#[derive(Debug)]
pub struct BatchNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: Mutex<BatchNormState<T>>,
}

impl<T: Real> Clone for BatchNorm<T> {
    fn clone(&self) -> Self {
        BatchNorm {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            state: Mutex::new(self.state()),
        }
    }
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones(&[channels]).requires_grad(),
            beta: zeros_param(&[channels]),
            state: Mutex::new(BatchNormState::new(channels)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut st = self.state.lock().expect("norm stats lock");
        x.batch_norm(&self.gamma, &self.beta, &mut st, mode)
    }

    /// Normalizes the last axis of `[.., D]` rows.
    pub fn forward_rows(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let d = *x.shape().last().expect("rank >= 1");
        let rows = x.numel() / d;
        self.forward(&x.reshape(&[rows, d])?, mode)?.reshape(x.shape())
    }

    pub fn state(&self) -> BatchNormState<T> {
        self.state.lock().expect("norm stats lock").clone()
    }

    pub fn set_state(&self, state: BatchNormState<T>) {
        *self.state.lock().expect("norm stats lock") = state;
    }
}

impl<T: Real> Parameterized<T> for BatchNorm<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }

    fn norms<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a BatchNorm<T>)>) {
        out.push((prefix.to_string(), self));
    }
}
