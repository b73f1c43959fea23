use std::str::FromStr;

use rand::Rng;

use super::{Real, Tensor};
use crate::error::VigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Normalizes over the last axis.
    Softmax,
}

impl FromStr for Activation {
    type Err = VigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(VigError::Usage(format!("unknown activation '{other}'"))),
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_rows<T: Real>(x: &[T], width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

impl<T: Real> Tensor<T> {
    pub fn activation(&self, kind: Activation) -> Tensor<T> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Sigmoid => self.sigmoid(),
            Activation::Softmax => self.softmax(),
        }
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| if v < T::zero() { T::zero() } else { v }).collect();
        Tensor::from_op(
            "relu",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|ctx| {
                let x = ctx.inputs[0].data();
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| sigmoid(v)).collect();
        Tensor::from_op(
            "sigmoid",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(ctx.output)
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect(),
                )]
            }),
        )
    }

    pub fn softmax(&self) -> Tensor<T> {
        let width = *self.shape().last().expect("rank >= 1");
        let data = softmax_rows(self.data(), width);
        Tensor::from_op(
            "softmax",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gx = Vec::with_capacity(ctx.grad.len());
                for (g, s) in ctx.grad.chunks_exact(width).zip(ctx.output.chunks_exact(width)) {
                    let dot: T = g.iter().zip(s).map(|(&a, &b)| a * b).sum();
                    gx.extend(g.iter().zip(s).map(|(&gi, &si)| si * (gi - dot)));
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. `p == 0` returns the input.
    pub fn dropout<R: Rng>(&self, p: f64, rng: &mut R) -> Tensor<T> {
        if p <= 0.0 {
            return self.clone();
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Tensor::from_op(
            "dropout",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]),
        )
    }
}
