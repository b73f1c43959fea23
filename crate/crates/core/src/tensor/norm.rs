use super::{Real, Tensor};
use crate::error::{Result, VigError};

/// Whether layers use batch statistics (and update running ones) or the
/// frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Real> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormState<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(Self::DEFAULT_MOMENTUM),
            eps: T::lit(Self::DEFAULT_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

impl<T: Real> Tensor<T> {
    /// Per-channel standardization of `[B, C, ...]` along axis 1.
    ///
    /// In train mode the batch mean and biased variance normalize the input
    /// and the running statistics move toward the batch mean and unbiased
    /// variance by `momentum`.
    pub fn batch_norm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        if self.rank() < 2 {
            return Err(VigError::dim("batch_norm", format!("need [B, C, ...], got {:?}", self.shape())));
        }
        let (b, c) = (self.shape()[0], self.shape()[1]);
        let inner: usize = self.shape()[2..].iter().product();
        gamma.expect_shape("batch_norm", &[c])?;
        beta.expect_shape("batch_norm", &[c])?;
        if state.channels() != c {
            return Err(VigError::dim(
                "batch_norm",
                format!("running stats hold {} channels, input has {c}", state.channels()),
            ));
        }
        if mode == Mode::Train && b < 2 {
            return Err(VigError::DegenerateBatch(format!(
                "batch_norm in train mode needs batch >= 2, got shape {:?}",
                self.shape()
            )));
        }
        let x = self.data();
        let count = b * inner;
        let n = T::lit(count as f64);
        let channel = move |i: usize| (i / inner) % c;

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                for (i, &v) in x.iter().enumerate() {
                    mean[channel(i)] = mean[channel(i)] + v;
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                let mut var = vec![T::zero(); c];
                for (i, &v) in x.iter().enumerate() {
                    let d = v - mean[channel(i)];
                    var[channel(i)] = var[channel(i)] + d * d;
                }
                var.iter_mut().for_each(|s| *s = *s / n);
                let m = state.momentum;
                let unbias = n / (n - T::one());
                for ch in 0..c {
                    state.running_mean[ch] = (T::one() - m) * state.running_mean[ch] + m * mean[ch];
                    state.running_var[ch] = (T::one() - m) * state.running_var[ch] + m * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        let xhat: Vec<T> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[channel(i)]) * inv_std[channel(i)])
            .collect();
        let (g, bt) = (gamma.data(), beta.data());
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| g[channel(i)] * h + bt[channel(i)])
            .collect();

        Ok(Tensor::from_op(
            "batch_norm",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx| {
                let gamma = ctx.inputs[1].data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (&gy, &h)) in ctx.grad.iter().zip(&xhat).enumerate() {
                    sum_g[channel(i)] = sum_g[channel(i)] + gy;
                    sum_gx[channel(i)] = sum_gx[channel(i)] + gy * h;
                }
                let gx = ctx.inputs[0].tracks_grad().then(|| {
                    ctx.grad
                        .iter()
                        .zip(&xhat)
                        .enumerate()
                        .map(|(i, (&gy, &h))| {
                            let ch = channel(i);
                            let scale = gamma[ch] * inv_std[ch];
                            match mode {
                                Mode::Train => scale * (gy - sum_g[ch] / n - h * sum_gx[ch] / n),
                                Mode::Eval => scale * gy,
                            }
                        })
                        .collect()
                });
                vec![gx, Some(sum_gx), Some(sum_g)]
            }),
        ))
    }
}
