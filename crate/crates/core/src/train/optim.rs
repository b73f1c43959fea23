use std::collections::HashMap;

use crate::nn::Parameterized;
use crate::tensor::{Real, Tensor};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// One AdamW update of a flat parameter at step `t` (1-based):
///
/// m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
///
/// with the decay term applied to the pre-update parameter.
pub fn adamw_update<T: Real>(param: &mut [T], grad: &[T], moments: &mut Moments<T>, t: u64, cfg: &AdamWConfig) {
    assert!(t >= 1, "AdamW steps are 1-based");
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - T::lit(cfg.beta1.powi(t as i32));
    let bc2 = T::one() - T::lit(cfg.beta2.powi(t as i32));
    let (lr, eps, wd) = (T::lit(cfg.lr), T::lit(cfg.eps), T::lit(cfg.weight_decay));
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut moments.m).zip(&mut moments.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * *p;
    }
}

/// AdamW over the named parameters of a model.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    pub config: AdamWConfig,
    /// Number of steps taken so far.
    pub step: u64,
    pub state: HashMap<String, Moments<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            state: HashMap::new(),
        }
    }

    /// Applies one update using the gradients accumulated on the model's
    /// leaves, then replaces each leaf with a fresh one (which also clears
    /// its gradient). Parameters no backward pass reached are left alone.
    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M) {
        self.step += 1;
        for (name, p) in model.named_params_mut() {
            let Some(grad) = p.grad() else { continue };
            let mut data = p.to_vec();
            let moments = self.state.entry(name).or_insert_with(|| Moments {
                m: vec![T::zero(); data.len()],
                v: vec![T::zero(); data.len()],
            });
            adamw_update(&mut data, &grad, moments, self.step, &self.config);
            *p = Tensor::param(data, p.shape()).expect("shape unchanged");
        }
    }
}
