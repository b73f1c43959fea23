//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vig_core::model::Task;
use vig_core::{ModelConfig, Parameterized, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(uniform(rng, n, -1.0, 1.0), shape).unwrap()
}

/// Values in [0.1, 1] with a random sign: kept away from relu kinks.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(v, shape).unwrap()
}

/// Brute-force KNN: sort every other node by (distance, index).
pub fn brute_knn(x: &[f64], n: usize, d: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let mut s = 0.0f64;
                for t in 0..d {
                    let diff = x[i * d + t] - x[j * d + t];
                    s += diff * diff;
                }
                (s, j)
            })
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(cand[..k].iter().map(|c| c.1));
    }
    out
}

/// Direct 2-D cross-correlation, accumulating taps in (channel, row, col)
/// order and adding the bias last.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv<T: vig_core::Real>(
    x: &[T],
    shape: [usize; 4],
    w: &[T],
    wshape: [usize; 4],
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> (Vec<T>, [usize; 4]) {
    let [b, c, h, wd] = shape;
    let [o, _, kh, kw] = wshape;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![T::zero(); b * o * oh * ow];
    for bi in 0..b {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + ci) * h + y as usize) * wd + xx as usize];
                                let wv = w[((oc * c + ci) * kh + ky) * kw + kx];
                                acc = acc + wv * xv;
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc = acc + bias[oc];
                    }
                    out[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [b, o, oh, ow])
}

/// Reference early-stopping / plateau simulator. Returns the learning rate
/// in effect after each epoch's update and the epoch at which training
/// stops (if any).
pub fn simulate_rules(
    losses: &[f64],
    lr0: f64,
    es_patience: usize,
    plateau_patience: usize,
    factor: f64,
    tol: f64,
) -> (Vec<f64>, Option<usize>) {
    let mut lr = lr0;
    let (mut best_es, mut wait_es) = (f64::INFINITY, 0usize);
    let (mut best_pl, mut wait_pl) = (f64::INFINITY, 0usize);
    let mut lrs = Vec::new();
    for (e, &l) in losses.iter().enumerate() {
        // plateau rule
        if l < best_pl - tol {
            best_pl = l;
            wait_pl = 0;
        } else {
            wait_pl += 1;
            if wait_pl > plateau_patience {
                lr /= factor;
                wait_pl = 0;
            }
        }
        lrs.push(lr);
        // early stopping
        if l < best_es - tol {
            best_es = l;
            wait_es = 0;
        } else {
            wait_es += 1;
            if wait_es >= es_patience {
                return (lrs, Some(e + 1));
            }
        }
    }
    (lrs, None)
}

/// Brute-force metrics straight from label sets.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMetrics {
    pub micro: [f64; 3],
    pub macro_: [f64; 3],
    pub accuracy: f64,
    pub max: [f64; 3],
    pub min: [f64; 3],
}

pub fn brute_metrics(pred: &[Vec<usize>], truth: &[Vec<usize>], classes: usize, task: Task) -> BruteMetrics {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut per = Vec::new();
    let (mut tp_all, mut pp_all, mut ap_all, mut correct_all) = (0, 0, 0, 0);
    // F1 = 2tp / (|predicted| + |actual|)
    for c in 0..classes {
        let (mut tp, mut pp, mut ap) = (0, 0, 0);
        for (p, t) in pred.iter().zip(truth) {
            let (ip, it) = (p.contains(&c), t.contains(&c));
            tp += (ip && it) as usize;
            pp += ip as usize;
            ap += it as usize;
            correct_all += (ip == it) as usize;
        }
        tp_all += tp;
        pp_all += pp;
        ap_all += ap;
        let (p, r) = (div(tp, pp), div(tp, ap));
        per.push([p, r, div(2 * tp, pp + ap)]);
    }
    let (mp, mr) = (div(tp_all, pp_all), div(tp_all, ap_all));
    let n = classes as f64;
    let mut macro_ = [0.0; 3];
    for s in &per {
        for i in 0..3 {
            macro_[i] += s[i];
        }
    }
    macro_.iter_mut().for_each(|v| *v /= n);
    let accuracy = match task {
        Task::Multiclass => div(
            pred.iter()
                .zip(truth)
                .filter(|(p, t)| {
                    let (mut a, mut b) = ((*p).clone(), (*t).clone());
                    a.sort();
                    b.sort();
                    a == b
                })
                .count(),
            pred.len(),
        ),
        Task::Multilabel => div(correct_all, pred.len() * classes),
    };
    let pick = |i: usize, f: fn(f64, f64) -> f64, init: f64| per.iter().map(|s| s[i]).fold(init, f);
    BruteMetrics {
        micro: [mp, mr, div(2 * tp_all, pp_all + ap_all)],
        macro_,
        accuracy,
        max: [0, 1, 2].map(|i| pick(i, f64::max, f64::NEG_INFINITY)),
        min: [0, 1, 2].map(|i| pick(i, f64::min, f64::INFINITY)),
    }
}

/// Parameter count from closed-form per-layer shapes, independent of the
/// model code.
pub fn param_count_oracle(cfg: &ModelConfig) -> (usize, usize) {
    let d = &cfg.stage_dims;
    let conv = |cin: usize, cout: usize| cin * cout * 9 + cout;
    let bn = |c: usize| 2 * c;
    let mut total = 0;
    // stem
    total += conv(cfg.in_channels, d[0] / 2) + bn(d[0] / 2);
    total += conv(d[0] / 2, d[0]) + bn(d[0]);
    // positional encoding
    let pe = (cfg.input_hw.0 / 4) * (cfg.input_hw.1 / 4) * d[0];
    total += pe;
    for s in 0..3 {
        let dim = d[s];
        let grapher = dim * dim + bn(dim) + cfg.heads * (2 * dim / cfg.heads) * (dim / cfg.heads) + dim + dim * dim + dim + bn(dim);
        let ffn = dim * 4 * dim + 4 * dim * dim + dim;
        total += cfg.stage_depths[s] * (grapher + ffn);
        if s < 2 {
            total += conv(dim, d[s + 1]) + bn(d[s + 1]);
        }
    }
    total += d[2] * cfg.head_hidden + cfg.head_hidden;
    total += cfg.head_hidden * cfg.num_classes + cfg.num_classes;
    (total, pe)
}

/// Copy of `m` with parameter `name` replaced by `value`.
pub fn with_param<M: Parameterized<f64> + Clone>(m: &M, name: &str, value: &Tensor<f64>) -> M {
    let mut c = m.clone();
    let mut hit = false;
    for (n, p) in c.named_params_mut() {
        if n == name {
            *p = value.clone();
            hit = true;
        }
    }
    assert!(hit, "no parameter named {name}");
    c
}

pub fn micro_config(task: Task, classes: usize) -> ModelConfig {
    let mut c = ModelConfig::new(3, (32, 32), classes, task);
    c.stage_dims = vec![32, 64, 128];
    c.stage_depths = vec![1, 1, 2];
    c.heads = 4;
    c.k = 4;
    c
}

/// The tiny 16x16 configuration used for end-to-end gradient checks.
pub fn gradcheck_config() -> ModelConfig {
    let mut c = ModelConfig::new(3, (16, 16), 3, Task::Multiclass);
    c.stage_dims = vec![8, 16, 32];
    c.stage_depths = vec![1, 1, 1];
    c.heads = 2;
    c.k = 2;
    c.head_hidden = 16;
    c
}
