//! Grapher layer (max-relative graph convolution between two fully
//! connected maps) and the feed-forward block that follows it.
//!
//! Both blocks take patch rows shaped `[N, D]` (one image) or `[B, N, D]`
//! (a batch, one graph per image) and return the same shape, with a
//! residual connection around the learned path.

use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VigError};
use crate::graph::{knn_rows, PatchGraph};
use crate::nn::{join, kaiming_uniform, zeros_param, BatchNorm, Linear, Parameterized};
use crate::tensor::{Mode, Real, Tensor};

fn batch_dims(op: &'static str, x: &Tensor<impl Real>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, d] => Ok((1, n, d)),
        [b, n, d] => Ok((b, n, d)),
        ref s => Err(VigError::dim(op, format!("expected [N,D] or [B,N,D], got {s:?}"))),
    }
}

/// Builds one KNN graph per image of `x` with `k` clamped to `N-1`.
pub fn build_graphs<T: Real>(x: &Tensor<T>, k: usize) -> Result<Vec<PatchGraph>> {
    let (b, n, d) = batch_dims("build_graphs", x)?;
    let k = k.min(n - 1);
    Ok(x.data()
        .chunks_exact(n * d)
        .take(b)
        .map(|img| knn_rows(img, n, d, k))
        .collect())
}

/// Row `i` becomes `[x_i, max_j (x_j - x_i)]` over the out-neighbors `j` of
/// `i`. Gradients route to `x_i` and to the maximizing neighbor of each
/// component (first in neighbor order on ties). Nodes without neighbors get
/// a zero relative half.
pub fn max_relative_aggregate<T: Real>(x: &Tensor<T>, graphs: &[PatchGraph]) -> Result<Tensor<T>> {
    let (b, n, d) = batch_dims("max_relative_aggregate", x)?;
    if graphs.len() != b || graphs.iter().any(|g| g.num_nodes() != n) {
        return Err(VigError::dim(
            "max_relative_aggregate",
            format!(
                "{b} images of {n} nodes but graphs cover {:?}",
                graphs.iter().map(PatchGraph::num_nodes).collect::<Vec<_>>()
            ),
        ));
    }
    let data = x.data();
    let mut out = Vec::with_capacity(b * n * 2 * d);
    // flat source row of the winning neighbor for each (row, component)
    let mut argmax = Vec::with_capacity(b * n * d);
    for (bi, g) in graphs.iter().enumerate() {
        let base = bi * n;
        for i in 0..n {
            let xi = &data[(base + i) * d..(base + i + 1) * d];
            out.extend_from_slice(xi);
            let nbrs = g.neighbors(i);
            for c in 0..d {
                let mut best = T::zero();
                let mut best_row = usize::MAX;
                for &j in nbrs {
                    let v = data[(base + j) * d + c] - xi[c];
                    if best_row == usize::MAX || v > best {
                        best = v;
                        best_row = base + j;
                    }
                }
                out.push(best);
                argmax.push(best_row);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = 2 * d;
    Ok(Tensor::from_op(
        "max_relative_aggregate",
        out,
        shape,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut gx = vec![T::zero(); b * n * d];
            for (row, g) in ctx.grad.chunks_exact(2 * d).enumerate() {
                for c in 0..d {
                    gx[row * d + c] = gx[row * d + c] + g[c];
                    let src = argmax[row * d + c];
                    if src != usize::MAX {
                        let gr = g[d + c];
                        gx[src * d + c] = gx[src * d + c] + gr;
                        gx[row * d + c] = gx[row * d + c] - gr;
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Parameters of one Grapher layer.
#[derive(Debug, Clone)]
pub struct GrapherBlock<T: Real> {
    pub dim: usize,
    pub heads: usize,
    /// D -> D, no bias.
    pub fc_nb: Linear<T>,
    pub nb_norm: BatchNorm<T>,
    /// `[heads, 2D/heads, D/heads]` block-diagonal update of the aggregate.
    pub update_weight: Tensor<T>,
    pub update_bias: Tensor<T>,
    /// D -> D with bias.
    pub fc_b: Linear<T>,
    pub b_norm: BatchNorm<T>,
}

impl<T: Real> GrapherBlock<T> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !(2 * dim).is_multiple_of(heads) || !dim.is_multiple_of(heads) {
            return Err(VigError::Config(format!(
                "grapher width {dim} (aggregate {}) is not divisible by {heads} heads",
                2 * dim
            )));
        }
        let group_in = 2 * dim / heads;
        Ok(GrapherBlock {
            dim,
            heads,
            fc_nb: Linear::new(rng, dim, dim, false),
            nb_norm: BatchNorm::new(dim),
            update_weight: kaiming_uniform(rng, &[heads, group_in, dim / heads], group_in),
            update_bias: zeros_param(&[dim]),
            fc_b: Linear::new(rng, dim, dim, true),
            b_norm: BatchNorm::new(dim),
        })
    }

    /// Projects `x` and builds one KNN graph per image from the projection.
    pub fn forward(&self, x: &Tensor<T>, k: usize, mode: Mode) -> Result<(Tensor<T>, Vec<PatchGraph>)> {
        self.forward_with(x, k, None, mode)
    }

    /// As [`forward`](Self::forward), reusing `graphs` when given.
    pub fn forward_with(
        &self,
        x: &Tensor<T>,
        k: usize,
        graphs: Option<&[PatchGraph]>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<PatchGraph>)> {
        let (_, _, d) = batch_dims("grapher_block", x)?;
        if d != self.dim {
            return Err(VigError::dim(
                "grapher_block",
                format!("block width {} but input {:?}", self.dim, x.shape()),
            ));
        }
        let y = self.nb_norm.forward_rows(&self.fc_nb.forward(x)?, mode)?;
        let graphs = match graphs {
            Some(g) => g.to_vec(),
            None => build_graphs(&y, k)?,
        };
        let agg = max_relative_aggregate(&y, &graphs)?;
        let h = agg.grouped_linear(&self.update_weight, Some(&self.update_bias))?;
        let out = self.b_norm.forward_rows(&self.fc_b.forward(&h.relu())?, mode)?;
        Ok((x.add(&out)?, graphs))
    }
}

impl<T: Real> Parameterized<T> for GrapherBlock<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.fc_nb.params(&join(prefix, "fc_nb"), out);
        self.nb_norm.params(&join(prefix, "nb_norm"), out);
        out.push((join(prefix, "update.weight"), self.update_weight.clone()));
        out.push((join(prefix, "update.bias"), self.update_bias.clone()));
        self.fc_b.params(&join(prefix, "fc_b"), out);
        self.b_norm.params(&join(prefix, "b_norm"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.fc_nb.params_mut(&join(prefix, "fc_nb"), out);
        self.nb_norm.params_mut(&join(prefix, "nb_norm"), out);
        out.push((join(prefix, "update.weight"), &mut self.update_weight));
        out.push((join(prefix, "update.bias"), &mut self.update_bias));
        self.fc_b.params_mut(&join(prefix, "fc_b"), out);
        self.b_norm.params_mut(&join(prefix, "b_norm"), out);
    }

    fn norms<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a BatchNorm<T>)>) {
        self.nb_norm.norms(&join(prefix, "nb_norm"), out);
        self.b_norm.norms(&join(prefix, "b_norm"), out);
    }
}

/// Two-layer MLP with a 4x hidden width: `x + W2 relu(W1 x) + b2`.
#[derive(Debug, Clone)]
pub struct FfnBlock<T: Real> {
    /// D -> 4D, no bias.
    pub fc1: Linear<T>,
    /// 4D -> D with bias.
    pub fc2: Linear<T>,
}

impl<T: Real> FfnBlock<T> {
    pub const HIDDEN_RATIO: usize = 4;

    pub fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let hidden = Self::HIDDEN_RATIO * dim;
        FfnBlock {
            fc1: Linear::new(rng, dim, hidden, false),
            fc2: Linear::new(rng, hidden, dim, true),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batch_dims("ffn_block", x)?;
        x.add(&self.fc2.forward(&self.fc1.forward(x)?.relu())?)
    }
}

impl<T: Real> Parameterized<T> for FfnBlock<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.fc1.params(&join(prefix, "fc1"), out);
        self.fc2.params(&join(prefix, "fc2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.fc1.params_mut(&join(prefix, "fc1"), out);
        self.fc2.params_mut(&join(prefix, "fc2"), out);
    }
}

/// Sets every parameter of `m` to zero.
pub fn zero_all_params<T: Real, M: Parameterized<T>>(m: &mut M) {
    for (_, p) in m.named_params_mut() {
        *p = Tensor::zeros(p.shape()).requires_grad();
    }
}
