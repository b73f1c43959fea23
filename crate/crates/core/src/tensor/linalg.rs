use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Result, VigError};

// Below this many multiply-adds the rayon split costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 16;

/// Row-major `[m,k] x [k,n]`. Each output element is accumulated over `k`
/// in ascending order starting from zero, independent of threading.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    let row = |(i, out): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

impl<T: Real> Tensor<T> {
    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (a, b) => {
                return Err(VigError::dim(
                    "matmul",
                    format!("cannot multiply {a:?} by {b:?}"),
                ))
            }
        };
        let data = gemm(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            "matmul",
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
                let ga = a
                    .tracks_grad()
                    .then(|| gemm(ctx.grad, &transpose(b.data(), k, n), m, n, k));
                let gb = b
                    .tracks_grad()
                    .then(|| gemm(&transpose(a.data(), m, k), ctx.grad, k, m, n));
                vec![ga, gb]
            }),
        ))
    }

    /// Applies `x W (+ b)` over the last axis of a tensor of any rank >= 2.
    /// `weight` is `[in, out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let d_in = *self.shape().last().expect("rank >= 1");
        if weight.rank() != 2 || weight.shape()[0] != d_in {
            return Err(VigError::dim(
                "linear",
                format!("input {:?} incompatible with weight {:?}", self.shape(), weight.shape()),
            ));
        }
        let d_out = weight.shape()[1];
        let rows = self.numel() / d_in;
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let mut y = self.reshape(&[rows, d_in])?.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add_bias(b)?;
        }
        y.reshape(&out_shape)
    }

    /// Block-diagonal linear map: the last axis is split into `G` contiguous
    /// groups of width `I`, each mapped by its own `[I, O]` slice of
    /// `weight[G, I, O]`; group outputs are concatenated to width `G*O`.
    pub fn grouped_linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (g, i, o) = match weight.shape() {
            &[g, i, o] => (g, i, o),
            s => return Err(VigError::dim("grouped_linear", format!("weight must be [G,I,O], got {s:?}"))),
        };
        let width = *self.shape().last().expect("rank >= 1");
        if width != g * i {
            return Err(VigError::dim(
                "grouped_linear",
                format!("input width {width} != groups {g} x group width {i}"),
            ));
        }
        let rows = self.numel() / width;
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = g * o;

        let x = self.data();
        let w = weight.data();
        let mut out = vec![T::zero(); rows * g * o];
        for grp in 0..g {
            let xs = gather_cols(x, rows, width, grp * i, i);
            let ys = gemm(&xs, &w[grp * i * o..(grp + 1) * i * o], rows, i, o);
            scatter_cols(&mut out, &ys, rows, g * o, grp * o, o);
        }
        let y = Tensor::from_op(
            "grouped_linear",
            out,
            out_shape.clone(),
            vec![self.clone(), weight.clone()],
            Box::new(move |ctx| {
                let (xt, wt) = (&ctx.inputs[0], &ctx.inputs[1]);
                let (x, w) = (xt.data(), wt.data());
                let mut gx = xt.tracks_grad().then(|| vec![T::zero(); x.len()]);
                let mut gw = wt.tracks_grad().then(|| vec![T::zero(); w.len()]);
                for grp in 0..g {
                    let gy = gather_cols(ctx.grad, rows, g * o, grp * o, o);
                    if let Some(gx) = gx.as_mut() {
                        let wg = transpose(&w[grp * i * o..(grp + 1) * i * o], i, o);
                        let part = gemm(&gy, &wg, rows, o, i);
                        scatter_cols(gx, &part, rows, width, grp * i, i);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let xs = gather_cols(x, rows, width, grp * i, i);
                        let part = gemm(&transpose(&xs, rows, i), &gy, i, rows, o);
                        gw[grp * i * o..(grp + 1) * i * o].copy_from_slice(&part);
                    }
                }
                vec![gx, gw]
            }),
        );
        match bias {
            Some(b) => y.add_bias(b),
            None => Ok(y),
        }
    }
}

fn gather_cols<T: Real>(src: &[T], rows: usize, width: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&src[r * width + start..r * width + start + len]);
    }
    out
}

fn scatter_cols<T: Real>(dst: &mut [T], src: &[T], rows: usize, width: usize, start: usize, len: usize) {
    for r in 0..rows {
        dst[r * width + start..r * width + start + len].copy_from_slice(&src[r * len..(r + 1) * len]);
    }
}
