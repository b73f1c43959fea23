use super::{numel_of, Real, Tensor};
use crate::error::{Result, VigError};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(VigError::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|&g| -g).collect()),
                ]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(
            "mul",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                vec![
                    Some(ctx.grad.iter().zip(b).map(|(&g, &v)| g * v).collect()),
                    Some(ctx.grad.iter().zip(a).map(|(&g, &v)| g * v).collect()),
                ]
            }),
        ))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            "scale",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * c).collect())]),
        )
    }

    pub fn square(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * v).collect();
        Tensor::from_op(
            "square",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|ctx| {
                let two = T::lit(2.0);
                let x = ctx.inputs[0].data();
                vec![Some(ctx.grad.iter().zip(x).map(|(&g, &v)| two * v * g).collect())]
            }),
        )
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::lit(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Same data under a new shape. The buffer is shared, not copied.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(VigError::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        if !self.tracks_grad() {
            return Ok(Tensor::leaf(self.shared_data(), shape.to_vec(), false));
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Adds `bias[N]` to every row of a tensor whose last extent is `N`.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let n = *self.shape().last().expect("rank >= 1");
        bias.expect_shape("add_bias", &[n])?;
        let b = bias.data();
        let data = self
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        Ok(Tensor::from_op(
            "add_bias",
            data,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Box::new(move |ctx| {
                let mut gb = vec![T::zero(); n];
                for row in ctx.grad.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
                }
                vec![Some(ctx.grad.to_vec()), Some(gb)]
            }),
        ))
    }

    /// Adds `pe` (shape = this tensor's shape without the leading axis) to
    /// every slice along the leading axis.
    pub fn add_broadcast_leading(&self, pe: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() < 2 || &self.shape()[1..] != pe.shape() {
            return Err(VigError::dim(
                "add_broadcast_leading",
                format!("cannot broadcast {:?} over {:?}", pe.shape(), self.shape()),
            ));
        }
        let m = pe.numel();
        let p = pe.data();
        let data = self
            .data()
            .chunks_exact(m)
            .flat_map(|slice| slice.iter().zip(p).map(|(&x, &y)| x + y))
            .collect();
        Ok(Tensor::from_op(
            "add_broadcast_leading",
            data,
            self.shape().to_vec(),
            vec![self.clone(), pe.clone()],
            Box::new(move |ctx| {
                let mut gp = vec![T::zero(); m];
                for slice in ctx.grad.chunks_exact(m) {
                    gp.iter_mut().zip(slice).for_each(|(a, &g)| *a = *a + g);
                }
                vec![Some(ctx.grad.to_vec()), Some(gp)]
            }),
        ))
    }

    /// `[B, C, H, W]` feature map to `[B, H*W, C]` patch rows.
    pub fn nchw_to_tokens(&self) -> Result<Tensor<T>> {
        self.expect_rank("nchw_to_tokens", 4)?;
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        let n = h * w;
        let data = transpose_inner(self.data(), b, c, n);
        Ok(Tensor::from_op(
            "nchw_to_tokens",
            data,
            vec![b, n, c],
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(transpose_inner(ctx.grad, b, n, c))]),
        ))
    }

    /// `[B, H*W, C]` patch rows back to a `[B, C, H, W]` feature map.
    pub fn tokens_to_nchw(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        self.expect_rank("tokens_to_nchw", 3)?;
        let &[b, n, c] = self.shape() else { unreachable!() };
        if n != h * w {
            return Err(VigError::dim(
                "tokens_to_nchw",
                format!("{n} tokens do not form a {h}x{w} grid"),
            ));
        }
        let data = transpose_inner(self.data(), b, n, c);
        Ok(Tensor::from_op(
            "tokens_to_nchw",
            data,
            vec![b, c, h, w],
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(transpose_inner(ctx.grad, b, c, n))]),
        ))
    }
}

/// Transposes each of `batch` row-major `[rows, cols]` blocks.
fn transpose_inner<T: Real>(src: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for (s, d) in src.chunks_exact(rows * cols).zip(out.chunks_exact_mut(rows * cols)) {
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
    debug_assert_eq!(src.len(), batch * rows * cols);
    out
}
