use super::linalg::{gemm, transpose};
use super::{Real, Tensor};
use crate::error::{Result, VigError};

/// Stride and symmetric zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Conv2dSpec { stride, pad }
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        (self.stride >= 1 && kernel <= padded).then(|| (padded - kernel) / self.stride + 1)
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every (column-matrix index, image index) pair that lies inside
    /// the unpadded image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let p = self.cols();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    for oi in 0..self.oh {
                        let y = (oi * self.stride + ki) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        for oj in 0..self.ow {
                            let x = (oj * self.stride + kj) as isize - self.pad as isize;
                            if x < 0 || x >= self.w as isize {
                                continue;
                            }
                            let src = (ci * self.h + y as usize) * self.w + x as usize;
                            f(row * p + oi * self.ow + oj, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, image: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.rows() * self.cols()];
        self.for_each_tap(|dst, src| cols[dst] = image[src]);
        cols
    }

    fn col2im_add<T: Real>(&self, cols: &[T], image: &mut [T]) {
        self.for_each_tap(|src, dst| image[dst] = image[dst] + cols[src]);
    }
}

impl<T: Real> Tensor<T> {
    /// 2-D cross-correlation of `[B,C,H,W]` with `weight[O,C,kh,kw]`,
    /// lowered to a patch gather followed by a matrix product.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        self.expect_rank("conv2d", 4)?;
        weight.expect_rank("conv2d", 4)?;
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        let &[o, wc, kh, kw] = weight.shape() else { unreachable!() };
        if wc != c {
            return Err(VigError::dim(
                "conv2d",
                format!("input {:?} has {c} channels, weight {:?} expects {wc}", self.shape(), weight.shape()),
            ));
        }
        if spec.stride == 0 {
            return Err(VigError::Config("conv2d stride must be >= 1".into()));
        }
        let (Some(oh), Some(ow)) = (spec.output_extent(h, kh), spec.output_extent(w, kw)) else {
            return Err(VigError::dim(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * spec.pad, w + 2 * spec.pad),
            ));
        };
        if let Some(bias) = bias {
            bias.expect_shape("conv2d", &[o])?;
        }
        let geo = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride: spec.stride,
            pad: spec.pad,
        };
        let (k, p) = (geo.rows(), geo.cols());
        let x = self.data();
        let wd = weight.data();
        let mut out = Vec::with_capacity(b * o * p);
        for img in x.chunks_exact(c * h * w) {
            let mut y = gemm(wd, &geo.im2col(img), o, k, p);
            if let Some(bias) = bias {
                for (row, &bv) in y.chunks_exact_mut(p).zip(bias.data()) {
                    row.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
            out.extend(y);
        }

        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            "conv2d",
            out,
            vec![b, o, oh, ow],
            inputs,
            Box::new(move |ctx| {
                let (xt, wt) = (&ctx.inputs[0], &ctx.inputs[1]);
                let x = xt.data();
                let w_t = transpose(wt.data(), o, k);
                let mut gx = xt.tracks_grad().then(|| vec![T::zero(); x.len()]);
                let mut gw = wt.tracks_grad().then(|| vec![T::zero(); o * k]);
                for (bi, gy) in ctx.grad.chunks_exact(o * p).enumerate() {
                    let img = &x[bi * c * h * w..(bi + 1) * c * h * w];
                    if let Some(gw) = gw.as_mut() {
                        let cols_t = transpose(&geo.im2col(img), k, p);
                        let part = gemm(gy, &cols_t, o, p, k);
                        gw.iter_mut().zip(part).for_each(|(a, v)| *a = *a + v);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gcols = gemm(&w_t, gy, k, o, p);
                        geo.col2im_add(&gcols, &mut gx[bi * c * h * w..(bi + 1) * c * h * w]);
                    }
                }
                let mut grads = vec![gx, gw];
                if let Some(bt) = ctx.inputs.get(2) {
                    grads.push(bt.tracks_grad().then(|| {
                        let mut gb = vec![T::zero(); o];
                        for gy in ctx.grad.chunks_exact(o * p) {
                            for (acc, row) in gb.iter_mut().zip(gy.chunks_exact(p)) {
                                *acc = *acc + row.iter().copied().sum();
                            }
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }

    /// Pads `[B,C,H,W]` on the bottom/right by replicating the last row or
    /// column so both spatial extents become even. Even inputs pass through.
    pub fn pad_replicate_even(&self) -> Result<Tensor<T>> {
        self.expect_rank("pad_replicate_even", 4)?;
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        let (nh, nw) = (h + h % 2, w + w % 2);
        if (nh, nw) == (h, w) {
            return Ok(self.clone());
        }
        let src_index = move |y: usize, x: usize| y.min(h - 1) * w + x.min(w - 1);
        let x = self.data();
        let mut out = Vec::with_capacity(b * c * nh * nw);
        for plane in x.chunks_exact(h * w) {
            for y in 0..nh {
                for xx in 0..nw {
                    out.push(plane[src_index(y, xx)]);
                }
            }
        }
        Ok(Tensor::from_op(
            "pad_replicate_even",
            out,
            vec![b, c, nh, nw],
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gx = vec![T::zero(); b * c * h * w];
                for (gp, g) in gx.chunks_exact_mut(h * w).zip(ctx.grad.chunks_exact(nh * nw)) {
                    for y in 0..nh {
                        for xx in 0..nw {
                            let s = src_index(y, xx);
                            gp[s] = gp[s] + g[y * nw + xx];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
