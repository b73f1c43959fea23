use super::{Real, Tensor};
use crate::error::{Result, VigError};

/// Source taps along one axis: (lower index, upper index, upper weight).
/// Align-corners mapping: src = dst * (S-1)/(D-1), or 0 when D == 1.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|d| {
            let pos = if dst > 1 {
                d as f64 * (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

impl<T: Real> Tensor<T> {
    /// Bilinear resampling of `[B,C,H,W]` to `[B,C,out_h,out_w]` with
    /// corner-aligned sampling. Matching sizes return the input unchanged.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        self.expect_rank("bilinear_resize", 4)?;
        if out_h == 0 || out_w == 0 {
            return Err(VigError::dim(
                "bilinear_resize",
                format!("output size {out_h}x{out_w} must be positive"),
            ));
        }
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let rows = axis_taps(h, out_h);
        let cols = axis_taps(w, out_w);
        let x = self.data();
        let mut out = Vec::with_capacity(b * c * out_h * out_w);
        for plane in x.chunks_exact(h * w) {
            for &(y0, y1, fy) in &rows {
                let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
                for &(x0, x1, fx) in &cols {
                    let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                    let top = plane[y0 * w + x0] * gx + plane[y0 * w + x1] * fx;
                    let bottom = plane[y1 * w + x0] * gx + plane[y1 * w + x1] * fx;
                    out.push(top * gy + bottom * fy);
                }
            }
        }
        Ok(Tensor::from_op(
            "bilinear_resize",
            out,
            vec![b, c, out_h, out_w],
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut gx_all = vec![T::zero(); b * c * h * w];
                for (gp, g) in gx_all.chunks_exact_mut(h * w).zip(ctx.grad.chunks_exact(out_h * out_w)) {
                    for (i, &(y0, y1, fy)) in rows.iter().enumerate() {
                        let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
                        for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
                            let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                            let v = g[i * out_w + j];
                            gp[y0 * w + x0] = gp[y0 * w + x0] + v * gy * gx;
                            gp[y0 * w + x1] = gp[y0 * w + x1] + v * gy * fx;
                            gp[y1 * w + x0] = gp[y1 * w + x0] + v * fy * gx;
                            gp[y1 * w + x1] = gp[y1 * w + x1] + v * fy * fx;
                        }
                    }
                }
                vec![Some(gx_all)]
            }),
        ))
    }
}
