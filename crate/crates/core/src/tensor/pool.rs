use super::{Real, Tensor};
use crate::error::Result;

impl<T: Real> Tensor<T> {
    /// Spatial mean of `[B,C,H,W]`, giving `[B,C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        self.expect_rank("global_avg_pool", 4)?;
        let &[b, c, h, w] = self.shape() else { unreachable!() };
        let area = h * w;
        let inv = T::one() / T::lit(area as f64);
        let data = self
            .data()
            .chunks_exact(area)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(Tensor::from_op(
            "global_avg_pool",
            data,
            vec![b, c],
            vec![self.clone()],
            Box::new(move |ctx| {
                vec![Some(ctx.grad.iter().flat_map(|&g| std::iter::repeat_n(g * inv, area)).collect())]
            }),
        ))
    }
}
