//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Result, VigError};
use crate::tensor::{Real, Tensor};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the worst input element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Default central-difference step for an element type: 1e-3 for 32-bit,
/// 1e-5 for 64-bit.
pub fn default_step<T: Real>() -> f64 {
    if std::mem::size_of::<T>() <= 4 {
        1e-3
    } else {
        1e-5
    }
}

/// |a - n| / max(1, |a|, |n|)
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the gradient of scalar `f` at `x` with central differences.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    grad_check_with(f, x, tol, default_step::<T>(), |g| g)
}

/// Like [`grad_check`], with an explicit step and a hook that may rewrite the
/// analytic gradient before comparison (used to exercise failure reporting).
pub fn grad_check_with<T, F, G>(f: F, x: &Tensor<T>, tol: f64, step: f64, mut adjust: G) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    G: FnMut(Vec<T>) -> Vec<T>,
{
    let leaf = x.detach().requires_grad();
    let out = f(&leaf)?;
    if out.numel() != 1 {
        return Err(VigError::Usage(format!(
            "grad_check needs a scalar function, got output shape {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    let analytic = adjust(leaf.grad().unwrap_or_else(|| vec![T::zero(); x.numel()]));

    let base = x.to_vec();
    let h = T::lit(step);
    let eval = |data: Vec<T>| -> Result<f64> { Ok(f(&Tensor::new(data, x.shape())?)?.item().as_f64()) };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        tol,
        passed: true,
    };
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] = plus[i] + h;
        let mut minus = base.clone();
        minus[i] = minus[i] - h;
        let actual_step = (plus[i] - minus[i]).as_f64();
        let numeric = (eval(plus)? - eval(minus)?) / actual_step;
        let a = analytic[i].as_f64();
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || i == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
