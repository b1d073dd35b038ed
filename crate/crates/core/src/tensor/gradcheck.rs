//! Central-difference gradient verification.

use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Max relative error between central differences of `f` and `analytic`
/// over every entry of `x`.
pub fn finite_diff_check<F: Real>(
    f: impl Fn(&Tensor<F>) -> F,
    x: &Tensor<F>,
    analytic: &Tensor<F>,
    eps: f64,
) -> Result<f64> {
    let all: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, analytic, eps, &all)
}

/// Like [`finite_diff_check`] but only probes the listed flat indices.
pub fn finite_diff_check_at<F: Real>(
    f: impl Fn(&Tensor<F>) -> F,
    x: &Tensor<F>,
    analytic: &Tensor<F>,
    eps: f64,
    indices: &[usize],
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    if x.shape() != analytic.shape() {
        return shape_err(format!(
            "analytic {:?} for input {:?}",
            analytic.shape(),
            x.shape()
        ));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + F::of(eps);
        let up = f(&probe).as_f64();
        probe.data_mut()[i] = orig - F::of(eps);
        let down = f(&probe).as_f64();
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at index {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i].as_f64();
        let denom = numeric.abs().max(a.abs()).max(1e-12);
        worst = worst.max((numeric - a).abs() / denom);
    }
    Ok(worst)
}
