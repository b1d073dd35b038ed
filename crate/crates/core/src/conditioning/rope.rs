//! 1D rotary position embedding and its segment-scaled variant.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Frequencies `θ_j = base^(−2j/d)` for `j < d/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct RopeTable {
    dim: usize,
    base: f64,
    theta: Vec<f64>,
}

impl RopeTable {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "rotary dimension must be even and positive, got {dim}"
            )));
        }
        if !(base > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rotary base must exceed 1, got {base}"
            )));
        }
        let theta = (0..dim / 2)
            .map(|j| base.powf(-2.0 * j as f64 / dim as f64))
            .collect();
        Ok(Self { dim, base, theta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Cosines and sines of `m·θ_j`.
    pub fn cos_sin<F: Real>(&self, m: usize) -> (Vec<F>, Vec<F>) {
        let angles: Vec<f64> = self.theta.iter().map(|&t| m as f64 * t).collect();
        (
            angles.iter().map(|a| F::of(a.cos())).collect(),
            angles.iter().map(|a| F::of(a.sin())).collect(),
        )
    }
}

/// Rotates each pair `(x_{2j}, x_{2j+1})` of the last axis by `m·θ_j`.
/// Position 0 returns the input unchanged.
pub fn apply_rope<F: Real>(x: &Tensor<F>, m: usize, table: &RopeTable) -> Result<Tensor<F>> {
    if x.cols() != table.dim() {
        return shape_err(format!(
            "last extent {} but rotary table has dim {}",
            x.cols(),
            table.dim()
        ));
    }
    let mut out = x.clone();
    if m == 0 {
        return Ok(out);
    }
    let (c, s) = table.cos_sin::<F>(m);
    for row in out.data_mut().chunks_exact_mut(table.dim()) {
        crate::tensor::rotate_row(row, &c, &s, false);
    }
    Ok(out)
}

/// Rotary embedding at the scaled position `segment · scale`.
pub fn apply_arope<F: Real>(
    x: &Tensor<F>,
    segment: usize,
    scale: usize,
    table: &RopeTable,
) -> Result<Tensor<F>> {
    apply_rope(x, segment * scale, table)
}
