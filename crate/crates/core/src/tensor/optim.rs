use super::{Real, Tensor, TensorMap};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for every parameter plus step bookkeeping.
#[derive(Clone, Debug)]
pub struct AdamWState<F> {
    pub config: AdamWConfig,
    pub m: TensorMap<F>,
    pub v: TensorMap<F>,
    /// Applied steps; drives bias correction.
    pub step: u64,
    /// Steps refused because a gradient was not finite.
    pub skipped: u64,
}

impl<F: Real> AdamWState<F> {
    pub fn new(config: AdamWConfig, params: &TensorMap<F>) -> Self {
        let zeros = |p: &TensorMap<F>| {
            p.iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect()
        };
        Self {
            config,
            m: zeros(params),
            v: zeros(params),
            step: 0,
            skipped: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held NaN or ±inf; parameters and moments are untouched.
    SkippedNonFinite,
}

/// One AdamW update with bias-corrected moments and decoupled weight decay.
///
/// Parameters without an entry in `grads` are treated as having zero
/// gradient.
pub fn adamw_step<F: Real>(
    params: &mut TensorMap<F>,
    grads: &TensorMap<F>,
    state: &mut AdamWState<F>,
    lr: f64,
) -> Result<StepOutcome> {
    if !(lr > 0.0) {
        return Err(crate::Error::InvalidArgument(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    for (name, g) in grads {
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            Some(p) => {
                return shape_err(format!(
                    "gradient {name}: {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                ))
            }
            None => return shape_err(format!("gradient for unknown parameter {name}")),
        }
    }
    if grads.values().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(StepOutcome::SkippedNonFinite);
    }
    for (name, p) in params.iter() {
        if !state.m.contains_key(name) {
            state
                .m
                .insert(name.clone(), Tensor::zeros(p.shape().to_vec()));
            state
                .v
                .insert(name.clone(), Tensor::zeros(p.shape().to_vec()));
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = F::of(1.0 - c.beta1.powi(t));
    let bc2 = F::of(1.0 - c.beta2.powi(t));
    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
    let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
    let lr_f = F::of(lr);
    let decay = F::one() - F::of(lr * c.weight_decay);
    let eps = F::of(c.eps);

    for (name, p) in params.iter_mut() {
        let g = grads.get(name);
        let m = state.m.get_mut(name).expect("moment allocated above");
        let v = state.v.get_mut(name).expect("moment allocated above");
        for i in 0..p.len() {
            let gi = g.map_or(F::zero(), |g| g.data()[i]);
            let mi = b1 * m.data()[i] + one_b1 * gi;
            let vi = b2 * v.data()[i] + one_b2 * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let w = p.data()[i] * decay;
            p.data_mut()[i] = w - lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(StepOutcome::Applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> TensorMap<f64> {
        [("w".to_string(), Tensor::scalar(w))].into_iter().collect()
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = single(1.25);
        let g = single(0.0);
        let mut s = AdamWState::new(AdamWConfig::default(), &p);
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut s, 0.1).unwrap();
        }
        assert_eq!(p["w"].data()[0], 1.25);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after one step, so w -= lr / (1 + 1e-8).
        let mut p = single(1.0);
        let mut s = AdamWState::new(AdamWConfig::default(), &p);
        adamw_step(&mut p, &single(1.0), &mut s, 0.1).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p["w"].data()[0] - expected).abs() < 1e-15);
        assert!((p["w"].data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = single(1.0);
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut s = AdamWState::new(cfg, &p);
        adamw_step(&mut p, &single(0.0), &mut s, 0.1).unwrap();
        assert!((p["w"].data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = single(2.0);
        let mut s = AdamWState::new(AdamWConfig::default(), &p);
        let out = adamw_step(&mut p, &single(f64::NAN), &mut s, 0.1).unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(p["w"].data()[0], 2.0);
        assert_eq!((s.step, s.skipped), (0, 1));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = single(2.0);
        let g: TensorMap<f64> = [("w".to_string(), Tensor::zeros([2]))]
            .into_iter()
            .collect();
        let mut s = AdamWState::new(AdamWConfig::default(), &p);
        assert!(adamw_step(&mut p, &g, &mut s, 0.1).is_err());
        assert!(adamw_step(&mut p, &single(0.0), &mut s, 0.0).is_err());
    }
}
