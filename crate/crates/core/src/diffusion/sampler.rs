use serde::{Deserialize, Serialize};

use crate::backbone::{
    model_forward, BackboneConfig, GuidanceBundle, LatentClip, ModelConditioning, ModelParams,
};
use crate::error::{Error, Result};
use crate::tensor::{Real, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    /// Guidance applies while the normalized step position `i / steps`
    /// lies in `[lo, hi)`.
    pub cfg_interval: [f64; 2],
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            cfg_scale: 3.0,
            cfg_interval: [0.0, 0.4],
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.cfg_interval;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cfg interval [{lo}, {hi}] not within [0, 1]"
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cfg scale {} is not finite",
                self.cfg_scale
            )));
        }
        Ok(())
    }

    /// Whether step `i` of `steps` blends in the unconditional branch.
    pub fn guided(&self, i: usize) -> bool {
        let pos = i as f64 / self.steps as f64;
        self.cfg_scale != 1.0 && self.cfg_interval[0] <= pos && pos < self.cfg_interval[1]
    }
}

/// Conditioning branch requested from a [`VelocityField`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Conditional,
    Unconditional,
}

/// Anything that predicts a velocity for `z_t` at time `t`.
pub trait VelocityField<F: Real> {
    fn velocity(&self, z: &LatentClip<F>, t: f64, branch: Branch) -> Result<LatentClip<F>>;
}

/// The trained denoiser with fixed guidance and conditioning.
pub struct Denoiser<'a, F: Real> {
    pub config: &'a BackboneConfig,
    pub params: &'a ModelParams<F>,
    pub bundle: &'a GuidanceBundle<F>,
    pub cond: &'a ModelConditioning,
}

impl<F: Real> VelocityField<F> for Denoiser<'_, F> {
    fn velocity(&self, z: &LatentClip<F>, t: f64, branch: Branch) -> Result<LatentClip<F>> {
        match branch {
            Branch::Conditional => {
                model_forward(self.config, self.params, z, t, self.bundle, self.cond)
            }
            Branch::Unconditional => model_forward(
                self.config,
                self.params,
                z,
                t,
                self.bundle,
                &self.cond.unconditional(),
            ),
        }
    }
}

/// Seeded starting noise for [`sample`].
pub fn initial_noise<F: Real>(dims: [usize; 4], seed: u64) -> LatentClip<F> {
    LatentClip::unchecked(SeededRng::new(seed).normal_tensor(dims.to_vec(), 1.0))
}

/// Euler integration from `t = 1` to `t = 0` in uniform steps starting at
/// `z_1`: `z ← z − Δt·v_eff`, with `v_eff = v_u + s·(v_c − v_u)` on guided
/// steps and `v_c` otherwise.
pub fn sample_from<F: Real>(
    field: &impl VelocityField<F>,
    z1: LatentClip<F>,
    cfg: &SampleConfig,
) -> Result<LatentClip<F>> {
    cfg.validate()?;
    let n = cfg.steps;
    let dt = F::of(1.0 / n as f64);
    let s = F::of(cfg.cfg_scale);
    let mut z = z1;
    for i in 0..n {
        let t = 1.0 - i as f64 / n as f64;
        let vc = field.velocity(&z, t, Branch::Conditional)?;
        let v = if cfg.guided(i) {
            let vu = field.velocity(&z, t, Branch::Unconditional)?;
            vu.tensor().zip_map(vc.tensor(), |u, c| u + s * (c - u))?
        } else {
            vc.into_tensor()
        };
        z = LatentClip::new(z.tensor().zip_map(&v, |a, b| a - dt * b)?)?;
    }
    Ok(z)
}

/// [`sample_from`] with noise drawn from `cfg.seed`.
pub fn sample<F: Real>(
    field: &impl VelocityField<F>,
    dims: [usize; 4],
    cfg: &SampleConfig,
) -> Result<LatentClip<F>> {
    sample_from(field, initial_noise(dims, cfg.seed), cfg)
}
