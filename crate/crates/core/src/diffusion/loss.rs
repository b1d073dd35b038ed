use serde::{Deserialize, Serialize};

use crate::backbone::LatentClip;
use crate::error::{shape_err, Error, Result};
use crate::script::ActionScript;
use crate::tensor::Real;

/// Per-latent-frame interaction indicator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    values: Vec<bool>,
}

impl ActionMask {
    pub fn new(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn zeros(frames: usize) -> Self {
        Self {
            values: vec![false; frames],
        }
    }

    pub fn ones(frames: usize) -> Self {
        Self {
            values: vec![true; frames],
        }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&m| m).count()
    }

    /// Mask as `0`/`1` values per latent frame.
    pub fn as_f64(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Latent frame `ℓ` is set when any video frame in `[ℓ·c_t, (ℓ+1)·c_t)`
/// lies inside an interactive segment.
pub fn segments_to_action_mask(
    script: &ActionScript,
    frames: usize,
    c_t: usize,
) -> Result<ActionMask> {
    let latent = script.to_latent(frames, c_t)?;
    let mut values = vec![false; frames / c_t];
    for s in &latent.segments {
        values[s.start..s.end].iter_mut().for_each(|m| *m = true);
    }
    Ok(ActionMask { values })
}

/// `z_t = (1−t)·x0 + t·ε` and `v = ε − x0`.
pub fn make_training_pair<F: Real>(
    x0: &LatentClip<F>,
    eps: &LatentClip<F>,
    t: f64,
) -> Result<(LatentClip<F>, LatentClip<F>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    let (a, b) = (F::of(1.0 - t), F::of(t));
    let z = x0.tensor().zip_map(eps.tensor(), |x, e| a * x + b * e)?;
    let v = x0.tensor().zip_map(eps.tensor(), |x, e| e - x)?;
    Ok((LatentClip::new(z)?, LatentClip::new(v)?))
}

/// Timestep-dependent loss weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeight {
    #[default]
    Uniform,
    /// `0.35 / (t(1−t) + 0.1)`: 1 at `t = 0.5`, 3.5 at the ends.
    MidEmphasis,
}

impl std::str::FromStr for LossWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "mid-emphasis" => Ok(Self::MidEmphasis),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss weight kind {other:?}"
            ))),
        }
    }
}

pub fn loss_weight(t: f64, kind: LossWeight) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    Ok(match kind {
        LossWeight::Uniform => 1.0,
        LossWeight::MidEmphasis => 0.35 / (t * (1.0 - t) + 0.1),
    })
}

/// Value and diagnostics of the action-aware constraint loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcLoss {
    pub loss: f64,
    /// `w_t · mean((v̂ − v)²)`.
    pub base: f64,
    /// `w_t · λ · mean((M ⊙ (v̂ − v))²)`.
    pub masked: f64,
    /// Mean squared error over masked frames only; `None` without any.
    pub masked_frame_mse: Option<f64>,
}

fn check_mask(mask: &ActionMask, dims: [usize; 4], lambda: f64) -> Result<()> {
    if mask.len() != dims[0] {
        return shape_err(format!(
            "mask of {} frames for {} latent frames",
            mask.len(),
            dims[0]
        ));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be a finite value >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// `L = w_t·[mean((v̂−v)²) + λ·mean((M⊙(v̂−v))²)]`; both means divide by
/// the total element count. Accumulated in `f64`.
pub fn ac_loss<F: Real>(
    v_hat: &LatentClip<F>,
    v: &LatentClip<F>,
    mask: &ActionMask,
    lambda: f64,
    w_t: f64,
) -> Result<AcLoss> {
    v_hat.tensor().expect_same_shape(v.tensor())?;
    check_mask(mask, v.dims(), lambda)?;
    let n = v.tensor().len() as f64;
    let per_frame = v.frame_len();
    let (mut all, mut masked) = (0.0f64, 0.0f64);
    for (f, (a, b)) in v_hat
        .tensor()
        .data()
        .chunks_exact(per_frame)
        .zip(v.tensor().data().chunks_exact(per_frame))
        .enumerate()
    {
        let mut s = 0.0f64;
        for (&x, &y) in a.iter().zip(b) {
            let r = x.as_f64() - y.as_f64();
            s += r * r;
        }
        all += s;
        if mask.values[f] {
            masked += s;
        }
    }
    let base = w_t * all / n;
    let masked_term = w_t * lambda * masked / n;
    let count = mask.count();
    Ok(AcLoss {
        loss: base + masked_term,
        base,
        masked: masked_term,
        masked_frame_mse: (count > 0).then(|| masked / (count * per_frame) as f64),
    })
}

/// Per-element weights `w_t(1 + λ·M)/n` in latent layout, so that
/// `Σ weight·(v̂ − v)²` equals [`ac_loss`].
pub fn ac_loss_weights<F: Real>(
    dims: [usize; 4],
    mask: &ActionMask,
    lambda: f64,
    w_t: f64,
) -> Result<Vec<F>> {
    check_mask(mask, dims, lambda)?;
    let [t, c, h, w] = dims;
    let n = (t * c * h * w) as f64;
    let mut out = Vec::with_capacity(t * c * h * w);
    for &m in mask.values() {
        let wt = if m { w_t * (1.0 + lambda) / n } else { w_t / n };
        out.extend(std::iter::repeat_n(F::of(wt), c * h * w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{ActionLabel, ActionSegment};
    use crate::tensor::{SeededRng, Tensor};
    use proptest::prelude::*;

    fn clip(dims: [usize; 4], f: impl FnMut(usize) -> f64) -> LatentClip<f64> {
        LatentClip::new(Tensor::from_fn(dims.to_vec(), f)).unwrap()
    }

    #[test]
    fn training_pair_endpoints() {
        let d = [2, 1, 2, 2];
        let x0 = clip(d, |i| i as f64);
        let eps = clip(d, |i| 1.0 - 0.5 * i as f64);
        let (z, v) = make_training_pair(&x0, &eps, 0.0).unwrap();
        assert_eq!(z, x0);
        let ev = eps.tensor().zip_map(x0.tensor(), |e, x| e - x).unwrap();
        assert_eq!(v.tensor(), &ev);
        let (z, v) = make_training_pair(&x0, &eps, 1.0).unwrap();
        assert_eq!(z, eps);
        assert_eq!(v.tensor(), &ev);
        let (z, v) = make_training_pair(&clip(d, |_| 0.0), &clip(d, |_| 2.0), 0.5).unwrap();
        assert!(z.tensor().data().iter().all(|&x| x == 1.0));
        assert!(v.tensor().data().iter().all(|&x| x == 2.0));
        assert!(make_training_pair(&x0, &eps, 1.01).is_err());
    }

    #[test]
    fn mask_examples() {
        let p = ActionLabel::PullClothes;
        let s = ActionScript::new("", vec![ActionSegment::new(p, 5, 6)]);
        assert_eq!(
            segments_to_action_mask(&s, 8, 4).unwrap().values(),
            &[false, true]
        );
        let empty = ActionScript::new("", vec![]);
        assert_eq!(
            segments_to_action_mask(&empty, 8, 4).unwrap(),
            ActionMask::zeros(2)
        );
        let full = ActionScript::new("", vec![ActionSegment::new(p, 0, 8)]);
        assert_eq!(
            segments_to_action_mask(&full, 8, 4).unwrap(),
            ActionMask::ones(2)
        );
        assert!(segments_to_action_mask(&s, 8, 3).is_err());
    }

    #[test]
    fn mask_matches_brute_force_exhaustively() {
        // every single- and two-segment placement on T <= 16
        let p = ActionLabel::AdjustHem;
        for frames in [4, 8, 12, 16] {
            for c_t in [1, 2, 4] {
                if frames % c_t != 0 {
                    continue;
                }
                let mut scripts = Vec::new();
                for a in 0..frames {
                    for b in a + 1..=frames {
                        scripts.push(vec![ActionSegment::new(p, a, b)]);
                        for c in b..frames {
                            for d in c + 1..=frames {
                                scripts.push(vec![
                                    ActionSegment::new(p, a, b),
                                    ActionSegment::new(p, c, d),
                                ]);
                            }
                        }
                    }
                }
                for segs in scripts {
                    let s = ActionScript::new("", segs);
                    let mask = segments_to_action_mask(&s, frames, c_t).unwrap();
                    let brute: Vec<bool> = (0..frames / c_t)
                        .map(|l| (l * c_t..(l + 1) * c_t).any(|f| s.label_at(f).is_some()))
                        .collect();
                    assert_eq!(mask.values(), brute.as_slice(), "{s:?}");
                    let map = crate::conditioning::assign_segments(&s, frames).unwrap();
                    let via_map: Vec<bool> = (0..frames / c_t)
                        .map(|l| {
                            map.frames()[l * c_t..(l + 1) * c_t]
                                .iter()
                                .any(|f| f.interactive)
                        })
                        .collect();
                    assert_eq!(mask.values(), via_map.as_slice());
                }
            }
        }
    }

    #[test]
    fn loss_weight_examples() {
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(loss_weight(t, LossWeight::Uniform).unwrap(), 1.0);
        }
        assert_eq!(loss_weight(0.5, LossWeight::MidEmphasis).unwrap(), 1.0);
        assert!((loss_weight(0.0, LossWeight::MidEmphasis).unwrap() - 3.5).abs() < 1e-15);
        assert!(loss_weight(1.5, LossWeight::Uniform).is_err());
        assert!("cosine".parse::<LossWeight>().is_err());
        assert_eq!(
            "mid-emphasis".parse::<LossWeight>().unwrap(),
            LossWeight::MidEmphasis
        );
        for i in 0..50 {
            let t = i as f64 / 100.0;
            let w = |t| loss_weight(t, LossWeight::MidEmphasis).unwrap();
            assert!((w(t) - w(1.0 - t)).abs() < 1e-12);
            assert!(w(t) >= w(t + 0.01));
        }
    }

    #[test]
    fn ac_loss_closed_forms() {
        let d = [4, 2, 3, 3];
        let r = 0.7;
        let v = clip(d, |i| (i as f64).sin());
        let v_hat = clip(d, |i| (i as f64).sin() + r);
        let half = ActionMask::new(vec![true, false, true, false]);
        for lambda in [0.0, 0.5, 1.0, 2.0] {
            let l = ac_loss(&v_hat, &v, &half, lambda, 1.0).unwrap();
            let want = r * r * (1.0 + lambda / 2.0);
            assert!(
                (l.loss - want).abs() < 1e-12,
                "{lambda}: {} vs {want}",
                l.loss
            );
            assert!((l.masked_frame_mse.unwrap() - r * r).abs() < 1e-12);
        }
        let l = ac_loss(&v_hat, &v, &half, 0.5, 1.0).unwrap();
        assert!((l.loss - r * r * 1.25).abs() < 1e-12);
        assert!(ac_loss(&v_hat, &v, &half, -0.1, 1.0).is_err());
        assert!(ac_loss(&v_hat, &v, &ActionMask::zeros(3), 0.5, 1.0).is_err());
        assert_eq!(
            ac_loss(&v_hat, &v, &ActionMask::zeros(4), 0.5, 1.0)
                .unwrap()
                .masked_frame_mse,
            None
        );
    }

    proptest! {
        #[test]
        fn lambda_zero_is_plain_mse(seed in 0u64..500, m in proptest::collection::vec(any::<bool>(), 3)) {
            let d = [3, 2, 2, 2];
            let mut r = SeededRng::new(seed);
            let v = LatentClip::new(r.normal_tensor::<f64>(d.to_vec(), 1.0)).unwrap();
            let vh = LatentClip::new(r.normal_tensor::<f64>(d.to_vec(), 1.0)).unwrap();
            let mask = ActionMask::new(m);
            let l = ac_loss(&vh, &v, &mask, 0.0, 1.0).unwrap();
            let mut s = 0.0;
            for (a, b) in vh.tensor().data().iter().zip(v.tensor().data()) {
                s += (a - b) * (a - b);
            }
            prop_assert!((l.loss - s / 24.0).abs() < 1e-14);
            prop_assert_eq!(l.masked, 0.0);
            let ones = ac_loss(&vh, &v, &ActionMask::ones(3), 0.5, 1.0).unwrap();
            prop_assert!((ones.loss - 1.5 * ones.base).abs() < 1e-12);
            let lam = 0.5;
            let full = ac_loss(&vh, &v, &mask, lam, 1.0).unwrap();
            prop_assert!((full.loss - full.base - full.masked).abs() < 1e-15);
            prop_assert_eq!(full.base, l.base);
            let weights = ac_loss_weights::<f64>(d, &mask, lam, 1.0).unwrap();
            let mut ws = 0.0;
            for ((a, b), w) in vh.tensor().data().iter().zip(v.tensor().data()).zip(&weights) {
                ws += w * (a - b) * (a - b);
            }
            prop_assert!((ws - full.loss).abs() < 1e-12);
        }
    }
}
