//! Interaction success rate, SSIM and mask-split reconstruction error.

use serde::{Deserialize, Serialize};

use crate::annotate::LabelSequence;
use crate::backbone::LatentClip;
use crate::diffusion::ActionMask;
use crate::error::{shape_err, Error, Result};
use crate::script::{ActionLabel, ActionSegment};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentIsr {
    pub label: ActionLabel,
    pub start: usize,
    pub end: usize,
    pub n: usize,
    pub x: usize,
    pub isr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsrReport {
    /// Ground-truth interactive frames.
    pub n: usize,
    /// Of those, frames with a positive verdict.
    pub x: usize,
    pub isr: f64,
    pub per_segment: Vec<SegmentIsr>,
}

impl IsrReport {
    /// Pools several reports: `(Σx) / (Σn)`.
    pub fn combine(reports: &[IsrReport]) -> Result<IsrReport> {
        let n: usize = reports.iter().map(|r| r.n).sum();
        let x: usize = reports.iter().map(|r| r.x).sum();
        if n == 0 {
            return Err(Error::NoInteractiveFrames);
        }
        let per_segment = reports
            .iter()
            .flat_map(|r| r.per_segment.iter().cloned())
            .collect();
        Ok(IsrReport {
            n,
            x,
            isr: x as f64 / n as f64,
            per_segment,
        })
    }
}

/// `X / N` over the frames inside `gt_segments`.
pub fn isr(verdicts: &LabelSequence, gt_segments: &[ActionSegment]) -> Result<IsrReport> {
    let mut per_segment = Vec::with_capacity(gt_segments.len());
    let (mut n, mut x) = (0, 0);
    let mut covered = vec![false; verdicts.len()];
    for s in gt_segments {
        if s.start >= s.end || s.end > verdicts.len() {
            return Err(Error::Segments(format!(
                "[{}, {}) outside {} verdicts",
                s.start,
                s.end,
                verdicts.len()
            )));
        }
        if covered[s.start..s.end].iter().any(|&c| c) {
            return Err(Error::Segments(format!(
                "[{}, {}) overlaps another segment",
                s.start, s.end
            )));
        }
        covered[s.start..s.end].iter_mut().for_each(|c| *c = true);
        let sx = verdicts.values()[s.start..s.end]
            .iter()
            .filter(|&&v| v)
            .count();
        per_segment.push(SegmentIsr {
            label: s.label,
            start: s.start,
            end: s.end,
            n: s.len(),
            x: sx,
            isr: sx as f64 / s.len() as f64,
        });
        n += s.len();
        x += sx;
    }
    if n == 0 {
        return Err(Error::NoInteractiveFrames);
    }
    Ok(IsrReport {
        n,
        x,
        isr: x as f64 / n as f64,
        per_segment,
    })
}

pub const SSIM_WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean SSIM over every `7×7` window position of each channel, for
/// frames of shape `[H, W]` or `[C, H, W]`. Window statistics use
/// uniform weights and population (co)variances.
pub fn ssim<F: Real>(a: &Tensor<F>, b: &Tensor<F>, dynamic_range: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dynamic range must be > 0, got {dynamic_range}"
        )));
    }
    let (c, h, w) = match *a.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref s => return shape_err(format!("expected [H, W] or [C, H, W], got {s:?}")),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return shape_err(format!(
            "frame {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
        ));
    }
    let c1 = (K1 * dynamic_range).powi(2);
    let c2 = (K2 * dynamic_range).powi(2);
    let count = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    let mut windows = 0usize;
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    let row = base + (y + dy) * w + x;
                    for i in row..row + SSIM_WINDOW {
                        let (p, q) = (ad[i].as_f64(), bd[i].as_f64());
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / count, sb / count);
                let va = (saa / count - ma * ma).max(0.0);
                let vb = (sbb / count - mb * mb).max(0.0);
                let cov = sab / count - ma * mb;
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// Mean SSIM over the latent frames of two clips.
pub fn clip_ssim<F: Real>(a: &LatentClip<F>, b: &LatentClip<F>, dynamic_range: f64) -> Result<f64> {
    a.tensor().expect_same_shape(b.tensor())?;
    let [t, c, h, w] = a.dims();
    let mut sum = 0.0;
    for f in 0..t {
        let fa = Tensor::new([c, h, w], a.frame(f).to_vec())?;
        let fb = Tensor::new([c, h, w], b.frame(f).to_vec())?;
        sum += ssim(&fa, &fb, dynamic_range)?;
    }
    Ok(sum / t as f64)
}

/// Mean squared errors split by the action mask. A region without frames
/// is reported as `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseSplit {
    pub interactive: Option<f64>,
    pub non_interactive: Option<f64>,
    pub overall: f64,
}

pub fn masked_mse<F: Real>(
    pred: &LatentClip<F>,
    reference: &LatentClip<F>,
    mask: &ActionMask,
) -> Result<MseSplit> {
    pred.tensor().expect_same_shape(reference.tensor())?;
    let t = pred.dims()[0];
    if mask.len() != t {
        return shape_err(format!(
            "mask of {} frames for {t} latent frames",
            mask.len()
        ));
    }
    let per = pred.frame_len();
    let (mut s_in, mut s_out) = (0.0f64, 0.0f64);
    for (f, &m) in mask.values().iter().enumerate() {
        let s: f64 = pred
            .frame(f)
            .iter()
            .zip(reference.frame(f))
            .map(|(&p, &q)| (p.as_f64() - q.as_f64()).powi(2))
            .sum();
        if m {
            s_in += s;
        } else {
            s_out += s;
        }
    }
    let n_in = mask.count() * per;
    let n_out = (t - mask.count()) * per;
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(MseSplit {
        interactive: mean(s_in, n_in),
        non_interactive: mean(s_out, n_out),
        overall: (s_in + s_out) / (n_in + n_out) as f64,
    })
}

/// Evaluation report written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub x: usize,
    pub isr: f64,
    pub per_segment: Vec<SegmentIsr>,
    pub ssim_mean: f64,
    pub mse: MseSplit,
}

impl EvalReport {
    pub fn new(isr: IsrReport, ssim_mean: f64, mse: MseSplit) -> Self {
        Self {
            n: isr.n,
            x: isr.x,
            isr: isr.isr,
            per_segment: isr.per_segment,
            ssim_mean,
            mse,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
