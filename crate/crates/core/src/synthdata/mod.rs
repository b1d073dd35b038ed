//! Synthetic interactive clips in latent space.
//!
//! A striped garment occupies rows and columns `4..12`. Each label owns a
//! disjoint 8-pixel set inside the garment; interacting with the garment
//! inverts the stripe pattern on that set. A hand blob beside the garment
//! marks the interactive frames but carries no information about which
//! label is acted out.

mod dataset;

pub use dataset::{
    gen_dataset, load_manifest, load_sample, sample_spec, ManifestRecord, Sidecar, MANIFEST,
};

use serde::{Deserialize, Serialize};

use crate::annotate::{FrameDescriptor, LabelSequence, VerdictProvider};
use crate::backbone::{GuidanceBundle, LatentClip};
use crate::diffusion::TrainSample;
use crate::error::{shape_err, Error, Result};
use crate::script::{ActionLabel, ActionScript, ActionSegment};
use crate::tensor::{SeededRng, Tensor};

pub const GARMENT_CAPTION: &str = "a person wearing a striped shirt";

const G0: usize = 4;
const G1: usize = 12;

/// How the interactive segment is placed in the clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRule {
    /// Inclusive bounds on the segment length in video frames.
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipSpec {
    /// Video frames covered by the script.
    pub frames: usize,
    /// `[T_lat, C, H, W]`.
    pub latent: [usize; 4],
    /// Fixed label, or `None` to draw one uniformly from the seed.
    pub label: Option<ActionLabel>,
    pub segment: SegmentRule,
    /// Fraction of the stripe pattern inverted on the label's pixels.
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frames: 16,
            latent: [4, 8, 16, 16],
            label: None,
            segment: SegmentRule {
                min_len: 4,
                max_len: 8,
            },
            amplitude: 1.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        let [t, c, h, w] = self.latent;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if t == 0 || c == 0 || self.frames % t != 0 {
            return bad(format!(
                "{} frames not divisible into {t} latent frames",
                self.frames
            ));
        }
        if h < 16 || w < 16 {
            return bad(format!("latent frames must be at least 16×16, got {h}×{w}"));
        }
        let SegmentRule { min_len, max_len } = self.segment;
        if min_len == 0 || min_len > max_len || max_len > self.frames {
            return bad(format!(
                "segment lengths {min_len}..={max_len} invalid for {} frames",
                self.frames
            ));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be >= 0, got {}", self.amplitude));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        Ok(())
    }

    /// Video frames per latent frame.
    pub fn compression(&self) -> usize {
        self.frames / self.latent[0]
    }
}

/// One generated clip with its conditioning and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x0: LatentClip<f32>,
    pub bundle: GuidanceBundle<f32>,
    pub script: ActionScript,
    pub label: ActionLabel,
    pub frames: usize,
    pub seed: u64,
}

impl Sample {
    pub fn to_train<F: crate::tensor::Real>(&self) -> TrainSample<F> {
        TrainSample {
            x0: self.x0.cast(),
            bundle: self.bundle.cast(),
            script: self.script.clone(),
            frames: self.frames,
        }
    }

    /// Latent frames containing at least one interactive video frame.
    pub fn deformed_frames(&self) -> Result<Vec<bool>> {
        let t = self.x0.dims()[0];
        let lat = self.script.to_latent(self.frames, self.frames / t)?;
        Ok((0..t).map(|f| lat.label_at(f).is_some()).collect())
    }
}

/// Fixed per-channel stripe amplitude.
fn stripe_amplitude(ch: usize) -> f64 {
    [1.0, -0.8, 0.9, -1.1, 0.7, -0.9, 1.1, -0.7][ch % 8]
}

/// Stripe sign at garment pixel `(y, x)`.
fn stripe(y: usize) -> f64 {
    if y % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Pixels `(y, x)` whose stripes invert for `label`.
pub fn label_pixels(label: ActionLabel) -> Vec<(usize, usize)> {
    let row = |y: usize| (G0..G1).map(move |x| (y, x)).collect::<Vec<_>>();
    let cols = |xs: &[usize], ys: std::ops::Range<usize>| {
        ys.flat_map(|y| xs.iter().map(move |&x| (y, x)))
            .collect::<Vec<_>>()
    };
    match label {
        ActionLabel::AdjustCollar => row(4),
        ActionLabel::AdjustHem => row(11),
        ActionLabel::RollSleeves => cols(&[4, 11], 5..9),
        ActionLabel::DonDoff => row(9),
        ActionLabel::PullClothes => cols(&[7, 8], 5..9),
        ActionLabel::Other => cols(&[5, 6, 9, 10], 5..7),
    }
}

/// Garment pixels that no label touches.
pub fn reference_pixels() -> Vec<(usize, usize)> {
    let mut used = [[false; 16]; 16];
    for l in ActionLabel::ALL {
        for (y, x) in label_pixels(l) {
            used[y][x] = true;
        }
    }
    (G0..G1)
        .flat_map(|y| (G0..G1).map(move |x| (y, x)))
        .filter(|&(y, x)| !used[y][x])
        .collect()
}

fn in_garment(y: usize, x: usize) -> bool {
    (G0..G1).contains(&y) && (G0..G1).contains(&x)
}

/// Generates the sample fully determined by `spec` (including its seed).
pub fn gen_sample(spec: &ClipSpec) -> Result<Sample> {
    spec.validate()?;
    let [t, c, h, w] = spec.latent;
    let c_t = spec.compression();
    let mut rng = SeededRng::new(spec.seed);

    let label = match spec.label {
        Some(l) => l,
        None => ActionLabel::ALL[rng.below(ActionLabel::ALL.len())],
    };
    let SegmentRule { min_len, max_len } = spec.segment;
    let len = min_len + rng.below(max_len - min_len + 1);
    let start = rng.below(spec.frames - len + 1);
    let script = ActionScript::new(
        GARMENT_CAPTION,
        vec![ActionSegment::new(label, start, start + len)],
    );
    let active: Vec<bool> = (0..t)
        .map(|f| f * c_t < start + len && start < (f + 1) * c_t)
        .collect();

    let amp: Vec<f64> = (0..c).map(stripe_amplitude).collect();
    let background: Vec<f64> = (0..c).map(|_| 0.5 * rng.normal()).collect();
    let hand_y = 3 + rng.below(h - 6);
    let hand_x = 13.min(w - 3);

    let mut flip = vec![false; h * w];
    for (y, x) in label_pixels(label) {
        flip[y * w + x] = true;
    }
    let blob = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 - hand_y as f64, x as f64 - hand_x as f64);
        (-(dy * dy + dx * dx) / 2.0).exp()
    };

    let plane = h * w;
    let mut x0 = vec![0f32; t * c * plane];
    let mut agnostic = vec![0f32; t * c * plane];
    let mut garment = vec![0f32; c * plane];
    let mut hand = vec![0f32; t * plane];
    let mut pose = vec![0f32; t * plane];
    for f in 0..t {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let mut v = if in_garment(y, x) {
                        let g = amp[ch] * stripe(y);
                        if f == 0 {
                            garment[ch * plane + i] = g as f32;
                        }
                        if active[f] && flip[i] {
                            g * (1.0 - 2.0 * spec.amplitude)
                        } else {
                            g
                        }
                    } else {
                        background[ch]
                    };
                    if active[f] {
                        v += 0.8 * blob(y, x);
                    }
                    v += spec.noise * rng.normal();
                    let at = (f * c + ch) * plane + i;
                    x0[at] = v as f32;
                    if !in_garment(y, x) {
                        agnostic[at] = v as f32;
                    }
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                if active[f] {
                    hand[f * plane + y * w + x] = blob(y, x) as f32;
                }
                // Skeleton dots: head, shoulders, hips.
                if matches!((y, x), (2, 8) | (4, 4) | (4, 11) | (11, 5) | (11, 10)) {
                    pose[f * plane + y * w + x] = 1.0;
                }
            }
        }
    }
    Ok(Sample {
        x0: LatentClip::new(Tensor::new([t, c, h, w], x0)?)?,
        bundle: GuidanceBundle {
            pose: Tensor::new([t, 1, h, w], pose)?,
            agnostic: Tensor::new([t, c, h, w], agnostic)?,
            hand: Some(Tensor::new([t, 1, h, w], hand)?),
            garment: Tensor::new([c, h, w], garment)?,
        },
        script,
        label,
        frames: spec.frames,
        seed: spec.seed,
    })
}

/// Deformation statistics of one latent frame for `label`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorStats {
    /// Squared stripe amplitude estimated on the reference pixels, summed
    /// over channels.
    pub garment_energy: f64,
    /// Projection of the label pixels on the reference stripes, normalized
    /// so an intact garment gives 1 and a fully inverted one −1.
    pub alignment: f64,
}

pub fn detector_stats(
    frame: &[f32],
    shape: [usize; 3],
    label: ActionLabel,
) -> Result<DetectorStats> {
    let [c, h, w] = shape;
    if frame.len() != c * h * w || h < 16 || w < 16 {
        return shape_err(format!(
            "frame of {} values for shape {shape:?}",
            frame.len()
        ));
    }
    let proj = |ch: usize, px: &[(usize, usize)]| {
        px.iter()
            .map(|&(y, x)| frame[(ch * h + y) * w + x] as f64 * stripe(y))
            .sum::<f64>()
            / px.len() as f64
    };
    let (refs, lab) = (reference_pixels(), label_pixels(label));
    let (mut energy, mut dot) = (0.0, 0.0);
    for ch in 0..c {
        let a = proj(ch, &refs);
        energy += a * a;
        dot += a * proj(ch, &lab);
    }
    Ok(DetectorStats {
        garment_energy: energy,
        alignment: if energy > 0.0 { dot / energy } else { 0.0 },
    })
}

/// Minimum per-channel mean squared stripe amplitude for a garment to count as
/// present.
pub const MIN_GARMENT_ENERGY: f64 = 0.1;

/// True iff the frame shows a garment whose `label` pixels are inverted
/// relative to the rest of the stripes.
pub fn detector_oracle(frame: &[f32], shape: [usize; 3], label: ActionLabel) -> Result<bool> {
    let s = detector_stats(frame, shape, label)?;
    Ok(s.garment_energy > MIN_GARMENT_ENERGY * shape[0] as f64 && s.alignment < 0.0)
}

/// [`detector_oracle`] with the label given by name.
pub fn detector_oracle_named(frame: &[f32], shape: [usize; 3], label: &str) -> Result<bool> {
    detector_oracle(frame, shape, ActionLabel::from_name(label)?)
}

/// Detector verdicts for every latent frame of a clip.
pub fn detect_clip(clip: &LatentClip<f32>, label: ActionLabel) -> Result<LabelSequence> {
    let [t, c, h, w] = clip.dims();
    (0..t)
        .map(|f| detector_oracle(clip.frame(f), [c, h, w], label))
        .collect::<Result<Vec<_>>>()
        .map(LabelSequence)
}

/// Latent-frame verdicts repeated over the `c_t` video frames each covers.
pub fn expand_verdicts(latent: &LabelSequence, c_t: usize) -> LabelSequence {
    LabelSequence(
        latent
            .values()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, c_t))
            .collect(),
    )
}

/// The detector as a [`VerdictProvider`].
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleProvider;

impl VerdictProvider for OracleProvider {
    fn verdict(&self, frame: &FrameDescriptor, label: ActionLabel) -> Result<bool> {
        detector_oracle(&frame.values, frame.shape, label)
    }
}

/// Frame descriptors for each latent frame of a clip.
pub fn frame_descriptors(clip: &LatentClip<f32>) -> Vec<FrameDescriptor> {
    let [t, c, h, w] = clip.dims();
    (0..t)
        .map(|f| FrameDescriptor {
            index: f,
            shape: [c, h, w],
            values: clip.frame(f).to_vec(),
        })
        .collect()
}
