//! Per-frame interaction labels: smoothing, segment extraction, caption
//! records and frame verdict providers.

mod morph;
mod provider;

pub use morph::{dilate, erode, morph_close, morph_open, smooth_labels};
pub use provider::{
    annotate_frames, ConstantProvider, FrameDescriptor, HttpProvider, HttpProviderConfig,
    ScriptedProvider, VerdictProvider, TOKEN_ENV, VERIFY_PROMPT,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::script::{ActionLabel, ActionSegment};

/// Binary per-frame interaction labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSequence(pub Vec<bool>);

impl LabelSequence {
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::InvalidArgument(format!(
                    "label {i} is {b}, expected 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Sequence of `frames` labels set inside the given segments.
    pub fn from_segments(segments: &[ActionSegment], frames: usize) -> Result<Self> {
        let mut v = vec![false; frames];
        for s in segments {
            if s.start >= s.end || s.end > frames {
                return Err(Error::Segments(format!(
                    "[{}, {}) outside {frames} frames",
                    s.start, s.end
                )));
            }
            v[s.start..s.end].iter_mut().for_each(|x| *x = true);
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_string())?)
    }
}

/// Label files hold one `0` or `1` per line; blank lines are ignored.
impl FromStr for LabelSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| match l.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::InvalidArgument(format!(
                    "line {}: expected 0 or 1, got {other:?}",
                    i + 1
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            writeln!(f, "{}", u8::from(b))?;
        }
        Ok(())
    }
}

/// Maximal runs of ones as sorted half-open segments.
pub fn extract_segments(labels: &LabelSequence, label: ActionLabel) -> Vec<ActionSegment> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &b) in labels.0.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(ActionSegment::new(label, s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(ActionSegment::new(label, s, labels.len()));
    }
    out
}

/// Time-stamped action caption: description plus `[start, end)` frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub description: String,
    pub frames: [usize; 2],
}

pub fn caption_records(segments: &[ActionSegment], label: ActionLabel) -> Vec<CaptionRecord> {
    let mut segs: Vec<_> = segments.to_vec();
    segs.sort_by_key(|s| (s.start, s.end));
    segs.iter()
        .map(|s| CaptionRecord {
            description: label.description().to_string(),
            frames: [s.start, s.end],
        })
        .collect()
}

/// Like [`caption_records`] for a label given by name.
pub fn caption_records_named(
    segments: &[ActionSegment],
    label: &str,
) -> Result<Vec<CaptionRecord>> {
    Ok(caption_records(segments, ActionLabel::from_name(label)?))
}
