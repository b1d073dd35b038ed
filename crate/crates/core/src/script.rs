//! Action labels, time-stamped segments and per-clip action scripts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interaction categories. Integer ids are fixed: 0..=5 in declaration
/// order, with [`NULL_LABEL_ID`] reserved for the null caption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    AdjustCollar,
    AdjustHem,
    RollSleeves,
    DonDoff,
    PullClothes,
    Other,
}

pub const NULL_LABEL_ID: usize = 6;

impl ActionLabel {
    pub const ALL: [ActionLabel; 6] = [
        ActionLabel::AdjustCollar,
        ActionLabel::AdjustHem,
        ActionLabel::RollSleeves,
        ActionLabel::DonDoff,
        ActionLabel::PullClothes,
        ActionLabel::Other,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(format!("id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionLabel::AdjustCollar => "adjust_collar",
            ActionLabel::AdjustHem => "adjust_hem",
            ActionLabel::RollSleeves => "roll_sleeves",
            ActionLabel::DonDoff => "don_doff",
            ActionLabel::PullClothes => "pull_clothes",
            ActionLabel::Other => "other",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    /// Human-readable action description used in caption records.
    pub fn description(self) -> &'static str {
        match self {
            ActionLabel::AdjustCollar => "Adjusting the collar",
            ActionLabel::AdjustHem => "Adjusting the hem",
            ActionLabel::RollSleeves => "Rolling/Unrolling sleeves",
            ActionLabel::DonDoff => "Putting on/Taking off clothes",
            ActionLabel::PullClothes => "Pulling at clothes",
            ActionLabel::Other => "Other interactions",
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Frames `[start, end)` carrying one interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub label: ActionLabel,
    pub start: usize,
    pub end: usize,
}

impl ActionSegment {
    pub fn new(label: ActionLabel, start: usize, end: usize) -> Self {
        Self { label, start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

/// Global caption plus sorted, non-overlapping action segments.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    pub global_caption: String,
    pub segments: Vec<ActionSegment>,
}

impl ActionScript {
    pub fn new(global_caption: impl Into<String>, segments: Vec<ActionSegment>) -> Self {
        Self {
            global_caption: global_caption.into(),
            segments,
        }
    }

    /// Checks that segments are non-empty, sorted, disjoint and inside `[0, frames)`.
    pub fn validate(&self, frames: usize) -> Result<()> {
        let mut prev_end = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Segments(format!(
                    "segment {i} [{}, {}) is empty",
                    s.start, s.end
                )));
            }
            if s.end > frames {
                return Err(Error::Segments(format!(
                    "segment {i} [{}, {}) exceeds {frames} frames",
                    s.start, s.end
                )));
            }
            if i > 0 && s.start < prev_end {
                return Err(Error::Segments(format!(
                    "segment {i} starts at {} before previous end {prev_end}",
                    s.start
                )));
            }
            prev_end = s.end;
        }
        Ok(())
    }

    /// Label of the segment covering `frame`, if any.
    pub fn label_at(&self, frame: usize) -> Option<ActionLabel> {
        self.segments
            .iter()
            .find(|s| s.contains(frame))
            .map(|s| s.label)
    }

    /// Script on the latent time axis: a latent frame `ℓ` covers video
    /// frames `[ℓ·c_t, (ℓ+1)·c_t)` and belongs to a segment when any of
    /// them does. Segments that collide after compression are merged,
    /// keeping the earlier label.
    pub fn to_latent(&self, frames: usize, c_t: usize) -> Result<ActionScript> {
        if c_t == 0 || frames % c_t != 0 {
            return Err(Error::InvalidArgument(format!(
                "{frames} frames not divisible by temporal compression {c_t}"
            )));
        }
        self.validate(frames)?;
        let mut out: Vec<ActionSegment> = Vec::new();
        for s in &self.segments {
            let start = s.start / c_t;
            let end = s.end.div_ceil(c_t);
            match out.last_mut() {
                Some(last) if start < last.end => last.end = last.end.max(end),
                _ => out.push(ActionSegment::new(s.label, start, end)),
            }
        }
        Ok(ActionScript::new(self.global_caption.clone(), out))
    }
}
