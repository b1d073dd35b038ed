use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::script::{ActionLabel, ActionScript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSegment {
    pub index: usize,
    pub interactive: bool,
    pub label: Option<ActionLabel>,
}

/// One contiguous run of frames sharing a segment index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentRun {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub label: Option<ActionLabel>,
}

impl SegmentRun {
    pub fn interactive(&self) -> bool {
        self.label.is_some()
    }
}

/// Per-frame segment index and interaction flag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentIndexMap {
    frames: Vec<FrameSegment>,
}

impl SegmentIndexMap {
    pub fn frames(&self) -> &[FrameSegment] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.index).collect()
    }

    pub fn runs(&self) -> Vec<SegmentRun> {
        let mut runs: Vec<SegmentRun> = Vec::new();
        for (t, f) in self.frames.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.index == f.index => r.end = t + 1,
                _ => runs.push(SegmentRun {
                    index: f.index,
                    start: t,
                    end: t + 1,
                    label: f.label,
                }),
            }
        }
        runs
    }

    pub fn segment_count(&self) -> usize {
        self.frames.last().map_or(0, |f| f.index + 1)
    }

    /// Checks the map invariants: starts at index 0, steps by at most 1,
    /// and labels are present exactly on interactive frames.
    pub fn check_invariants(&self) -> Result<()> {
        let mut prev: Option<&FrameSegment> = None;
        for (t, f) in self.frames.iter().enumerate() {
            if f.interactive != f.label.is_some() {
                return Err(Error::Segments(format!(
                    "frame {t}: interactive flag disagrees with label"
                )));
            }
            match prev {
                None if f.index != 0 => {
                    return Err(Error::Segments(
                        "first frame must have segment index 0".into(),
                    ))
                }
                Some(p) if f.index != p.index && f.index != p.index + 1 => {
                    return Err(Error::Segments(format!(
                        "frame {t}: index jumps from {} to {}",
                        p.index, f.index
                    )))
                }
                Some(p)
                    if f.index == p.index
                        && (f.interactive, f.label) != (p.interactive, p.label) =>
                {
                    return Err(Error::Segments(format!(
                        "frame {t}: run changes kind without a new index"
                    )))
                }
                _ => {}
            }
            prev = Some(f);
        }
        Ok(())
    }
}

/// Partitions `[0, frames)` into alternating runs outside and inside the
/// script's segments, numbered 0, 1, 2, … in temporal order.
pub fn assign_segments(script: &ActionScript, frames: usize) -> Result<SegmentIndexMap> {
    script.validate(frames)?;
    let mut out = Vec::with_capacity(frames);
    let mut index = 0usize;
    let mut t = 0usize;
    let mut push_run =
        |out: &mut Vec<FrameSegment>, start: usize, end: usize, label: Option<ActionLabel>| {
            if end > start {
                if !out.is_empty() {
                    index += 1;
                }
                out.extend((start..end).map(|_| FrameSegment {
                    index,
                    interactive: label.is_some(),
                    label,
                }));
            }
        };
    for s in &script.segments {
        push_run(&mut out, t, s.start, None);
        push_run(&mut out, s.start, s.end, Some(s.label));
        t = s.end;
    }
    push_run(&mut out, t, frames, None);
    Ok(SegmentIndexMap { frames: out })
}
