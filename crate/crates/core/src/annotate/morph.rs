use super::LabelSequence;
use crate::error::{Error, Result};

fn radius(s: usize) -> Result<usize> {
    if s == 0 || s % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "structuring element must be odd and positive, got {s}"
        )));
    }
    Ok(s / 2)
}

/// Output `i` is `want` iff any sample of the centered window of length
/// `2r + 1` equals `want`, with edge-replication padding. Runs in O(T) with
/// a sliding count.
fn window_any(x: &[bool], r: usize, want: bool) -> Vec<bool> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let at = |j: isize| x[j.clamp(0, n as isize - 1) as usize] == want;
    let r = r as isize;
    let mut hits: usize = (-r..=r).filter(|&j| at(j)).count();
    let mut out = Vec::with_capacity(n);
    for i in 0..n as isize {
        out.push(if hits > 0 { want } else { !want });
        hits += usize::from(at(i + r + 1));
        hits -= usize::from(at(i - r));
    }
    out
}

/// Applies the window steps (`false` = erode, `true` = dilate) to the input
/// extended by edge replication, then crops. Padding happens once, on the
/// input of the whole compound operation.
fn compound(labels: &LabelSequence, s: usize, steps: &[bool]) -> Result<LabelSequence> {
    let r = radius(s)?;
    let x = &labels.0;
    let (Some(&first), Some(&last)) = (x.first(), x.last()) else {
        return Ok(LabelSequence::default());
    };
    let pad = r * steps.len();
    let mut ext: Vec<bool> = std::iter::repeat_n(first, pad)
        .chain(x.iter().copied())
        .chain(std::iter::repeat_n(last, pad))
        .collect();
    for &want in steps {
        ext = window_any(&ext, r, want);
    }
    Ok(LabelSequence(ext[pad..pad + x.len()].to_vec()))
}

/// Minimum over the centered window of length `s`.
pub fn erode(labels: &LabelSequence, s: usize) -> Result<LabelSequence> {
    compound(labels, s, &[false])
}

/// Maximum over the centered window of length `s`.
pub fn dilate(labels: &LabelSequence, s: usize) -> Result<LabelSequence> {
    compound(labels, s, &[true])
}

/// Erosion then dilation.
pub fn morph_open(labels: &LabelSequence, s: usize) -> Result<LabelSequence> {
    compound(labels, s, &[false, true])
}

/// Dilation then erosion.
pub fn morph_close(labels: &LabelSequence, s: usize) -> Result<LabelSequence> {
    compound(labels, s, &[true, false])
}

/// Opening with `s_open` followed by closing with `s_close`.
pub fn smooth_labels(
    labels: &LabelSequence,
    s_open: usize,
    s_close: usize,
) -> Result<LabelSequence> {
    morph_close(&morph_open(labels, s_open)?, s_close)
}
