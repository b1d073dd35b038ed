//! Temporal cross-attention between video tokens and segment captions.
//!
//! Queries of segment `i` are rotated to position `i·k`. Keys are rotated
//! only when their group belongs to an interactive segment; null-caption
//! keys and all values carry no positional encoding.

use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::tensor::{GradTape, Real, Tensor, Var};

use super::rope::RopeTable;

/// Rotation schedule for a set of rows: rows at position 0 or without a
/// segment are left untouched.
fn row_rotations<F: Real>(
    segments: impl Iterator<Item = Option<usize>>,
    scale: usize,
    table: &RopeTable,
) -> (Vec<Option<usize>>, Vec<(Vec<F>, Vec<F>)>) {
    let mut slots: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cos_sin = Vec::new();
    let rows = segments
        .map(|s| {
            let m = s? * scale;
            if m == 0 {
                return None;
            }
            Some(*slots.entry(m).or_insert_with(|| {
                cos_sin.push(table.cos_sin::<F>(m));
                cos_sin.len() - 1
            }))
        })
        .collect();
    (rows, cos_sin)
}

/// Records rotary attention on `tape`.
///
/// `query_segments[r]` is the segment of query row `r`; `key_segments[r]`
/// is `Some(segment)` for keys that receive the rotation. The rotary
/// table dimension must equal the per-head width.
#[allow(clippy::too_many_arguments)]
pub fn arope_attention<F: Real>(
    tape: &mut GradTape<F>,
    q: Var,
    k: Var,
    v: Var,
    query_segments: &[usize],
    key_segments: &[Option<usize>],
    scale: usize,
    table: &RopeTable,
    heads: usize,
) -> Result<Var> {
    let d = tape.value(q).cols();
    if heads == 0 || d % heads != 0 || d / heads != table.dim() {
        return shape_err(format!(
            "width {d} with {heads} heads vs rotary dim {}",
            table.dim()
        ));
    }
    let (qrows, qcs) = row_rotations::<F>(query_segments.iter().map(|&s| Some(s)), scale, table);
    let q = tape.rotate_pairs(q, heads, qrows, qcs)?;
    let (krows, kcs) = row_rotations::<F>(key_segments.iter().copied(), scale, table);
    let k = tape.rotate_pairs(k, heads, krows, kcs)?;
    tape.attention(q, k, v, heads)
}

/// Caption keys and values of one segment.
#[derive(Clone, Debug)]
pub struct CaptionKv<F> {
    pub keys: Tensor<F>,
    pub values: Tensor<F>,
    pub rope: bool,
}

/// Cross-attention of per-segment query groups against all caption groups.
/// Output rows follow the concatenated query order.
pub fn temporal_cross_attention<F: Real>(
    query_groups: &[Tensor<F>],
    caption_groups: &[CaptionKv<F>],
    scale: usize,
    table: &RopeTable,
    heads: usize,
) -> Result<Tensor<F>> {
    if query_groups.len() != caption_groups.len() {
        return shape_err(format!(
            "{} query groups but {} caption groups",
            query_groups.len(),
            caption_groups.len()
        ));
    }
    if query_groups.is_empty() {
        return shape_err("no segments");
    }
    let mut tape = GradTape::new();
    let mut q_parts = Vec::new();
    let mut query_segments = Vec::new();
    for (i, g) in query_groups.iter().enumerate() {
        query_segments.extend(std::iter::repeat_n(i, g.rows()));
        q_parts.push(tape.constant(g.clone()));
    }
    let mut k_parts = Vec::new();
    let mut v_parts = Vec::new();
    let mut key_segments = Vec::new();
    for (i, g) in caption_groups.iter().enumerate() {
        if g.keys.rows() != g.values.rows() {
            return shape_err(format!(
                "group {i}: {} keys, {} values",
                g.keys.rows(),
                g.values.rows()
            ));
        }
        key_segments.extend(std::iter::repeat_n(g.rope.then_some(i), g.keys.rows()));
        k_parts.push(tape.constant(g.keys.clone()));
        v_parts.push(tape.constant(g.values.clone()));
    }
    let q = tape.concat_rows(&q_parts)?;
    let k = tape.concat_rows(&k_parts)?;
    let v = tape.concat_rows(&v_parts)?;
    let out = arope_attention(
        &mut tape,
        q,
        k,
        v,
        &query_segments,
        &key_segments,
        scale,
        table,
        heads,
    )?;
    Ok(tape.value(out).clone())
}
