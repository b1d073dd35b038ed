//! Toy caption embeddings: per-label action tokens and a hashed global caption.

use crate::error::{shape_err, Error, Result};
use crate::script::{ActionLabel, NULL_LABEL_ID};
use crate::tensor::{Real, Tensor};

use super::segments::SegmentIndexMap;

pub const DEFAULT_TOKENS_PER_ACTION: usize = 4;
/// Rows in the toy global-caption token table.
pub const CAPTION_VOCAB: usize = 64;
/// Action labels plus the null caption.
pub const ACTION_VOCAB: usize = NULL_LABEL_ID + 1;

/// Learned token rows for each action label and the null caption.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionVocabulary<F> {
    tokens_per_label: usize,
    table: Tensor<F>,
}

impl<F: Real> ActionVocabulary<F> {
    /// `table` is `[7·tokens_per_label, d_txt]`, label-major.
    pub fn new(table: Tensor<F>, tokens_per_label: usize) -> Result<Self> {
        if table.rank() != 2 || table.rows() != ACTION_VOCAB * tokens_per_label {
            return shape_err(format!(
                "action table {:?} for {ACTION_VOCAB} labels × {tokens_per_label} tokens",
                table.shape()
            ));
        }
        if !table.is_finite() {
            return Err(Error::NonFinite("action embedding table".into()));
        }
        Ok(Self {
            tokens_per_label,
            table,
        })
    }

    pub fn tokens_per_label(&self) -> usize {
        self.tokens_per_label
    }

    pub fn table(&self) -> &Tensor<F> {
        &self.table
    }
}

/// Table rows for `label` (`None` is the null caption).
pub fn label_rows(label: Option<ActionLabel>, tokens_per_label: usize) -> Vec<usize> {
    let id = label.map_or(NULL_LABEL_ID, ActionLabel::id);
    (id * tokens_per_label..(id + 1) * tokens_per_label).collect()
}

/// Caption tokens contributed by one segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionGroup {
    pub segment: usize,
    pub label: Option<ActionLabel>,
    /// Keys of this group are rotated at the segment's scaled position.
    pub rope: bool,
    pub rows: Vec<usize>,
}

/// Key/value token groups in segment order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionGroups {
    pub groups: Vec<ActionGroup>,
}

impl ActionGroups {
    /// One group per run of `map`: interactive runs emit their label's
    /// tokens with rotation enabled, others the null tokens without.
    pub fn from_map(map: &SegmentIndexMap, tokens_per_label: usize) -> Self {
        let groups = map
            .runs()
            .into_iter()
            .map(|r| ActionGroup {
                segment: r.index,
                label: r.label,
                rope: r.label.is_some(),
                rows: label_rows(r.label, tokens_per_label),
            })
            .collect();
        Self { groups }
    }

    /// Same segment layout with every group replaced by the null caption.
    pub fn nulled(&self) -> Self {
        let n = self
            .groups
            .first()
            .map_or(DEFAULT_TOKENS_PER_ACTION, |g| g.rows.len());
        Self {
            groups: self
                .groups
                .iter()
                .map(|g| ActionGroup {
                    segment: g.segment,
                    label: None,
                    rope: false,
                    rows: label_rows(None, n),
                })
                .collect(),
        }
    }

    pub fn is_all_null(&self) -> bool {
        self.groups.iter().all(|g| g.label.is_none())
    }

    pub fn token_rows(&self) -> Vec<usize> {
        self.groups
            .iter()
            .flat_map(|g| g.rows.iter().copied())
            .collect()
    }

    /// Rotary segment per key token, `None` where keys stay unrotated.
    pub fn key_segments(&self) -> Vec<Option<usize>> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.rope.then_some(g.segment), g.rows.len()))
            .collect()
    }
}

/// Materialized caption tokens for a segment map.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedActions<F> {
    pub groups: ActionGroups,
    /// `[Σ tokens, d_txt]`, groups concatenated in order.
    pub tokens: Tensor<F>,
}

impl<F: Real> EmbeddedActions<F> {
    pub fn group_tokens(&self, g: usize) -> Tensor<F> {
        let d = self.tokens.cols();
        let start: usize = self.groups.groups[..g].iter().map(|g| g.rows.len()).sum();
        let n = self.groups.groups[g].rows.len();
        Tensor::new(
            [n, d],
            self.tokens.data()[start * d..(start + n) * d].to_vec(),
        )
        .expect("non-empty group")
    }
}

pub fn embed_actions<F: Real>(
    map: &SegmentIndexMap,
    vocab: &ActionVocabulary<F>,
) -> Result<EmbeddedActions<F>> {
    let groups = ActionGroups::from_map(map, vocab.tokens_per_label());
    let d = vocab.table().cols();
    let mut data = Vec::new();
    for r in groups.token_rows() {
        data.extend_from_slice(vocab.table().row(r));
    }
    let n = data.len() / d;
    Ok(EmbeddedActions {
        groups,
        tokens: Tensor::new([n, d], data)?,
    })
}

/// Hashes lower-cased words of `caption` into the toy token table.
pub fn caption_token_ids(caption: &str) -> Vec<usize> {
    caption
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .map(|w| {
            // FNV-1a
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in w.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            (h % CAPTION_VOCAB as u64) as usize
        })
        .collect()
}

/// Mean of the caption's token rows, `[1, d_txt]`; `None` for an empty caption.
pub fn global_caption_embedding<F: Real>(table: &Tensor<F>, caption: &str) -> Option<Tensor<F>> {
    let ids = caption_token_ids(caption);
    if ids.is_empty() {
        return None;
    }
    let d = table.cols();
    let mut out = vec![F::zero(); d];
    for &i in &ids {
        for (o, &v) in out.iter_mut().zip(table.row(i)) {
            *o += v;
        }
    }
    let inv = F::one() / F::of(ids.len() as f64);
    out.iter_mut().for_each(|o| *o *= inv);
    Some(Tensor::new([1, d], out).expect("positive width"))
}
