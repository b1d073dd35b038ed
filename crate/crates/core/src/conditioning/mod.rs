//! Rotary and segment-scaled rotary embeddings, segment assignment and
//! toy caption embeddings.

mod cross_attention;
mod rope;
mod segments;
mod vocab;

pub use cross_attention::{arope_attention, temporal_cross_attention, CaptionKv};
pub use rope::{apply_arope, apply_rope, RopeTable, DEFAULT_ROPE_BASE};
pub use segments::{assign_segments, FrameSegment, SegmentIndexMap, SegmentRun};
pub use vocab::{
    caption_token_ids, embed_actions, global_caption_embedding, label_rows, ActionGroup,
    ActionGroups, ActionVocabulary, EmbeddedActions, ACTION_VOCAB, CAPTION_VOCAB,
    DEFAULT_TOKENS_PER_ACTION,
};

/// Default separation scale between consecutive segments.
pub const DEFAULT_AROPE_SCALE: usize = 4;
