//! Toy diffusion-transformer denoiser with additive guidance injection.

mod clip;
mod config;
mod model;
mod params;
mod patch;


pub use clip::{GuidanceBundle, LatentClip};
pub use config::BackboneConfig;
pub use model::{
    context_block_forward, distinct_action_rows, dit_block_forward, guider_forward, model_forward,
    model_forward_tape, timestep_features, BoundParams, CaptionMode, ModelConditioning,
    TextContext,
};
pub use params::{read_tensors, write_tensors, ModelParams, CHECKPOINT_MAGIC};
pub use patch::{patchify, unpatchify};
