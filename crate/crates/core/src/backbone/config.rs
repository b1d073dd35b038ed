use serde::{Deserialize, Serialize};

use crate::conditioning::{DEFAULT_AROPE_SCALE, DEFAULT_ROPE_BASE, DEFAULT_TOKENS_PER_ACTION};
use crate::error::{Error, Result};

/// Shape and width choices of the denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Backbone blocks; half as many context blocks feed them.
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Patch extents along (time, height, width).
    pub patch: [usize; 3],
    pub d_txt: usize,
    pub time_dim: usize,
    /// Latent clip extents `[T_lat, C, H, W]`.
    pub latent: [usize; 4],
    pub pose_channels: usize,
    pub hand_channels: usize,
    pub tokens_per_action: usize,
    /// Separation scale `k` between consecutive segments.
    pub arope_scale: usize,
    pub rope_base: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            width: 64,
            heads: 4,
            mlp_ratio: 4,
            patch: [1, 2, 2],
            d_txt: 32,
            time_dim: 64,
            latent: [4, 8, 16, 16],
            pose_channels: 1,
            hand_channels: 1,
            tokens_per_action: DEFAULT_TOKENS_PER_ACTION,
            arope_scale: DEFAULT_AROPE_SCALE,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }
}

impl BackboneConfig {
    /// Two-block, width-16 model used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            blocks: 2,
            width: 16,
            heads: 2,
            mlp_ratio: 2,
            patch: [1, 2, 2],
            d_txt: 8,
            time_dim: 8,
            latent: [2, 2, 4, 4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.blocks == 0 || self.blocks % 2 != 0 {
            return bad(format!(
                "block count must be even and positive, got {}",
                self.blocks
            ));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if (self.width / self.heads) % 2 != 0 {
            return bad(format!(
                "head width {} must be even",
                self.width / self.heads
            ));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad(format!(
                "time embedding width must be even, got {}",
                self.time_dim
            ));
        }
        if self.mlp_ratio == 0 || self.d_txt == 0 || self.tokens_per_action == 0 {
            return bad("mlp ratio, text width and tokens per action must be positive".into());
        }
        let [t, c, h, w] = self.latent;
        let [pt, ph, pw] = self.patch;
        if [t, c, h, w, pt, ph, pw].contains(&0) {
            return bad("latent and patch extents must be positive".into());
        }
        if t % pt != 0 || h % ph != 0 || w % pw != 0 {
            return bad(format!(
                "latent {:?} not divisible by patch {:?}",
                self.latent, self.patch
            ));
        }
        if self.rope_base <= 1.0 {
            return bad(format!("rope base must exceed 1, got {}", self.rope_base));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn context_blocks(&self) -> usize {
        self.blocks / 2
    }

    pub fn patch_volume(&self) -> usize {
        self.patch.iter().product()
    }

    /// Token grid `(frames, rows, cols)`.
    pub fn token_grid(&self) -> [usize; 3] {
        let [t, _, h, w] = self.latent;
        [t / self.patch[0], h / self.patch[1], w / self.patch[2]]
    }

    pub fn tokens(&self) -> usize {
        self.token_grid().iter().product()
    }

    pub fn tokens_per_frame(&self) -> usize {
        let [_, gh, gw] = self.token_grid();
        gh * gw
    }

    pub fn latent_channels(&self) -> usize {
        self.latent[1]
    }

    /// Channels entering the context blocks: pose, agnostic, garment.
    pub fn context_channels(&self) -> usize {
        self.pose_channels + 2 * self.latent_channels()
    }
}
