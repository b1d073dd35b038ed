//! Denoiser forward pass recorded on a [`GradTape`].
//!
//! Video tokens run through `N` backbone blocks. Guidance reaches them by
//! addition at each block input: context block `j` feeds blocks `2j` and
//! `2j + 1`, and the single interaction-guider output is added at every
//! block.

use std::collections::BTreeMap;

use crate::conditioning::caption_token_ids;
use crate::conditioning::{arope_attention, assign_segments, ActionGroups, RopeTable};
use crate::error::{shape_err, Error, Result};
use crate::script::ActionScript;
use crate::tensor::{GradTape, Real, Tensor, Var};

use super::clip::{GuidanceBundle, LatentClip};
use super::config::BackboneConfig;
use super::params::ModelParams;
use super::patch::{patchify, unpatchify};

/// Which caption inputs reach the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaptionMode {
    /// Global caption and per-segment action captions.
    Full,
    /// Global caption with every action group replaced by the null caption.
    NullActions,
    /// Null global caption and null action groups.
    Unconditional,
}

/// Script-derived caption inputs at latent-frame resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConditioning {
    /// Caption vocabulary rows; `None` selects the null caption.
    pub caption: Option<Vec<usize>>,
    pub groups: ActionGroups,
    /// Segment index of each latent frame.
    pub frame_segments: Vec<usize>,
}

impl ModelConditioning {
    /// Maps a video-frame script onto `cfg.latent[0]` latent frames, where
    /// latent frame `ℓ` covers video frames `[ℓ·c_t, (ℓ+1)·c_t)`.
    pub fn from_script(
        script: &ActionScript,
        frames: usize,
        c_t: usize,
        cfg: &BackboneConfig,
        mode: CaptionMode,
    ) -> Result<Self> {
        if c_t == 0 || frames != c_t * cfg.latent[0] {
            return Err(Error::InvalidArgument(format!(
                "{frames} frames with compression {c_t} do not give {} latent frames",
                cfg.latent[0]
            )));
        }
        let latent = script.to_latent(frames, c_t)?;
        let map = assign_segments(&latent, cfg.latent[0])?;
        let mut groups = ActionGroups::from_map(&map, cfg.tokens_per_action);
        if mode != CaptionMode::Full {
            groups = groups.nulled();
        }
        let ids = caption_token_ids(&script.global_caption);
        let caption = (mode != CaptionMode::Unconditional && !ids.is_empty()).then_some(ids);
        Ok(Self {
            caption,
            groups,
            frame_segments: map.indices(),
        })
    }

    /// The same layout with every caption input nulled.
    pub fn unconditional(&self) -> Self {
        Self {
            caption: None,
            groups: self.groups.nulled(),
            frame_segments: self.frame_segments.clone(),
        }
    }
}

/// Parameters recorded on a tape, looked up by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Records every tensor of `params`; `trainable` decides whether
    /// gradients flow to them.
    pub fn bind<F: Real>(tape: &mut GradTape<F>, params: &ModelParams<F>, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Text inputs shared by all backbone blocks.
#[derive(Clone, Debug)]
pub struct TextContext {
    /// Global caption tokens `[n, d_txt]`.
    pub caption: Var,
    /// Action tokens of all groups in segment order `[m, d_txt]`.
    pub actions: Var,
    /// Rotary segment per action token.
    pub key_segments: Vec<Option<usize>>,
    /// Segment of each video token.
    pub query_segments: Vec<usize>,
}

struct Net<'a, F: Real> {
    tape: &'a mut GradTape<F>,
    p: &'a BoundParams,
    cfg: &'a BackboneConfig,
}

impl<F: Real> Net<'_, F> {
    fn lin(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p.get(&format!("{name}.w"))?;
        let b = self.p.get(&format!("{name}.b"))?;
        self.tape.linear(x, w, Some(b))
    }

    fn lin_nobias(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p.get(&format!("{name}.w"))?;
        self.tape.linear(x, w, None)
    }

    /// Pre-norm attention branch; `kv = None` is self-attention.
    fn attn(&mut self, name: &str, x: Var, kv: Option<Var>) -> Result<Var> {
        let h = self.tape.layer_norm(x);
        let src = kv.unwrap_or(h);
        let q = self.lin(h, &format!("{name}.q"))?;
        let k = self.lin_nobias(src, &format!("{name}.k"))?;
        let v = self.lin(src, &format!("{name}.v"))?;
        let a = self.tape.attention(q, k, v, self.cfg.heads)?;
        self.lin(a, &format!("{name}.o"))
    }

    fn mlp(&mut self, name: &str, x: Var) -> Result<Var> {
        let h = self.tape.layer_norm(x);
        let h = self.lin(h, &format!("{name}.fc1"))?;
        let h = self.tape.silu(h);
        self.lin(h, &format!("{name}.fc2"))
    }

    fn residual(&mut self, x: Var, branch: Var) -> Result<Var> {
        self.tape.add(x, branch)
    }

    /// Token embedding plus the learned position table.
    fn embed(&mut self, tokens: Tensor<F>, name: &str) -> Result<Var> {
        let x = self.tape.constant(tokens);
        let x = self.lin(x, name)?;
        let pos = self.p.get("embed.pos")?;
        self.tape.add(x, pos)
    }
}

/// Sinusoidal features of `1000·t`, cosines then sines.
pub fn timestep_features<F: Real>(t: f64, dim: usize) -> Tensor<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let a = 1000.0 * t * freq;
        out[i] = F::of(a.cos());
        out[half + i] = F::of(a.sin());
    }
    Tensor::new([1, dim], out).expect("even positive width")
}

/// One backbone block: add injected features, then self-attention,
/// global-caption cross-attention, rotary temporal cross-attention and
/// MLP, each as a pre-norm residual branch.
pub fn dit_block_forward<F: Real>(
    tape: &mut GradTape<F>,
    params: &BoundParams,
    cfg: &BackboneConfig,
    block: usize,
    tokens: Var,
    text: &TextContext,
    injected: Option<Var>,
) -> Result<Var> {
    if block >= cfg.blocks {
        return Err(Error::InvalidArgument(format!(
            "block {block} of {}",
            cfg.blocks
        )));
    }
    let mut net = Net {
        tape,
        p: params,
        cfg,
    };
    let mut x = tokens;
    if let Some(inj) = injected {
        if net.tape.value(inj).shape() != net.tape.value(x).shape() {
            return shape_err(format!(
                "injected {:?} vs tokens {:?}",
                net.tape.value(inj).shape(),
                net.tape.value(x).shape()
            ));
        }
        x = net.tape.add(x, inj)?;
    }
    let b = format!("block{block}");
    let a = net.attn(&format!("{b}.self"), x, None)?;
    x = net.residual(x, a)?;
    let a = net.attn(&format!("{b}.caption"), x, Some(text.caption))?;
    x = net.residual(x, a)?;

    let h = net.tape.layer_norm(x);
    let q = net.lin(h, &format!("{b}.action.q"))?;
    let k = net.lin_nobias(text.actions, &format!("{b}.action.k"))?;
    let v = net.lin(text.actions, &format!("{b}.action.v"))?;
    let table = RopeTable::new(cfg.head_dim(), cfg.rope_base)?;
    let a = arope_attention(
        net.tape,
        q,
        k,
        v,
        &text.query_segments,
        &text.key_segments,
        cfg.arope_scale,
        &table,
        cfg.heads,
    )?;
    let a = net.lin(a, &format!("{b}.action.o"))?;
    x = net.residual(x, a)?;

    let m = net.mlp(&format!("{b}.mlp"), x)?;
    net.residual(x, m)
}

/// Advances the context stream through block `j` and returns
/// `(next stream, injection features)`.
pub fn context_block_forward<F: Real>(
    tape: &mut GradTape<F>,
    params: &BoundParams,
    cfg: &BackboneConfig,
    j: usize,
    stream: Var,
) -> Result<(Var, Var)> {
    if j >= cfg.context_blocks() {
        return Err(Error::InvalidArgument(format!(
            "context block {j} of {}",
            cfg.context_blocks()
        )));
    }
    let mut net = Net {
        tape,
        p: params,
        cfg,
    };
    let b = format!("context{j}");
    let a = net.attn(&format!("{b}.self"), stream, None)?;
    let x = net.residual(stream, a)?;
    let m = net.mlp(&format!("{b}.mlp"), x)?;
    let x = net.residual(x, m)?;
    let inj = net.lin(x, &format!("{b}.proj"))?;
    Ok((x, inj))
}

/// Hand tokens attend to themselves, then to the global caption and the
/// distinct action captions; the projection is added at every block.
pub fn guider_forward<F: Real>(
    tape: &mut GradTape<F>,
    params: &BoundParams,
    cfg: &BackboneConfig,
    hand_tokens: Var,
    caption: Var,
    actions: Var,
) -> Result<Var> {
    let mut net = Net {
        tape,
        p: params,
        cfg,
    };
    let a = net.attn("guider.self", hand_tokens, None)?;
    let x = net.residual(hand_tokens, a)?;
    let text = net.tape.concat_rows(&[caption, actions])?;
    let a = net.attn("guider.cross", x, Some(text))?;
    let x = net.residual(x, a)?;
    net.lin(x, "guider.proj")
}

/// Action-token rows of each distinct group, ordered by label id with the
/// null caption last.
pub fn distinct_action_rows(groups: &ActionGroups) -> Vec<usize> {
    let mut distinct: Vec<_> = groups
        .groups
        .iter()
        .map(|g| (g.label.is_none(), g.label, &g.rows))
        .collect();
    distinct.sort();
    distinct.dedup();
    distinct
        .into_iter()
        .flat_map(|(_, _, rows)| rows.iter().copied())
        .collect()
}

fn check_inputs<F: Real>(
    cfg: &BackboneConfig,
    z_t: &LatentClip<F>,
    t: f64,
    bundle: &GuidanceBundle<F>,
    cond: &ModelConditioning,
) -> Result<()> {
    if z_t.dims() != cfg.latent {
        return shape_err(format!(
            "latent {:?}, config expects {:?}",
            z_t.dims(),
            cfg.latent
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    bundle.validate(cfg.latent, cfg.pose_channels, cfg.hand_channels)?;
    if cond.frame_segments.len() != cfg.latent[0] {
        return shape_err(format!(
            "{} frame segments for {} latent frames",
            cond.frame_segments.len(),
            cfg.latent[0]
        ));
    }
    if cond.groups.groups.is_empty() {
        return Err(Error::Segments("conditioning has no segment groups".into()));
    }
    Ok(())
}

/// Records the full denoiser and returns the predicted velocity in token
/// layout `[n_tokens, C·p_t·p_h·p_w]`.
pub fn model_forward_tape<F: Real>(
    tape: &mut GradTape<F>,
    params: &BoundParams,
    cfg: &BackboneConfig,
    z_t: &LatentClip<F>,
    t: f64,
    bundle: &GuidanceBundle<F>,
    cond: &ModelConditioning,
) -> Result<Var> {
    check_inputs(cfg, z_t, t, bundle, cond)?;
    let hand = bundle
        .hand
        .as_ref()
        .ok_or_else(|| Error::IncompleteBundle("hand prior channels missing".into()))?;

    let mut net = Net {
        tape,
        p: params,
        cfg,
    };
    let mut x = net.embed(patchify(z_t.tensor(), cfg.patch)?, "embed.video")?;
    let tf = net.tape.constant(timestep_features(t, cfg.time_dim));
    let temb = net.lin(tf, "time.fc1")?;
    let temb = net.tape.silu(temb);
    let temb = net.lin(temb, "time.fc2")?;
    x = net.tape.add_row(x, temb)?;

    let caption = match &cond.caption {
        Some(ids) => {
            let table = net.p.get("text.caption")?;
            net.tape.gather(table, ids.clone())?
        }
        None => net.p.get("text.null")?,
    };
    let action_table = net.p.get("text.action")?;
    let actions = net.tape.gather(action_table, cond.groups.token_rows())?;
    let guider_actions = net
        .tape
        .gather(action_table, distinct_action_rows(&cond.groups))?;

    let per_frame = cfg.tokens_per_frame() * cfg.patch[0];
    let query_segments = (0..cfg.tokens())
        .map(|i| cond.frame_segments[i / per_frame * cfg.patch[0]])
        .collect();
    let text = TextContext {
        caption,
        actions,
        key_segments: cond.groups.key_segments(),
        query_segments,
    };

    let mut ctx = net.embed(
        patchify(&bundle.context_stack()?, cfg.patch)?,
        "embed.context",
    )?;
    let hand_tokens = net.embed(patchify(hand, cfg.patch)?, "embed.hand")?;
    let guide = guider_forward(tape, params, cfg, hand_tokens, caption, guider_actions)?;

    for j in 0..cfg.context_blocks() {
        let (next, hint) = context_block_forward(tape, params, cfg, j, ctx)?;
        ctx = next;
        let inj = tape.add(hint, guide)?;
        for i in [2 * j, 2 * j + 1] {
            x = dit_block_forward(tape, params, cfg, i, x, &text, Some(inj))?;
        }
    }
    let mut net = Net {
        tape,
        p: params,
        cfg,
    };
    let h = net.tape.layer_norm(x);
    net.lin(h, "head")
}

/// Predicted velocity `v̂(z_t, t, c)` with the shape of `z_t`.
pub fn model_forward<F: Real>(
    cfg: &BackboneConfig,
    params: &ModelParams<F>,
    z_t: &LatentClip<F>,
    t: f64,
    bundle: &GuidanceBundle<F>,
    cond: &ModelConditioning,
) -> Result<LatentClip<F>> {
    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let out = model_forward_tape(&mut tape, &bound, cfg, z_t, t, bundle, cond)?;
    let v = unpatchify(tape.value(out), cfg.latent, cfg.patch)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("model output".into()));
    }
    LatentClip::new(v)
}
