use serde::{Deserialize, Serialize};

use crate::backbone::{
    model_forward_tape, patchify, unpatchify, BackboneConfig, BoundParams, CaptionMode,
    GuidanceBundle, LatentClip, ModelConditioning, ModelParams,
};
use crate::error::{Error, Result};
use crate::script::ActionScript;
use crate::tensor::{
    adamw_step, AdamWConfig, AdamWState, GradTape, Real, SeededRng, StepOutcome, Tensor, TensorMap,
};

use super::loss::{
    ac_loss_weights, loss_weight, make_training_pair, segments_to_action_mask, LossWeight,
};

/// How training timesteps are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimestepSampler {
    #[default]
    Uniform,
    /// `sigmoid(N(0, 1))`.
    LogitNormal,
}

impl TimestepSampler {
    pub fn draw(self, rng: &mut SeededRng) -> f64 {
        match self {
            Self::Uniform => rng.uniform(),
            Self::LogitNormal => 1.0 / (1.0 + (-rng.normal()).exp()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the masked term.
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub timestep_sampler: TimestepSampler,
    pub loss_weight: LossWeight,
    /// When false every step uses null action captions.
    pub action_captions: bool,
    /// Leading steps trained with null action captions before the action
    /// stage starts.
    pub stage1_steps: usize,
    /// Probability of replacing all captions with the null caption.
    pub cfg_drop_prob: f64,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            lr: 1e-3,
            steps: 2000,
            batch_size: 1,
            timestep_sampler: TimestepSampler::Uniform,
            loss_weight: LossWeight::Uniform,
            action_captions: true,
            stage1_steps: 0,
            cfg_drop_prob: 0.1,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return bad(format!(
                "drop probability must lie in [0, 1], got {}",
                self.cfg_drop_prob
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }

    /// Caption mode of `step` before conditioning dropout.
    pub fn mode_at(&self, step: usize) -> CaptionMode {
        if self.action_captions && step >= self.stage1_steps {
            CaptionMode::Full
        } else {
            CaptionMode::NullActions
        }
    }
}

/// One training clip with its guidance and script.
#[derive(Clone, Debug)]
pub struct TrainSample<F = f32> {
    pub x0: LatentClip<F>,
    pub bundle: GuidanceBundle<F>,
    pub script: ActionScript,
    /// Video frames the script refers to.
    pub frames: usize,
}

impl<F: Real> TrainSample<F> {
    /// Video frames per latent frame.
    pub fn compression(&self) -> Result<usize> {
        let t = self.x0.dims()[0];
        if self.frames % t != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} frames over {t} latent frames",
                self.frames
            )));
        }
        Ok(self.frames / t)
    }
}

/// Diagnostics of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    /// Mean timestep over the batch.
    pub t: f64,
    pub loss: f64,
    pub base: f64,
    pub masked: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

impl StepLog {
    /// Tab-separated `step, t, loss, base, masked, grad_norm`.
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.8}\t{:.8}\t{:.8}\t{:.6}",
            self.step, self.t, self.loss, self.base, self.masked, self.grad_norm
        )
    }
}

/// Owns the parameters, optimizer state and random stream of one run.
pub struct Trainer<F: Real = f32> {
    pub model: BackboneConfig,
    pub config: TrainConfig,
    pub params: ModelParams<F>,
    pub opt: AdamWState<F>,
    rng: SeededRng,
    step: usize,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: BackboneConfig, config: TrainConfig) -> Result<Self> {
        let params = ModelParams::init(&model, config.seed)?;
        Self::with_params(model, config, params)
    }

    pub fn with_params(
        model: BackboneConfig,
        config: TrainConfig,
        params: ModelParams<F>,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        params.check(&model)?;
        let adam = AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        };
        let opt = AdamWState::new(adam, &params.tensors);
        let rng = SeededRng::derive(config.seed, 1);
        Ok(Self {
            model,
            config,
            params,
            opt,
            rng,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One optimizer step on `batch`; the loss is the batch mean.
    pub fn train_step(&mut self, batch: &[&TrainSample<F>]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mode = self.config.mode_at(self.step);
        let mut tape = GradTape::new();
        let bound = BoundParams::bind(&mut tape, &self.params, true);
        let inv_b = 1.0 / batch.len() as f64;
        let mut losses = Vec::with_capacity(batch.len());
        let (mut t_sum, mut loss, mut base, mut masked) = (0.0, 0.0, 0.0, 0.0);
        for sample in batch {
            let t = self.config.timestep_sampler.draw(&mut self.rng);
            let eps = LatentClip::new(self.rng.normal_tensor::<F>(sample.x0.dims().to_vec(), 1.0))?;
            let dropped = self.rng.uniform() < self.config.cfg_drop_prob;
            let c_t = sample.compression()?;
            let mut cond = ModelConditioning::from_script(
                &sample.script,
                sample.frames,
                c_t,
                &self.model,
                mode,
            )?;
            if dropped {
                cond = cond.unconditional();
            }
            let (z_t, v) = make_training_pair(&sample.x0, &eps, t)?;
            let mask = segments_to_action_mask(&sample.script, sample.frames, c_t)?;
            let w_t = loss_weight(t, self.config.loss_weight)? * inv_b;
            let dims = v.dims();
            let weights = ac_loss_weights::<F>(dims, &mask, self.config.lambda, w_t)?;
            let weights =
                patchify(&Tensor::new(dims.to_vec(), weights)?, self.model.patch)?.into_data();
            let target = patchify(v.tensor(), self.model.patch)?;
            let pred = model_forward_tape(
                &mut tape,
                &bound,
                &self.model,
                &z_t,
                t,
                &sample.bundle,
                &cond,
            )?;
            let pred_clip =
                LatentClip::unchecked(unpatchify(tape.value(pred), dims, self.model.patch)?);
            let parts = super::loss::ac_loss(&pred_clip, &v, &mask, self.config.lambda, w_t)?;
            losses.push(tape.weighted_sq_error(pred, target, weights)?);
            t_sum += t;
            loss += parts.loss;
            base += parts.base;
            masked += parts.masked;
        }
        let total = if losses.len() == 1 {
            losses[0]
        } else {
            let mut acc = losses[0];
            for &l in &losses[1..] {
                acc = tape.add(acc, l)?;
            }
            acc
        };
        let mut grads = tape.backward(total)?;
        let mut gmap: TensorMap<F> = TensorMap::new();
        let mut sq = 0.0f64;
        for (name, var) in bound.iter() {
            if let Some(g) = grads.take(var) {
                sq += g
                    .data()
                    .iter()
                    .map(|x| x.as_f64() * x.as_f64())
                    .sum::<f64>();
                gmap.insert(name.to_string(), g);
            }
        }
        let outcome = adamw_step(
            &mut self.params.tensors,
            &gmap,
            &mut self.opt,
            self.config.lr,
        )?;
        let log = StepLog {
            step: self.step,
            t: t_sum * inv_b,
            loss,
            base,
            masked,
            grad_norm: sq.sqrt(),
            skipped: outcome == StepOutcome::SkippedNonFinite,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs `config.steps − step_count()` steps, drawing batch members
    /// uniformly from `data` with the trainer's own stream.
    pub fn fit(
        &mut self,
        data: &[TrainSample<F>],
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        while self.step < self.config.steps {
            let batch: Vec<&TrainSample<F>> = (0..self.config.batch_size)
                .map(|_| &data[self.rng.below(data.len())])
                .collect();
            let log = self.train_step(&batch)?;
            on_step(&log);
        }
        Ok(())
    }
}
