//! Flow-matching objective, trainer and guided Euler sampler.

mod check;
mod loss;
mod sampler;
mod trainer;

#[cfg(test)]
mod tests;

pub use check::{objective_gradient_check, GradCheckReport};
pub use loss::{
    ac_loss, ac_loss_weights, loss_weight, make_training_pair, segments_to_action_mask, AcLoss,
    ActionMask, LossWeight,
};
pub use sampler::{
    initial_noise, sample, sample_from, Branch, Denoiser, SampleConfig, VelocityField,
};
pub use trainer::{StepLog, TimestepSampler, TrainConfig, TrainSample, Trainer};
