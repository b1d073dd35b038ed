use serde::Serialize;

use crate::backbone::{
    model_forward, model_forward_tape, patchify, BackboneConfig, BoundParams, CaptionMode,
    GuidanceBundle, LatentClip, ModelConditioning, ModelParams,
};
use crate::error::Result;
use crate::script::{ActionLabel, ActionScript, ActionSegment};
use crate::tensor::gradcheck::finite_diff_check_at;
use crate::tensor::{GradTape, SeededRng, Tensor};

use super::loss::{ac_loss, ac_loss_weights, make_training_pair, segments_to_action_mask};

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error over every probed entry.
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub tensors: usize,
    pub probes: usize,
}

/// Central-difference check of the action-aware loss gradient through the
/// whole model in `f64`, probing `per_tensor` evenly spaced entries of every
/// parameter tensor.
pub fn objective_gradient_check(
    model: &BackboneConfig,
    seed: u64,
    per_tensor: usize,
    eps: f64,
    lambda: f64,
) -> Result<GradCheckReport> {
    model.validate()?;
    let params = ModelParams::<f64>::init_dense(model, seed)?;
    let [t, c, h, w] = model.latent;
    let mut r = SeededRng::derive(seed, 7);
    let bundle = GuidanceBundle {
        pose: r.normal_tensor([t, model.pose_channels, h, w], 1.0),
        agnostic: r.normal_tensor([t, c, h, w], 1.0),
        hand: Some(r.normal_tensor([t, model.hand_channels, h, w], 1.0)),
        garment: r.normal_tensor([c, h, w], 1.0),
    };
    let c_t = 2;
    let frames = c_t * t;
    let segments = if frames >= 4 {
        vec![
            ActionSegment::new(ActionLabel::AdjustHem, 0, frames / 2),
            ActionSegment::new(ActionLabel::Other, frames / 2, frames - 1),
        ]
    } else {
        vec![ActionSegment::new(ActionLabel::AdjustHem, 0, frames)]
    };
    let script = ActionScript::new("striped shirt", segments);
    let cond = ModelConditioning::from_script(&script, frames, c_t, model, CaptionMode::Full)?;
    let x0 = LatentClip::new(r.normal_tensor(model.latent.to_vec(), 1.0))?;
    let noise = LatentClip::new(r.normal_tensor(model.latent.to_vec(), 1.0))?;
    let time = 0.37;
    let (z, v) = make_training_pair(&x0, &noise, time)?;
    let mask = segments_to_action_mask(&script, frames, c_t)?;
    let weights = ac_loss_weights::<f64>(v.dims(), &mask, lambda, 1.0)?;
    let weights = patchify(&Tensor::new(v.dims().to_vec(), weights)?, model.patch)?.into_data();

    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, &params, true);
    let pred = model_forward_tape(&mut tape, &bound, model, &z, time, &bundle, &cond)?;
    let loss = tape.weighted_sq_error(pred, patchify(v.tensor(), model.patch)?, weights)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        tensors: 0,
        probes: 0,
    };
    for (name, var) in bound.iter() {
        let x = params.get(name)?;
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
        let stride = x.len().div_ceil(per_tensor.max(1)).max(1);
        let probes: Vec<usize> = (0..x.len()).step_by(stride).take(per_tensor).collect();
        let f = |val: &Tensor<f64>| {
            let mut p = params.clone();
            *p.get_mut(name).expect("bound name") = val.clone();
            model_forward(model, &p, &z, time, &bundle, &cond)
                .and_then(|pred| ac_loss(&pred, &v, &mask, lambda, 1.0))
                .map_or(f64::NAN, |l| l.loss)
        };
        let err = finite_diff_check_at(f, x, &analytic, eps, &probes)?;
        report.tensors += 1;
        report.probes += probes.len();
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_tensor = name.to_string();
        }
    }
    Ok(report)
}
