use super::*;
use crate::backbone::{
    model_forward, model_forward_tape, patchify, BackboneConfig, BoundParams, CaptionMode,
    GuidanceBundle, LatentClip, ModelConditioning, ModelParams,
};
use crate::script::{ActionLabel, ActionScript, ActionSegment};
use crate::tensor::gradcheck::finite_diff_check_at;
use crate::tensor::{GradTape, Real, SeededRng, Tensor};

fn train_sample<F: Real>(
    cfg: &BackboneConfig,
    seed: u64,
    label: ActionLabel,
    span: (usize, usize),
) -> TrainSample<F> {
    let [t, c, h, w] = cfg.latent;
    let mut r = SeededRng::new(seed);
    let bundle = GuidanceBundle::<f64> {
        pose: r.normal_tensor([t, cfg.pose_channels, h, w], 1.0),
        agnostic: r.normal_tensor([t, c, h, w], 1.0),
        hand: Some(r.normal_tensor([t, cfg.hand_channels, h, w], 1.0)),
        garment: r.normal_tensor([c, h, w], 1.0),
    };
    TrainSample {
        x0: LatentClip::new(r.normal_tensor::<f64>(cfg.latent.to_vec(), 1.0))
            .unwrap()
            .cast(),
        bundle: bundle.cast(),
        script: ActionScript::new(
            "plain shirt",
            vec![ActionSegment::new(label, span.0, span.1)],
        ),
        frames: 4 * t,
    }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 10,
        lr: 3e-3,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = BackboneConfig::tiny();
    let data = vec![
        train_sample::<f32>(&cfg, 1, ActionLabel::AdjustHem, (2, 6)),
        train_sample(&cfg, 2, ActionLabel::DonDoff, (0, 3)),
    ];
    let run = || {
        let mut tr = Trainer::<f32>::new(
            cfg.clone(),
            TrainConfig {
                batch_size: 2,
                ..quick(7)
            },
        )
        .unwrap();
        let mut logs = Vec::new();
        tr.fit(&data, |l| logs.push(*l)).unwrap();
        (tr.params, logs)
    };
    let (pa, la) = run();
    let (pb, lb) = run();
    assert_eq!(la.len(), 10);
    assert_eq!(la, lb);
    for (name, t) in &pa.tensors {
        assert_eq!(t.data(), pb.tensors[name].data(), "{name}");
    }
    let other = Trainer::<f32>::new(cfg.clone(), quick(8)).unwrap();
    assert_ne!(
        other.params.tensors["text.caption"].data(),
        pa.tensors["text.caption"].data()
    );
}

#[test]
fn stage_schedule() {
    let c = TrainConfig {
        stage1_steps: 5,
        ..TrainConfig::default()
    };
    assert_eq!(c.mode_at(4), CaptionMode::NullActions);
    assert_eq!(c.mode_at(5), CaptionMode::Full);
    let c = TrainConfig {
        action_captions: false,
        ..TrainConfig::default()
    };
    assert_eq!(c.mode_at(10_000), CaptionMode::NullActions);
}

#[test]
fn null_action_training_leaves_label_table_untouched() {
    // Only the null rows of the action table can receive gradient.
    let cfg = BackboneConfig::tiny();
    let data = vec![train_sample::<f64>(
        &cfg,
        3,
        ActionLabel::RollSleeves,
        (1, 6),
    )];
    let config = TrainConfig {
        action_captions: false,
        cfg_drop_prob: 0.0,
        ..quick(2)
    };
    let params = ModelParams::<f64>::init_dense(&cfg, 4).unwrap();
    let before = params.tensors["text.action"].clone();
    let mut tr = Trainer::with_params(cfg.clone(), config, params).unwrap();
    tr.fit(&data, |_| {}).unwrap();
    let after = &tr.params.tensors["text.action"];
    let n = cfg.tokens_per_action;
    let label_rows = ActionLabel::RollSleeves.id() * n..(ActionLabel::RollSleeves.id() + 1) * n;
    for r in label_rows {
        assert_eq!(before.row(r), after.row(r));
    }
    let null = crate::script::NULL_LABEL_ID * n;
    assert_ne!(before.row(null), after.row(null));
}

#[test]
fn logged_parts_are_consistent() {
    let cfg = BackboneConfig::tiny();
    let data = vec![train_sample::<f64>(
        &cfg,
        5,
        ActionLabel::PullClothes,
        (2, 6),
    )];
    let params = ModelParams::<f64>::init_dense(&cfg, 6).unwrap();
    for lambda in [0.0, 0.5, 2.0] {
        let config = TrainConfig {
            lambda,
            loss_weight: LossWeight::MidEmphasis,
            ..quick(9)
        };
        let mut tr = Trainer::with_params(cfg.clone(), config, params.clone()).unwrap();
        let log = tr.train_step(&[&data[0]]).unwrap();
        assert!(!log.skipped);
        assert!((log.loss - log.base - log.masked).abs() < 1e-12);
        if lambda == 0.0 {
            assert_eq!(log.masked, 0.0);
        } else {
            assert!(log.masked > 0.0);
        }
        assert!(log.grad_norm > 0.0);
        assert_eq!(log.line().split('\t').count(), 6);
    }
}

#[test]
fn same_draws_differ_only_by_masked_term() {
    // Identical seeds draw identical t and noise, so base terms agree.
    let cfg = BackboneConfig::tiny();
    let s = train_sample::<f64>(&cfg, 5, ActionLabel::AdjustCollar, (0, 4));
    let params = ModelParams::<f64>::init_dense(&cfg, 6).unwrap();
    let step = |lambda| {
        let mut tr = Trainer::with_params(
            cfg.clone(),
            TrainConfig { lambda, ..quick(1) },
            params.clone(),
        )
        .unwrap();
        tr.train_step(&[&s]).unwrap()
    };
    let (a, b) = (step(0.0), step(1.5));
    assert_eq!(a.t, b.t);
    assert_eq!(a.base, b.base);
    assert!((b.loss - a.loss - b.masked).abs() < 1e-12);
}

fn tape_loss(
    cfg: &BackboneConfig,
    params: &ModelParams<f64>,
    s: &TrainSample<f64>,
    t: f64,
    eps: &LatentClip<f64>,
    lambda: f64,
) -> (f64, AcLoss) {
    let cond =
        ModelConditioning::from_script(&s.script, s.frames, 4, cfg, CaptionMode::Full).unwrap();
    let (z, v) = make_training_pair(&s.x0, eps, t).unwrap();
    let mask = segments_to_action_mask(&s.script, s.frames, 4).unwrap();
    let w = loss_weight(t, LossWeight::MidEmphasis).unwrap();
    let weights = ac_loss_weights::<f64>(v.dims(), &mask, lambda, w).unwrap();
    let weights = patchify(&Tensor::new(v.dims().to_vec(), weights).unwrap(), cfg.patch)
        .unwrap()
        .into_data();
    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let pred = model_forward_tape(&mut tape, &bound, cfg, &z, t, &s.bundle, &cond).unwrap();
    let l = tape
        .weighted_sq_error(pred, patchify(v.tensor(), cfg.patch).unwrap(), weights)
        .unwrap();
    let direct = model_forward(cfg, params, &z, t, &s.bundle, &cond).unwrap();
    (
        tape.value(l).data()[0],
        ac_loss(&direct, &v, &mask, lambda, w).unwrap(),
    )
}

#[test]
fn tape_objective_matches_reference_loss() {
    let cfg = BackboneConfig::tiny();
    let params = ModelParams::<f64>::init_dense(&cfg, 11).unwrap();
    let s = train_sample::<f64>(&cfg, 12, ActionLabel::Other, (3, 7));
    let eps = LatentClip::new(SeededRng::new(13).normal_tensor(cfg.latent.to_vec(), 1.0)).unwrap();
    for (t, lambda) in [(0.1, 0.0), (0.5, 0.5), (0.83, 3.0)] {
        let (tape, reference) = tape_loss(&cfg, &params, &s, t, &eps, lambda);
        assert!(
            (tape - reference.loss).abs() <= 1e-12 * reference.loss.max(1.0),
            "{tape} vs {reference:?}"
        );
    }
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let cfg = BackboneConfig::tiny();
    let params = ModelParams::<f64>::init_dense(&cfg, 21).unwrap();
    let s = train_sample::<f64>(&cfg, 22, ActionLabel::AdjustHem, (1, 5));
    let eps = LatentClip::new(SeededRng::new(23).normal_tensor(cfg.latent.to_vec(), 1.0)).unwrap();
    let (t, lambda) = (0.37, 0.5);
    let cond =
        ModelConditioning::from_script(&s.script, s.frames, 4, &cfg, CaptionMode::Full).unwrap();
    let (z, v) = make_training_pair(&s.x0, &eps, t).unwrap();
    let mask = segments_to_action_mask(&s.script, s.frames, 4).unwrap();
    let weights = ac_loss_weights::<f64>(v.dims(), &mask, lambda, 1.0).unwrap();
    let weights = patchify(&Tensor::new(v.dims().to_vec(), weights).unwrap(), cfg.patch)
        .unwrap()
        .into_data();
    let target = patchify(v.tensor(), cfg.patch).unwrap();

    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, &params, true);
    let pred = model_forward_tape(&mut tape, &bound, &cfg, &z, t, &s.bundle, &cond).unwrap();
    let l = tape.weighted_sq_error(pred, target, weights).unwrap();
    let grads = tape.backward(l).unwrap();

    for name in [
        "head.w",
        "block1.action.q.w",
        "text.action",
        "guider.proj.w",
    ] {
        let analytic = grads.get(bound.get(name).unwrap()).unwrap().clone();
        let f = |x: &Tensor<f64>| {
            let mut p = params.clone();
            *p.get_mut(name).unwrap() = x.clone();
            let pred = model_forward(&cfg, &p, &z, t, &s.bundle, &cond).unwrap();
            ac_loss(&pred, &v, &mask, lambda, 1.0).unwrap().loss
        };
        let probes: Vec<usize> = (0..analytic.len())
            .step_by(analytic.len().div_ceil(8).max(1))
            .collect();
        let worst =
            finite_diff_check_at(f, params.get(name).unwrap(), &analytic, 1e-4, &probes).unwrap();
        assert!(worst < 1e-4, "{name}: {worst}");
    }
}

#[test]
fn overfits_single_clip() {
    let cfg = BackboneConfig::tiny();
    let data = vec![train_sample::<f32>(&cfg, 31, ActionLabel::DonDoff, (0, 4))];
    let config = TrainConfig {
        steps: 300,
        lr: 3e-3,
        cfg_drop_prob: 0.0,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::<f32>::new(cfg, config).unwrap();
    let mut losses = Vec::new();
    tr.fit(&data, |l| losses.push(l.loss)).unwrap();
    let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = losses[250..].iter().sum::<f64>() / 50.0;
    assert!(tail < 0.7 * head, "{head} -> {tail}");
}

#[test]
fn denoiser_sampling_is_deterministic() {
    let cfg = BackboneConfig::tiny();
    let params = ModelParams::<f32>::init_dense(&cfg, 41).unwrap();
    let s = train_sample::<f32>(&cfg, 42, ActionLabel::AdjustCollar, (2, 5));
    let cond =
        ModelConditioning::from_script(&s.script, s.frames, 4, &cfg, CaptionMode::Full).unwrap();
    let field = Denoiser {
        config: &cfg,
        params: &params,
        bundle: &s.bundle,
        cond: &cond,
    };
    let sc = SampleConfig {
        steps: 6,
        seed: 3,
        ..SampleConfig::default()
    };
    let a = sample(&field, cfg.latent, &sc).unwrap();
    assert_eq!(a, sample(&field, cfg.latent, &sc).unwrap());
    assert_eq!(a.dims(), cfg.latent);
}

#[test]
fn whole_model_gradient_check() {
    let r = objective_gradient_check(&BackboneConfig::tiny(), 3, 8, 1e-4, 0.5).unwrap();
    assert!(r.tensors > 50);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
