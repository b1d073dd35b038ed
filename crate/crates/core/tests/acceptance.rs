//! End-to-end acceptance checks, one line per criterion.
//!
//! Criteria 7 and 8 train nine default-size models (three seeds, three
//! arms) and take roughly half an hour on one core.

use std::time::Instant;

use itryon::annotate::{morph_close, morph_open, LabelSequence};
use itryon::backbone::{
    model_forward, read_tensors, write_tensors, BackboneConfig, CaptionMode, LatentClip,
    ModelConditioning, ModelParams,
};
use itryon::conditioning::{apply_arope, apply_rope, RopeTable, DEFAULT_ROPE_BASE};
use itryon::diffusion::{
    ac_loss, initial_noise, make_training_pair, objective_gradient_check, sample, sample_from,
    segments_to_action_mask, ActionMask, Branch, Denoiser, SampleConfig, TrainConfig, Trainer,
    VelocityField,
};
use itryon::metrics::{isr, masked_mse, IsrReport};
use itryon::synthdata::{detect_clip, expand_verdicts, gen_sample, sample_spec, ClipSpec, Sample};
use itryon::tensor::SeededRng;
use itryon::{ActionLabel, ActionSegment, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn arope_identities() -> Result<Outcome> {
    let d = 16;
    let table = RopeTable::new(d, DEFAULT_ROPE_BASE)?;
    let mut rng = SeededRng::new(1);
    let x = rng.normal_tensor::<f64>([8, d], 1.0);
    let mut bit_equal = true;
    for k in [0, 2, 4, 6] {
        for i in 0..=32 {
            bit_equal &= apply_arope(&x, i, k, &table)? == apply_rope(&x, i * k, &table)?;
        }
    }
    let (mut norm_err, mut shift_err, mut closed_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let q = rng.normal_tensor::<f64>([1, d], 1.0);
        let key = rng.normal_tensor::<f64>([1, d], 1.0);
        let (m, n, shift) = (rng.below(200), rng.below(200), rng.below(200));
        let rq = apply_rope(&q, m, &table)?;
        norm_err = norm_err.max((norm(rq.data()) - norm(q.data())).abs());
        let a = dot(rq.data(), apply_rope(&key, n, &table)?.data());
        let b = dot(
            apply_rope(&q, m + shift, &table)?.data(),
            apply_rope(&key, n + shift, &table)?.data(),
        );
        // Σ_j (q_{2j}k_{2j} + q_{2j+1}k_{2j+1}) cos((n−m)θ_j) + (q_{2j+1}k_{2j} − q_{2j}k_{2j+1}) sin((n−m)θ_j)
        let (qd, kd) = (q.data(), key.data());
        let delta = n as f64 - m as f64;
        let closed: f64 = (0..d / 2)
            .map(|j| {
                let theta = DEFAULT_ROPE_BASE.powf(-2.0 * j as f64 / d as f64);
                let (s, c) = (delta * theta).sin_cos();
                (qd[2 * j] * kd[2 * j] + qd[2 * j + 1] * kd[2 * j + 1]) * c
                    + (qd[2 * j + 1] * kd[2 * j] - qd[2 * j] * kd[2 * j + 1]) * s
            })
            .sum();
        shift_err = shift_err.max((a - b).abs());
        closed_err = closed_err.max((a - closed).abs());
    }
    let pass = bit_equal && norm_err < 1e-10 && shift_err < 1e-10 && closed_err < 1e-10;
    Ok(outcome(
        pass,
        format!("bit-equal={bit_equal} norm_err={norm_err:.1e} shift_err={shift_err:.1e} closed_form_err={closed_err:.1e}"),
    ))
}

fn ac_loss_algebra() -> Result<Outcome> {
    let dims = [4, 3, 5, 5];
    let mut rng = SeededRng::new(2);
    let clip = |r: &mut SeededRng| LatentClip::new(r.normal_tensor::<f64>(dims.to_vec(), 1.0));
    let (v_hat, v) = (clip(&mut rng)?, clip(&mut rng)?);
    let mask = ActionMask::new(vec![false, true, true, false]);
    let n = v.tensor().len() as f64;
    let w_t = 1.7;

    // Plain weighted MSE, accumulated frame by frame.
    let mut total = 0.0;
    for f in 0..dims[0] {
        total += v_hat
            .frame(f)
            .iter()
            .zip(v.frame(f))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let plain = w_t * total / n;
    let reduction_exact = ac_loss(&v_hat, &v, &mask, 0.0, w_t)?.loss == plain;

    let mut worst = 0.0f64;
    let ones = ActionMask::ones(dims[0]);
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let got = ac_loss(&v_hat, &v, &ones, lambda, w_t)?.loss;
        worst = worst.max((got - (1.0 + lambda) * plain).abs() / plain);
        for r in [0.3, -1.25] {
            let shifted = LatentClip::new(v.tensor().map(|x| x + r))?;
            for m in 0..=dims[0] {
                let mask = ActionMask::new((0..dims[0]).map(|f| f < m).collect());
                let got = ac_loss(&shifted, &v, &mask, lambda, w_t)?.loss;
                let want = w_t * r * r * (1.0 + lambda * m as f64 / dims[0] as f64);
                worst = worst.max((got - want).abs());
            }
        }
    }
    let pass = reduction_exact && worst < 1e-12;
    Ok(outcome(
        pass,
        format!("lambda=0 exact={reduction_exact} max_err={worst:.1e}"),
    ))
}

fn gradient_soundness() -> Result<Outcome> {
    let report = objective_gradient_check(&BackboneConfig::tiny(), 3, 8, 1e-4, 0.5)?;
    Ok(outcome(
        report.max_rel_error < 1e-4,
        format!(
            "max_rel_error={:.2e} ({}), {} tensors, {} probes",
            report.max_rel_error, report.worst_tensor, report.tensors, report.probes
        ),
    ))
}

/// Opening as a set: frame `i` survives when some run of `s` ones covers it,
/// with the signal continued indefinitely by its edge values.
fn open_by_definition(x: &[bool], s: usize) -> Vec<bool> {
    let t = x.len() as isize;
    let at = |p: isize| x[p.clamp(0, t - 1) as usize];
    (0..t)
        .map(|i| (i - s as isize + 1..=i).any(|start| (start..start + s as isize).all(at)))
        .collect()
}

fn close_by_definition(x: &[bool], s: usize) -> Vec<bool> {
    let inv: Vec<bool> = x.iter().map(|b| !b).collect();
    open_by_definition(&inv, s)
        .into_iter()
        .map(|b| !b)
        .collect()
}

fn morphology_oracle() -> Result<Outcome> {
    let t = 12;
    let (mut mismatches, mut law_failures) = (0usize, 0usize);
    for s in [1, 3, 5] {
        for bits in 0u32..1 << t {
            let x: Vec<bool> = (0..t).map(|i| bits >> i & 1 == 1).collect();
            let seq = LabelSequence(x.clone());
            let open = morph_open(&seq, s)?;
            let close = morph_close(&seq, s)?;
            mismatches += usize::from(open.0 != open_by_definition(&x, s));
            mismatches += usize::from(close.0 != close_by_definition(&x, s));
            let laws = morph_open(&open, s)? == open
                && morph_close(&close, s)? == close
                && open.0.iter().zip(&x).all(|(o, i)| !o || *i)
                && close.0.iter().zip(&x).all(|(c, i)| *c || !i);
            law_failures += usize::from(!laws);
        }
    }
    Ok(outcome(
        mismatches == 0 && law_failures == 0,
        format!("3 x 4096 sequences, {mismatches} mismatches, {law_failures} law failures"),
    ))
}

fn isr_correctness() -> Result<Outcome> {
    let mut rng = SeededRng::new(5);
    let mut failures = 0;
    for _ in 0..50 {
        let len = 8 + rng.below(57);
        let mut segments = vec![];
        let mut at = rng.below(4);
        while at + 1 < len && (segments.is_empty() || rng.below(3) > 0) {
            let end = (at + 1 + rng.below(8)).min(len);
            segments.push(ActionSegment::new(
                ActionLabel::from_id(rng.below(6))?,
                at,
                end,
            ));
            at = end + rng.below(5);
        }
        let verdicts: Vec<bool> = (0..len).map(|_| rng.below(2) == 1).collect();
        let (mut n, mut x) = (0, 0);
        for f in 0..len {
            if segments.iter().any(|s| s.start <= f && f < s.end) {
                n += 1;
                x += usize::from(verdicts[f]);
            }
        }
        let report = isr(&LabelSequence(verdicts.clone()), &segments)?;
        let outside: Vec<bool> = verdicts
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                if segments.iter().any(|s| s.contains(f)) {
                    v
                } else {
                    !v
                }
            })
            .collect();
        let flipped = isr(&LabelSequence(outside), &segments)?;
        let ok = report.n == n
            && report.x == x
            && report.isr == x as f64 / n as f64
            && flipped == report;
        failures += usize::from(!ok);
    }
    Ok(outcome(
        failures == 0,
        format!("50 cases, {failures} failures"),
    ))
}

/// Branches that differ and depend on `z` and `t`.
struct Toy;

impl VelocityField<f64> for Toy {
    fn velocity(&self, z: &LatentClip<f64>, t: f64, b: Branch) -> Result<LatentClip<f64>> {
        let g = match b {
            Branch::Conditional => 0.7,
            Branch::Unconditional => -0.4,
        };
        LatentClip::new(z.tensor().map(|x| g * x + t * x.sin()))
    }
}

struct Oracle(LatentClip<f64>);

impl VelocityField<f64> for Oracle {
    fn velocity(&self, _: &LatentClip<f64>, _: f64, _: Branch) -> Result<LatentClip<f64>> {
        Ok(self.0.clone())
    }
}

fn euler(
    z1: &LatentClip<f64>,
    steps: usize,
    guide: impl Fn(usize) -> Option<f64>,
) -> Result<LatentClip<f64>> {
    let dt = 1.0 / steps as f64;
    let mut z = z1.clone();
    for i in 0..steps {
        let t = 1.0 - i as f64 / steps as f64;
        let c = Toy.velocity(&z, t, Branch::Conditional)?;
        let v = match guide(i) {
            Some(s) => Toy
                .velocity(&z, t, Branch::Unconditional)?
                .tensor()
                .zip_map(c.tensor(), |u, c| u + s * (c - u))?,
            None => c.into_tensor(),
        };
        z = LatentClip::new(z.tensor().zip_map(&v, |a, b| a - dt * b)?)?;
    }
    Ok(z)
}

fn sampler_equivalences() -> Result<Outcome> {
    let dims = [4, 3, 6, 6];
    let z1 = initial_noise::<f64>(dims, 6);
    let cfg = |scale: f64, interval: [f64; 2]| SampleConfig {
        steps: 50,
        cfg_scale: scale,
        cfg_interval: interval,
        seed: 6,
    };
    let unit = sample_from(&Toy, z1.clone(), &cfg(1.0, [0.0, 0.4]))? == euler(&z1, 50, |_| None)?;
    let always =
        sample_from(&Toy, z1.clone(), &cfg(3.0, [0.0, 1.0]))? == euler(&z1, 50, |_| Some(3.0))?;

    let x0 = LatentClip::new(SeededRng::new(7).normal_tensor::<f64>(dims.to_vec(), 1.0))?;
    let v = LatentClip::new(z1.tensor().zip_map(x0.tensor(), |e, x| e - x)?)?;
    let one = SampleConfig {
        steps: 1,
        ..cfg(3.0, [0.0, 0.4])
    };
    let recovered = sample(&Oracle(v), dims, &one)?;
    let err = recovered.tensor().max_abs_diff(x0.tensor());
    Ok(outcome(
        unit && always && err < 1e-6,
        format!(
            "unit-scale bit-equal={unit} full-interval bit-equal={always} one-step err={err:.1e}"
        ),
    ))
}

const TRAIN_CLIPS: usize = 200;
const VAL_CLIPS: usize = 24;
const ISR_CLIPS: usize = 12;
const VAL_TIMES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

struct Arm {
    lambda: f64,
    actions: bool,
}

struct ArmResult {
    interactive_mse: f64,
    isr: Option<f64>,
}

fn dataset(template_seed: u64, n: usize) -> Result<Vec<Sample>> {
    let template = ClipSpec {
        seed: template_seed,
        ..Default::default()
    };
    (0..n)
        .map(|i| gen_sample(&sample_spec(&template, i)))
        .collect()
}

fn run_arm(
    seed: u64,
    arm: &Arm,
    train: &[Sample],
    val: &[Sample],
    with_isr: bool,
) -> Result<ArmResult> {
    let model = BackboneConfig::default();
    let data: Vec<_> = train.iter().map(Sample::to_train::<f32>).collect();
    let cfg = TrainConfig {
        lambda: arm.lambda,
        action_captions: arm.actions,
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::<f32>::new(model.clone(), cfg)?;
    trainer.fit(&data, |_| {})?;
    let mode = if arm.actions {
        CaptionMode::Full
    } else {
        CaptionMode::NullActions
    };

    let (mut sum, mut count) = (0.0, 0);
    let mut reports = vec![];
    for (k, s) in val.iter().enumerate() {
        let c_t = s.frames / model.latent[0];
        let cond = ModelConditioning::from_script(&s.script, s.frames, c_t, &model, mode)?;
        let mask = segments_to_action_mask(&s.script, s.frames, c_t)?;
        let mut rng = SeededRng::derive(4242, k as u64);
        for t in VAL_TIMES {
            let eps = LatentClip::new(rng.normal_tensor::<f32>(s.x0.dims().to_vec(), 1.0))?;
            let (z, v) = make_training_pair(&s.x0, &eps, t)?;
            let pred = model_forward(&model, &trainer.params, &z, t, &s.bundle, &cond)?;
            if let Some(m) = masked_mse(&pred, &v, &mask)?.interactive {
                sum += m;
                count += 1;
            }
        }
        if with_isr && k < ISR_CLIPS {
            let field = Denoiser {
                config: &model,
                params: &trainer.params,
                bundle: &s.bundle,
                cond: &cond,
            };
            let out = sample(
                &field,
                s.x0.dims(),
                &SampleConfig {
                    seed: k as u64,
                    ..Default::default()
                },
            )?;
            let verdicts = expand_verdicts(&detect_clip(&out, s.label)?, c_t);
            reports.push(isr(&verdicts, &s.script.segments)?);
        }
    }
    let isr = if with_isr {
        Some(IsrReport::combine(&reports)?.isr)
    } else {
        None
    };
    Ok(ArmResult {
        interactive_mse: sum / count as f64,
        isr,
    })
}

fn ablations() -> Result<(Outcome, Outcome)> {
    let val = dataset(99_999, VAL_CLIPS)?;
    let (mut wins_a, mut wins_b) = (0, 0);
    let (mut detail_a, mut detail_b) = (vec![], vec![]);
    for seed in 0..3u64 {
        let train = dataset(1000 + seed, TRAIN_CLIPS)?;
        let started = Instant::now();
        let full = run_arm(
            seed,
            &Arm {
                lambda: 0.5,
                actions: true,
            },
            &train,
            &val,
            true,
        )?;
        let plain = run_arm(
            seed,
            &Arm {
                lambda: 0.0,
                actions: true,
            },
            &train,
            &val,
            false,
        )?;
        let null = run_arm(
            seed,
            &Arm {
                lambda: 0.5,
                actions: false,
            },
            &train,
            &val,
            true,
        )?;
        let (isr_full, isr_null) = (full.isr.unwrap_or(0.0), null.isr.unwrap_or(0.0));
        eprintln!(
            "  seed {seed}: mse(0.5)={:.5} mse(0)={:.5} isr(actions)={isr_full:.4} isr(null)={isr_null:.4} [{:.0}s]",
            full.interactive_mse,
            plain.interactive_mse,
            started.elapsed().as_secs_f64()
        );
        wins_a += usize::from(full.interactive_mse < plain.interactive_mse);
        wins_b += usize::from(isr_full > isr_null);
        let cmp = |a: f64, b: f64| {
            if a < b {
                '<'
            } else if a > b {
                '>'
            } else {
                '='
            }
        };
        detail_a.push(format!(
            "{:.5}{}{:.5}",
            full.interactive_mse,
            cmp(full.interactive_mse, plain.interactive_mse),
            plain.interactive_mse
        ));
        detail_b.push(format!(
            "{isr_full:.3}{}{isr_null:.3}",
            cmp(isr_full, isr_null)
        ));
    }
    Ok((
        outcome(
            wins_a >= 2,
            format!(
                "{wins_a}/3 seeds favour lambda=0.5 [{}]",
                detail_a.join(" ")
            ),
        ),
        outcome(
            wins_b >= 2,
            format!(
                "{wins_b}/3 seeds favour action captions [{}]",
                detail_b.join(" ")
            ),
        ),
    ))
}

fn determinism() -> Result<Outcome> {
    let model = BackboneConfig::default();
    let samples = dataset(77, 4)?;
    let data: Vec<_> = samples.iter().map(Sample::to_train::<f32>).collect();
    let run = || -> Result<(Vec<u8>, Vec<u8>)> {
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 2,
            seed: 11,
            ..Default::default()
        };
        let mut trainer = Trainer::<f32>::new(model.clone(), cfg)?;
        trainer.fit(&data, |_| {})?;
        let mut ckpt = vec![];
        write_tensors(&mut ckpt, &trainer.params.tensors)?;
        let params = ModelParams::<f32> {
            tensors: read_tensors(&mut ckpt.as_slice())?,
        };
        let s = &samples[0];
        let cond =
            ModelConditioning::from_script(&s.script, s.frames, 4, &model, CaptionMode::Full)?;
        let field = Denoiser {
            config: &model,
            params: &params,
            bundle: &s.bundle,
            cond: &cond,
        };
        let out = sample(
            &field,
            s.x0.dims(),
            &SampleConfig {
                steps: 10,
                seed: 5,
                ..Default::default()
            },
        )?;
        let mut bytes = vec![];
        write_tensors(
            &mut bytes,
            &[("x0".to_string(), out.into_tensor())]
                .into_iter()
                .collect(),
        )?;
        Ok((ckpt, bytes))
    };
    let (a, b) = (run()?, run()?);
    Ok(outcome(
        a.0 == b.0 && a.1 == b.1,
        format!(
            "checkpoint identical={} samples identical={}",
            a.0 == b.0,
            a.1 == b.1
        ),
    ))
}

fn report(
    id: usize,
    name: &str,
    started: Instant,
    result: std::result::Result<Outcome, String>,
) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(o) => {
            println!(
                "criterion {id} {}: {name}: {} [{secs:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        Err(e) => {
            println!("criterion {id} FAIL: {name}: error {e} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let quick: [(&str, fn() -> Result<Outcome>); 6] = [
        ("A-RoPE identities", arope_identities),
        ("AC-loss algebra", ac_loss_algebra),
        ("gradient soundness", gradient_soundness),
        ("morphology oracle", morphology_oracle),
        ("ISR correctness", isr_correctness),
        ("sampler equivalences", sampler_equivalences),
    ];
    let mut all = true;
    for (i, (name, check)) in quick.into_iter().enumerate() {
        let t = Instant::now();
        all &= report(i + 1, name, t, check().map_err(|e| e.to_string()));
    }
    let t = Instant::now();
    match ablations() {
        Ok((a, b)) => {
            all &= report(7, "lambda ablation", t, Ok(a));
            all &= report(8, "action caption ablation", t, Ok(b));
        }
        Err(e) => {
            all &= report(7, "lambda ablation", t, Err(e.to_string()));
            all &= report(8, "action caption ablation", t, Err(e.to_string()));
        }
    }
    let t = Instant::now();
    all &= report(
        9,
        "determinism",
        t,
        determinism().map_err(|e| e.to_string()),
    );
    if !all {
        std::process::exit(1);
    }
}
