use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use itryon::annotate::{
    annotate_frames, caption_records, extract_segments, smooth_labels, HttpProvider,
    HttpProviderConfig, LabelSequence, ScriptedProvider, VerdictProvider,
};
use itryon::backbone::{
    read_tensors, write_tensors, BackboneConfig, CaptionMode, LatentClip, ModelConditioning,
    ModelParams,
};
use itryon::diffusion::{
    objective_gradient_check, sample as run_sampler, segments_to_action_mask, Denoiser, Trainer,
};
use itryon::metrics::{clip_ssim, isr, masked_mse, EvalReport, IsrReport, MseSplit};
use itryon::synthdata::{
    detect_clip, expand_verdicts, frame_descriptors, gen_dataset, load_manifest, ManifestRecord,
    OracleProvider,
};
use itryon::tensor::TensorMap;
use serde::Serialize;

use crate::config::ctx::Context;
use crate::config::{RunConfig, RunMetadata};
use crate::Common;

type CmdResult = Result<ExitCode, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn load_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig, String> {
    match (&common.config, fallback) {
        (Some(p), _) => RunConfig::load(p),
        (None, Some(p)) if p.exists() => RunConfig::load(p),
        _ => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn manifest_file(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(itryon::synthdata::MANIFEST)
    } else {
        data.to_path_buf()
    }
}

fn check_dims(model: &BackboneConfig, clip: &LatentClip<f32>, what: &str) -> Result<(), String> {
    if clip.dims() != model.latent {
        return Err(format!(
            "{what}: clip dims {:?} differ from model latent {:?}",
            clip.dims(),
            model.latent
        ));
    }
    Ok(())
}

pub fn gen_data(common: &Common, n: Option<usize>, amplitude: Option<f64>) -> CmdResult {
    let mut cfg = load_config(common, None)?;
    if let Some(n) = n {
        cfg.data.n = n;
    }
    if let Some(a) = amplitude {
        cfg.data.clip.amplitude = a;
    }
    if let Some(s) = common.seed {
        cfg.data.clip.seed = s;
    }
    let out = out_dir(common);
    let recs = gen_dataset(cfg.data.n, &cfg.data.clip, &out).map_err(err)?;
    RunMetadata::new("gen-data", &cfg, cfg.data.clip.seed).write(&out)?;
    println!("wrote {} samples to {}", recs.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(
    common: &Common,
    data: &Path,
    ckpt: Option<&Path>,
    steps: Option<usize>,
    lambda: Option<f64>,
    k: Option<usize>,
    stage: Option<u8>,
) -> CmdResult {
    let mut cfg = load_config(common, None)?;
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    if let Some(l) = lambda {
        cfg.train.lambda = l;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(k) = k {
        cfg.model.arope_scale = k;
    }
    if let Some(stage) = stage {
        cfg.train.action_captions = stage == 2;
    }
    let (root, records) = load_manifest(data).map_err(err)?;
    let mut samples = Vec::with_capacity(records.len());
    for r in &records {
        let s = r.load(&root).map_err(err)?;
        check_dims(&cfg.model, &s.x0, &r.file)?;
        samples.push(s.to_train::<f32>());
    }
    let params = match ckpt {
        Some(p) => ModelParams::<f32>::load(p).map_err(err)?,
        None => ModelParams::init(&cfg.model, cfg.train.seed).map_err(err)?,
    };
    let out = out_dir(common);
    std::fs::create_dir_all(&out).context(&out)?;
    let mut trainer =
        Trainer::with_params(cfg.model.clone(), cfg.train.clone(), params).map_err(err)?;
    let log_path = out.join("train.log");
    let mut log = BufWriter::new(File::create(&log_path).context(&log_path)?);
    let mut io_err = None;
    let mut last = None;
    let mut skipped = 0;
    trainer
        .fit(&samples, |l| {
            if let Err(e) = writeln!(log, "{}", l.line()) {
                io_err.get_or_insert(e);
            }
            skipped += usize::from(l.skipped);
            last = Some(*l);
        })
        .map_err(err)?;
    if let Some(e) = io_err {
        return Err(format!("{}: {e}", log_path.display()));
    }
    log.flush().context(&log_path)?;
    let ckpt_out = out.join("model.ckpt");
    trainer.params.save(&ckpt_out).map_err(err)?;
    let mut meta =
        RunMetadata::new("train", &cfg, cfg.train.seed).input("manifest", &manifest_file(data))?;
    if let Some(p) = ckpt {
        meta = meta.input("init_checkpoint", p)?;
    }
    meta.write(&out)?;
    if let Some(l) = last {
        println!(
            "step {} loss {:.6} (skipped {skipped}) -> {}",
            l.step + 1,
            l.loss,
            ckpt_out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub struct SampleFlags {
    pub steps: Option<usize>,
    pub cfg_scale: Option<f64>,
    pub cfg_interval: Option<[f64; 2]>,
    pub k: Option<usize>,
    pub stage: Option<u8>,
    pub limit: Option<usize>,
}

fn write_clip(path: &Path, clip: &LatentClip<f32>) -> Result<(), String> {
    let mut map = TensorMap::new();
    map.insert("x0".to_string(), clip.tensor().clone());
    let mut w = BufWriter::new(File::create(path).context(path)?);
    write_tensors(&mut w, &map).map_err(err)?;
    w.flush().context(path)
}

fn read_clip(path: &Path) -> Result<LatentClip<f32>, String> {
    let mut r = std::io::BufReader::new(File::open(path).context(path)?);
    let mut map = read_tensors::<f32>(&mut r).map_err(|e| format!("{}: {e}", path.display()))?;
    let t = map
        .remove("x0")
        .ok_or_else(|| format!("{}: no x0 tensor", path.display()))?;
    LatentClip::new(t).map_err(err)
}

pub fn sample(common: &Common, ckpt: &Path, data: &Path, flags: SampleFlags) -> CmdResult {
    let beside = ckpt.parent().map(|d| d.join("config.toml"));
    let mut cfg = load_config(common, beside.as_deref())?;
    let s = &mut cfg.sample;
    s.steps = flags.steps.unwrap_or(s.steps);
    s.cfg_scale = flags.cfg_scale.unwrap_or(s.cfg_scale);
    s.cfg_interval = flags.cfg_interval.unwrap_or(s.cfg_interval);
    s.seed = common.seed.unwrap_or(s.seed);
    if let Some(k) = flags.k {
        cfg.model.arope_scale = k;
    }
    cfg.sample.validate().map_err(err)?;
    let mode = if flags.stage == Some(1) {
        CaptionMode::NullActions
    } else {
        CaptionMode::Full
    };
    let params = ModelParams::<f32>::load(ckpt).map_err(err)?;
    params.check(&cfg.model).map_err(err)?;
    let (root, records) = load_manifest(data).map_err(err)?;
    let out = out_dir(common);
    std::fs::create_dir_all(&out).context(&out)?;
    let n = flags.limit.unwrap_or(records.len()).min(records.len());
    for (i, r) in records.iter().take(n).enumerate() {
        let s = r.load(&root).map_err(err)?;
        check_dims(&cfg.model, &s.x0, &r.file)?;
        let c_t = s.frames / s.x0.dims()[0];
        let cond = ModelConditioning::from_script(&s.script, s.frames, c_t, &cfg.model, mode)
            .map_err(err)?;
        let field = Denoiser {
            config: &cfg.model,
            params: &params,
            bundle: &s.bundle,
            cond: &cond,
        };
        let sc = itryon::diffusion::SampleConfig {
            seed: cfg.sample.seed.wrapping_add(i as u64),
            ..cfg.sample.clone()
        };
        let clip = run_sampler(&field, cfg.model.latent, &sc).map_err(err)?;
        write_clip(&out.join(&r.file), &clip)?;
    }
    RunMetadata::new("sample", &cfg, cfg.sample.seed)
        .input("checkpoint", ckpt)?
        .input("manifest", &manifest_file(data))?
        .write(&out)?;
    println!("sampled {n} clips into {}", out.display());
    Ok(ExitCode::SUCCESS)
}

enum Provider {
    Oracle,
    Scripted(PathBuf),
    Http(HttpProvider),
}

impl Provider {
    fn parse(spec: &str, cfg: &RunConfig) -> Result<Self, String> {
        if spec == "oracle" {
            return Ok(Self::Oracle);
        }
        if let Some(p) = spec.strip_prefix("scripted:") {
            return Ok(Self::Scripted(PathBuf::from(p)));
        }
        if let Some(url) = spec.strip_prefix("http:") {
            let url = if url.starts_with("//") {
                format!("http:{url}")
            } else {
                url.to_string()
            };
            let a = &cfg.annotate;
            let config = HttpProviderConfig {
                attempts: a.attempts,
                backoff: Duration::from_millis(a.backoff_ms),
                timeout: Duration::from_secs(a.timeout_s),
                ..HttpProviderConfig::new(url)
            };
            return HttpProvider::new(config).map(Self::Http).map_err(err);
        }
        Err(format!(
            "unknown provider {spec:?}; expected oracle, scripted:PATH or http:URL"
        ))
    }

    /// Latent-frame verdicts for one clip.
    fn judge(
        &self,
        rec: &ManifestRecord,
        clip: &LatentClip<f32>,
        concurrency: usize,
    ) -> Result<LabelSequence, String> {
        let frames = frame_descriptors(clip);
        let verdicts = match self {
            Self::Oracle => annotate_frames(&frames, rec.label, &OracleProvider, concurrency),
            Self::Scripted(p) => {
                let file = if p.is_dir() {
                    p.join(Path::new(&rec.file).with_extension("txt"))
                } else {
                    p.clone()
                };
                let provider: Box<dyn VerdictProvider> = Box::new(
                    ScriptedProvider::from_file(&file)
                        .map_err(|e| format!("{}: {e}", file.display()))?,
                );
                annotate_frames(&frames, rec.label, provider.as_ref(), concurrency)
            }
            Self::Http(h) => annotate_frames(&frames, rec.label, h, concurrency),
        };
        verdicts.map_err(|e| format!("{}: {e}", rec.file))
    }
}

#[derive(Serialize)]
struct AnnotationRecord {
    file: String,
    label: itryon::ActionLabel,
    /// Smoothed per-video-frame labels as a 0/1 string.
    labels: String,
    segments: Vec<itryon::ActionSegment>,
    captions: Vec<itryon::annotate::CaptionRecord>,
}

pub fn annotate(
    common: &Common,
    data: &Path,
    pred: Option<&Path>,
    provider: Option<String>,
    open_size: Option<usize>,
    close_size: Option<usize>,
) -> CmdResult {
    let mut cfg = load_config(common, None)?;
    let a = &mut cfg.annotate;
    a.provider = provider.unwrap_or(a.provider.clone());
    a.open_size = open_size.unwrap_or(a.open_size);
    a.close_size = close_size.unwrap_or(a.close_size);
    let provider = Provider::parse(&cfg.annotate.provider, &cfg)?;
    let (root, records) = load_manifest(data).map_err(err)?;
    let out = out_dir(common);
    std::fs::create_dir_all(&out).context(&out)?;
    let path = out.join("annotations.jsonl");
    let mut w = BufWriter::new(File::create(&path).context(&path)?);
    for r in &records {
        let clip = match pred {
            Some(d) => read_clip(&d.join(&r.file))?,
            None => r.load(&root).map_err(err)?.x0,
        };
        let latent = provider.judge(r, &clip, cfg.annotate.concurrency)?;
        let c_t = r.spec.frames / clip.dims()[0];
        let smooth = smooth_labels(
            &expand_verdicts(&latent, c_t),
            cfg.annotate.open_size,
            cfg.annotate.close_size,
        )
        .map_err(err)?;
        let segments = extract_segments(&smooth, r.label);
        let rec = AnnotationRecord {
            file: r.file.clone(),
            label: r.label,
            labels: smooth
                .values()
                .iter()
                .map(|&b| if b { '1' } else { '0' })
                .collect(),
            captions: caption_records(&segments, r.label),
            segments,
        };
        serde_json::to_writer(&mut w, &rec).map_err(err)?;
        w.write_all(b"\n").context(&path)?;
    }
    w.flush().context(&path)?;
    RunMetadata::new("annotate", &cfg, 0)
        .input("manifest", &manifest_file(data))?
        .write(&out)?;
    println!("annotated {} clips into {}", records.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(common: &Common, pred: &Path, manifest: &Path, provider: Option<String>) -> CmdResult {
    let mut cfg = load_config(common, None)?;
    if let Some(p) = provider {
        cfg.annotate.provider = p;
    }
    let provider = Provider::parse(&cfg.annotate.provider, &cfg)?;
    let (root, records) = load_manifest(manifest).map_err(err)?;
    if records.is_empty() {
        return Err("manifest lists no samples".into());
    }
    let mut reports = Vec::new();
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    let mut ssim_sum = 0.0;
    for r in &records {
        let reference = r.load(&root).map_err(err)?;
        let clip = read_clip(&pred.join(&r.file))?;
        let [t, ..] = clip.dims();
        let c_t = reference.frames / t;
        let mask =
            segments_to_action_mask(&reference.script, reference.frames, c_t).map_err(err)?;
        let m = masked_mse(&clip, &reference.x0, &mask).map_err(err)?;
        let per = clip.frame_len();
        let (ki, ko) = (mask.count() * per, (t - mask.count()) * per);
        s_in += m.interactive.unwrap_or(0.0) * ki as f64;
        s_out += m.non_interactive.unwrap_or(0.0) * ko as f64;
        n_in += ki;
        n_out += ko;
        let data = reference.x0.tensor().data();
        let range = data.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b))
            - data.iter().fold(f32::INFINITY, |a, &b| a.min(b));
        ssim_sum += clip_ssim(&clip, &reference.x0, f64::from(range).max(1e-6)).map_err(err)?;
        let verdicts = match provider {
            Provider::Oracle => detect_clip(&clip, r.label).map_err(err)?,
            _ => provider.judge(r, &clip, cfg.annotate.concurrency)?,
        };
        reports
            .push(isr(&expand_verdicts(&verdicts, c_t), &reference.script.segments).map_err(err)?);
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    let mse = MseSplit {
        interactive: mean(s_in, n_in),
        non_interactive: mean(s_out, n_out),
        overall: (s_in + s_out) / (n_in + n_out) as f64,
    };
    let report = EvalReport::new(
        IsrReport::combine(&reports).map_err(err)?,
        ssim_sum / records.len() as f64,
        mse,
    );
    let json = report.to_json().map_err(err)?;
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).context(out)?;
        std::fs::write(out.join("report.json"), &json).context(out)?;
        RunMetadata::new("eval", &cfg, 0)
            .input("manifest", &manifest_file(manifest))?
            .write(out)?;
    }
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

pub fn grad_check(
    common: &Common,
    probes: usize,
    lambda: Option<f64>,
    k: Option<usize>,
) -> CmdResult {
    let mut cfg = load_config(common, None)?;
    let mut model = BackboneConfig::tiny();
    model.arope_scale = k.unwrap_or(model.arope_scale);
    let lambda = lambda.unwrap_or(cfg.train.lambda);
    let seed = common.seed.unwrap_or(cfg.train.seed);
    cfg.model = model.clone();
    let r = objective_gradient_check(&model, seed, probes, 1e-4, lambda).map_err(err)?;
    println!(
        "max relative error {:.3e} ({}; {} tensors, {} probes)",
        r.max_rel_error, r.worst_tensor, r.tensors, r.probes
    );
    if let Some(out) = &common.out {
        RunMetadata::new("grad-check", &cfg, seed).write(out)?;
    }
    Ok(if r.max_rel_error < 1e-4 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
