use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::conditioning::{ACTION_VOCAB, CAPTION_VOCAB};
use crate::error::{Error, Result};
use crate::tensor::{Real, SeededRng, Tensor, TensorMap};

use super::config::BackboneConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ITOCKPT1";

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// `N(0, 1/fan_in)`.
    Fan,
    Normal(f64),
    Zeros,
    /// Zero in the standard initialization, random otherwise.
    ZeroOut,
}

#[derive(Clone, Debug)]
struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn weight(specs: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize, zero_out: bool) {
    let init = if zero_out { Init::ZeroOut } else { Init::Fan };
    specs.push(Spec {
        name: format!("{name}.w"),
        shape: vec![fan_in, fan_out],
        init,
    });
}

fn linear(specs: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize, zero_out: bool) {
    weight(specs, name, fan_in, fan_out, zero_out);
    specs.push(Spec {
        name: format!("{name}.b"),
        shape: vec![fan_out],
        init: Init::Zeros,
    });
}

fn attention(specs: &mut Vec<Spec>, name: &str, width: usize, kv_in: usize) {
    linear(specs, &format!("{name}.q"), width, width, false);
    // A key bias shifts every logit of a query equally, so it is omitted.
    weight(specs, &format!("{name}.k"), kv_in, width, false);
    linear(specs, &format!("{name}.v"), kv_in, width, false);
    linear(specs, &format!("{name}.o"), width, width, true);
}

fn mlp(specs: &mut Vec<Spec>, name: &str, width: usize, ratio: usize) {
    linear(specs, &format!("{name}.fc1"), width, width * ratio, false);
    linear(specs, &format!("{name}.fc2"), width * ratio, width, true);
}

fn specs(cfg: &BackboneConfig) -> Vec<Spec> {
    let w = cfg.width;
    let pv = cfg.patch_volume();
    let mut s = Vec::new();
    linear(&mut s, "embed.video", cfg.latent_channels() * pv, w, false);
    linear(
        &mut s,
        "embed.context",
        cfg.context_channels() * pv,
        w,
        false,
    );
    linear(&mut s, "embed.hand", cfg.hand_channels * pv, w, false);
    s.push(Spec {
        name: "embed.pos".into(),
        shape: vec![cfg.tokens(), w],
        init: Init::Normal(0.02),
    });
    linear(&mut s, "time.fc1", cfg.time_dim, w, false);
    linear(&mut s, "time.fc2", w, w, false);
    s.push(Spec {
        name: "text.caption".into(),
        shape: vec![CAPTION_VOCAB, cfg.d_txt],
        init: Init::Normal(1.0),
    });
    s.push(Spec {
        name: "text.null".into(),
        shape: vec![1, cfg.d_txt],
        init: Init::Normal(1.0),
    });
    s.push(Spec {
        name: "text.action".into(),
        shape: vec![ACTION_VOCAB * cfg.tokens_per_action, cfg.d_txt],
        init: Init::Normal(1.0),
    });
    for i in 0..cfg.blocks {
        let b = format!("block{i}");
        attention(&mut s, &format!("{b}.self"), w, w);
        attention(&mut s, &format!("{b}.caption"), w, cfg.d_txt);
        attention(&mut s, &format!("{b}.action"), w, cfg.d_txt);
        mlp(&mut s, &format!("{b}.mlp"), w, cfg.mlp_ratio);
    }
    for j in 0..cfg.context_blocks() {
        let b = format!("context{j}");
        attention(&mut s, &format!("{b}.self"), w, w);
        mlp(&mut s, &format!("{b}.mlp"), w, cfg.mlp_ratio);
        linear(&mut s, &format!("{b}.proj"), w, w, true);
    }
    attention(&mut s, "guider.self", w, w);
    attention(&mut s, "guider.cross", w, cfg.d_txt);
    linear(&mut s, "guider.proj", w, w, true);
    linear(&mut s, "head", w, cfg.latent_channels() * pv, true);
    s
}

/// Named weights of the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F = f32> {
    pub tensors: TensorMap<F>,
}

impl<F: Real> ModelParams<F> {
    /// Standard initialization: every residual output projection, injection
    /// projection and the output head start at zero.
    pub fn init(cfg: &BackboneConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, false)
    }

    /// Every matrix random, for sensitivity probes and gradient checks.
    pub fn init_dense(cfg: &BackboneConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, true)
    }

    fn build(cfg: &BackboneConfig, seed: u64, dense: bool) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut tensors = BTreeMap::new();
        for spec in specs(cfg) {
            let std = match spec.init {
                Init::Fan => (1.0 / spec.shape[0] as f64).sqrt(),
                Init::Normal(s) => s,
                Init::ZeroOut if dense => (1.0 / spec.shape[0] as f64).sqrt(),
                Init::Zeros if dense => 0.1,
                Init::ZeroOut | Init::Zeros => 0.0,
            };
            let t = if std == 0.0 {
                Tensor::zeros(spec.shape)
            } else {
                rng.normal_tensor(spec.shape, std)
            };
            if tensors.insert(spec.name.clone(), t).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter {}",
                    spec.name
                )));
            }
        }
        Ok(Self { tensors })
    }

    /// Checks that every weight the forward pass reads is present with the
    /// expected shape.
    pub fn check(&self, cfg: &BackboneConfig) -> Result<()> {
        for spec in specs(cfg) {
            match self.tensors.get(&spec.name) {
                None => {
                    return Err(Error::Checkpoint(format!(
                        "missing parameter {}",
                        spec.name
                    )))
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_tensors(&mut w, &self.tensors)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Ok(Self {
            tensors: read_tensors(&mut r)?,
        })
    }
}

/// Writes the checkpoint container. Values are stored as 32-bit floats.
pub fn write_tensors<F: Real>(w: &mut impl Write, tensors: &TensorMap<F>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let count =
        u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Checkpoint(format!("rank too large: {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Checkpoint(format!("extent too large: {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.len());
        for &x in t.data() {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_tensors<F: Real>(r: &mut impl Read) -> Result<TensorMap<F>> {
    if &read_exact::<8>(r)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = u32::from_le_bytes(read_exact(r)?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_exact::<1>(r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; 4 * n];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor {name}: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_complete_and_deterministic() {
        let cfg = BackboneConfig::default();
        let a = ModelParams::<f32>::init(&cfg, 3).unwrap();
        a.check(&cfg).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
        assert!(a.get("head.w").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(a
            .get("block0.self.o.w")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        let d = ModelParams::<f32>::init_dense(&cfg, 3).unwrap();
        assert!(d.get("head.w").unwrap().data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn missing_weight_detected() {
        let cfg = BackboneConfig::tiny();
        let mut p = ModelParams::<f64>::init(&cfg, 0).unwrap();
        p.tensors.remove("guider.proj.w");
        assert!(matches!(p.check(&cfg), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let cfg = BackboneConfig::tiny();
        let p = ModelParams::<f32>::init_dense(&cfg, 9).unwrap();
        let mut a = Vec::new();
        write_tensors(&mut a, &p.tensors).unwrap();
        assert_eq!(&a[..8], CHECKPOINT_MAGIC);
        let back: TensorMap<f32> = read_tensors(&mut a.as_slice()).unwrap();
        assert_eq!(back, p.tensors);
        let mut b = Vec::new();
        write_tensors(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layout_of_one_tensor() {
        let mut m = BTreeMap::new();
        m.insert(
            "ab".to_string(),
            Tensor::<f32>::new([2], vec![1.0, -2.0]).unwrap(),
        );
        let mut buf = Vec::new();
        write_tensors(&mut buf, &m).unwrap();
        let mut want = b"ITOCKPT1".to_vec();
        want.extend([1, 0, 0, 0, 2, 0, b'a', b'b', 1, 2, 0, 0, 0]);
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let cfg = BackboneConfig::tiny();
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &p.tensors).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensors::<f32>(&mut bad.as_slice()).is_err());
        assert!(read_tensors::<f32>(&mut &buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_tensors::<f32>(&mut long.as_slice()).is_err());
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = ModelParams::<f32>::init_dense(&BackboneConfig::tiny(), 2).unwrap();
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), p);
    }
}
