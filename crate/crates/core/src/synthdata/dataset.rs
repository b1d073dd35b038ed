use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gen_sample, ClipSpec, Sample};
use crate::backbone::{read_tensors, write_tensors, GuidanceBundle, LatentClip};
use crate::error::{Error, Result};
use crate::script::{ActionLabel, ActionScript, ActionSegment};
use crate::tensor::{SeededRng, TensorMap};

/// JSON sidecar stored next to each sample's tensor file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub label: ActionLabel,
    pub segments: Vec<ActionSegment>,
    pub seed: u64,
    pub dims: [usize; 4],
    pub frames: usize,
    pub caption: String,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Tensor file, relative to the manifest's directory.
    pub file: String,
    pub sidecar: String,
    pub label: ActionLabel,
    pub segments: Vec<ActionSegment>,
    pub seed: u64,
    /// Spec that regenerates the sample.
    pub spec: ClipSpec,
}

pub const MANIFEST: &str = "manifest.jsonl";

/// Per-sample spec: sample `i` gets a seed derived from the template seed.
pub fn sample_spec(template: &ClipSpec, i: usize) -> ClipSpec {
    ClipSpec {
        seed: SeededRng::derive(template.seed, i as u64).next_u64(),
        ..template.clone()
    }
}

/// Writes `n` samples plus `manifest.jsonl` under `dir` and returns the
/// manifest records.
pub fn gen_dataset(n: usize, template: &ClipSpec, dir: &Path) -> Result<Vec<ManifestRecord>> {
    template.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(MANIFEST))?);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let spec = sample_spec(template, i);
        let sample = gen_sample(&spec)?;
        let file = format!("sample_{i:05}.bin");
        let sidecar = format!("sample_{i:05}.json");
        save_sample(&sample, &dir.join(&file), &dir.join(&sidecar))?;
        let rec = ManifestRecord {
            file,
            sidecar,
            label: sample.label,
            segments: sample.script.segments.clone(),
            seed: spec.seed,
            spec,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
        records.push(rec);
    }
    out.flush()?;
    Ok(records)
}

fn save_sample(s: &Sample, tensors: &Path, sidecar: &Path) -> Result<()> {
    let mut map = TensorMap::new();
    map.insert("x0".into(), s.x0.tensor().clone());
    map.insert("pose".into(), s.bundle.pose.clone());
    map.insert("agnostic".into(), s.bundle.agnostic.clone());
    map.insert("garment".into(), s.bundle.garment.clone());
    if let Some(h) = &s.bundle.hand {
        map.insert("hand".into(), h.clone());
    }
    let mut w = BufWriter::new(File::create(tensors)?);
    write_tensors(&mut w, &map)?;
    w.flush()?;
    let meta = Sidecar {
        label: s.label,
        segments: s.script.segments.clone(),
        seed: s.seed,
        dims: s.x0.dims(),
        frames: s.frames,
        caption: s.script.global_caption.clone(),
    };
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a sample from its tensor file and JSON sidecar.
pub fn load_sample(tensors: &Path, sidecar: &Path) -> Result<Sample> {
    let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let mut map = read_tensors::<f32>(&mut BufReader::new(File::open(tensors)?))?;
    let mut take = |name: &str| {
        map.remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("{} lacks tensor {name}", tensors.display())))
    };
    let x0 = LatentClip::new(take("x0")?)?;
    if x0.dims() != meta.dims {
        return Err(Error::Checkpoint(format!(
            "dims {:?} disagree with sidecar {:?}",
            x0.dims(),
            meta.dims
        )));
    }
    let bundle = GuidanceBundle {
        pose: take("pose")?,
        agnostic: take("agnostic")?,
        garment: take("garment")?,
        hand: take("hand").ok(),
    };
    let script = ActionScript::new(meta.caption, meta.segments);
    script.validate(meta.frames)?;
    Ok(Sample {
        x0,
        bundle,
        script,
        label: meta.label,
        frames: meta.frames,
        seed: meta.seed,
    })
}

/// Parses `manifest.jsonl` in `dir`, or the given manifest file.
pub fn load_manifest(path: &Path) -> Result<(PathBuf, Vec<ManifestRecord>)> {
    let file = if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    };
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(File::open(&file)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", file.display(), i + 1)))?;
        records.push(rec);
    }
    Ok((root, records))
}

impl ManifestRecord {
    pub fn load(&self, root: &Path) -> Result<Sample> {
        load_sample(&root.join(&self.file), &root.join(&self.sidecar))
    }
}
