//! Run configuration: TOML file, flag overrides and run metadata.

use std::path::Path;

use itryon::backbone::BackboneConfig;
use itryon::diffusion::{SampleConfig, TrainConfig};
use itryon::synthdata::ClipSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use self::ctx::Context;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Clips written by `gen-data`.
    pub n: usize,
    pub clip: ClipSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 200,
            clip: ClipSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateConfig {
    pub open_size: usize,
    pub close_size: usize,
    /// `oracle`, `scripted:PATH` or `http:URL`.
    pub provider: String,
    pub concurrency: usize,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            open_size: 3,
            close_size: 3,
            provider: "oracle".into(),
            concurrency: 4,
            attempts: 3,
            backoff_ms: 200,
            timeout_s: 30,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: BackboneConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub data: DataConfig,
    pub annotate: AnnotateConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).context(path)?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, String> {
    Ok(hex(&Sha256::digest(std::fs::read(path).context(path)?)))
}

/// Record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunMetadata<'a> {
    pub command: &'a str,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    /// Hashes of input files, keyed by role.
    pub inputs: Vec<(String, String)>,
    pub config: &'a RunConfig,
}

impl<'a> RunMetadata<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig, seed: u64) -> Self {
        Self {
            command,
            args: std::env::args().skip(1).collect(),
            config_hash: config.hash(),
            seed,
            version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            config,
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Result<Self, String> {
        self.inputs.push((role.to_string(), file_hash(path)?));
        Ok(self)
    }

    /// Writes `run.json` and the resolved `config.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), String> {
        std::fs::create_dir_all(dir).context(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("run.json"), json).context(dir)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml()).context(dir)
    }
}

/// Attaches a path to error messages.
pub mod ctx {
    use std::path::Path;

    pub trait Context<T> {
        fn context(self, path: &Path) -> Result<T, String>;
    }

    impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
        fn context(self, path: &Path) -> Result<T, String> {
            self.map_err(|e| format!("{}: {e}", path.display()))
        }
    }
}
