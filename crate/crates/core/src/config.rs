//! Run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::CollectConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::persist::read_file;
use crate::planner::TrainConfig;
use crate::scene::Ablation;
use crate::sim::{PenaltyConfig, SimConfig};
use crate::vocabulary::{DEFAULT_BANDS, DEFAULT_DT_WP, DEFAULT_HORIZON};

pub const CONFIG_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "PROBPLAN_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub scenarios: PathBuf,
    pub output_dir: PathBuf,
    /// The artifact paths below are relative to `output_dir` unless absolute.
    #[serde(default = "default_dataset")]
    pub dataset: PathBuf,
    #[serde(default = "default_vocab")]
    pub vocab: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
}

fn default_dataset() -> PathBuf {
    "demos.json".into()
}
fn default_vocab() -> PathBuf {
    "vocab.bin".into()
}
fn default_checkpoint() -> PathBuf {
    "model.ckpt".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    pub n: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt_wp")]
    pub dt_wp: f64,
    #[serde(default = "default_bands")]
    pub bands: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}
fn default_dt_wp() -> f64 {
    DEFAULT_DT_WP
}
fn default_bands() -> usize {
    DEFAULT_BANDS
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            n: 256,
            horizon: DEFAULT_HORIZON,
            dt_wp: DEFAULT_DT_WP,
            bands: DEFAULT_BANDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    #[serde(default)]
    pub penalties: PenaltyConfig,
    /// Episode seeds for closed-loop evaluation.
    #[serde(default = "default_eval_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_eval_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 8,
            penalties: PenaltyConfig::default(),
            seeds: default_eval_seeds(),
            ablation: Ablation::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub collect: CollectConfig,
    #[serde(default)]
    pub vocabulary: VocabConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let c: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    /// Reads `path`, resolving relative directories against the file's
    /// location and applying the output-dir environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_json(text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.paths.scenarios = base.join(&c.paths.scenarios);
        c.paths.output_dir = base.join(&c.paths.output_dir);
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            c.paths.output_dir = PathBuf::from(dir);
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let v = &self.vocabulary;
        if v.n < 2 || v.horizon == 0 || v.bands == 0 || !(v.dt_wp > 0.0) {
            return Err(Error::Config(format!("invalid vocabulary settings {v:?}")));
        }
        if self.model.horizon != v.horizon || self.model.bands != v.bands {
            return Err(Error::Config(format!(
                "model horizon/bands ({}, {}) disagree with the vocabulary ({}, {})",
                self.model.horizon, self.model.bands, v.horizon, v.bands
            )));
        }
        if self.sim.horizon != v.horizon || self.sim.dt_wp != v.dt_wp {
            return Err(Error::Config("sim horizon/dt_wp disagree with the vocabulary".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.sim.validate()?;
        self.eval.penalties.validate()?;
        Ok(())
    }

    fn artifact(&self, p: &Path) -> PathBuf {
        self.paths.output_dir.join(p)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.artifact(&self.paths.dataset)
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.artifact(&self.paths.vocab)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.artifact(&self.paths.checkpoint)
    }
}
