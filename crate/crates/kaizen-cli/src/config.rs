//! Config file schemas. Everything is JSON with unknown fields rejected, and
//! every run directory gets a resolved-config echo so results are
//! reproducible from the directory alone.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kaizen::data::{load_dataset, Corpus, CorpusConfig, MaskConfig};
use kaizen::ema::PrecisionMode;
use kaizen::model::ModelDims;
use kaizen::numeric::LrSchedule;
use kaizen::trainer::TrainRunConfig;
use kaizen::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub name: String,
    pub corpus: CorpusConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedModelSpec {
    /// Load the seed model from a checkpoint instead of training it.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_seed_steps")]
    pub steps: u64,
    #[serde(default = "default_seed_batch")]
    pub batch_size: usize,
    /// Defaults to a warmup/decay schedule sized from `steps`.
    #[serde(default)]
    pub lr: Option<LrSchedule>,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub mask: MaskConfig,
}

fn default_seed_steps() -> u64 {
    1500
}
fn default_seed_batch() -> usize {
    8
}

impl Default for SeedModelSpec {
    fn default() -> Self {
        SeedModelSpec {
            checkpoint: None,
            steps: default_seed_steps(),
            batch_size: default_seed_batch(),
            lr: None,
            dropout_rate: 0.0,
            mask: MaskConfig::none(),
        }
    }
}

impl SeedModelSpec {
    pub fn schedule(&self) -> LrSchedule {
        self.lr
            .unwrap_or_else(|| LrSchedule::warmup_decay((self.steps / 10).max(1), 5e-3, self.steps))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJobConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Dataset prefix: expects `<data>.{sup,unsup,dev,test}.jsonl`.
    pub data: PathBuf,
    pub dims: ModelDims,
    #[serde(default)]
    pub seed_model: SeedModelSpec,
    pub run: TrainRunConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl TrainJobConfig {
    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "run".to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: TrainJobConfig,
    pub alphas: Vec<f64>,
    pub deltas: Vec<u64>,
    #[serde(default)]
    pub precision_modes: Vec<PrecisionMode>,
    /// Cache on/off axis; `true` cells use `base.run.cache` (or the default
    /// size-100/p-0.1 policy when the base has none).
    #[serde(default)]
    pub cache: Vec<bool>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

pub fn read_json_config<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn write_json_pretty<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Stable hash of the resolved config; recorded in checkpoints so `--resume`
/// refuses to continue a run under a different configuration.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let canonical = serde_json::to_string(value)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(format!("{digest:x}"))
}

/// Loads the four dataset splits for a prefix.
pub fn load_corpus(prefix: &Path) -> Result<Corpus<Real>> {
    let file = |suffix: &str| {
        let mut name = prefix
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.push('.');
        name.push_str(suffix);
        name.push_str(".jsonl");
        prefix.with_file_name(name)
    };
    let load = |suffix: &str| -> Result<Vec<kaizen::data::Utterance<Real>>> {
        let path = file(suffix);
        if !path.exists() {
            bail!("dataset file {} not found", path.display());
        }
        Ok(load_dataset(&path)?)
    };
    Ok(Corpus {
        supervised: load("sup")?,
        unsupervised: load("unsup")?,
        dev: load("dev")?,
        test: load("test")?,
    })
}

/// Split file path for a prefix and suffix tag.
pub fn split_path(prefix: &Path, tag: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push('.');
    name.push_str(tag);
    name.push_str(".jsonl");
    prefix.with_file_name(name)
}
