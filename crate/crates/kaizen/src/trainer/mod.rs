//! The training engine: supervised seed training, burn-in on seed
//! pseudo-labels, continuous pseudo-labeling with the EMA teacher, an
//! optional pseudo-label cache, fine-tuning, and run metrics with collapse
//! detection.
//!
//! All per-step randomness (batch sampling, masks, dropout, cache policy) is
//! derived statelessly from `(seed, purpose, step, member)`, so a run can be
//! resumed from a checkpoint bit-exactly and two runs with the same config
//! produce identical metrics.

mod batch;
mod cache;
mod checkpoint;
mod engine;
mod metrics;
mod pseudo;
mod supervised;

pub use batch::{batch_gradient, BatchMember, BatchSettings, BatchTarget};
pub use cache::{CacheEntry, PlCache};
pub use checkpoint::{ModelCheckpoint, ParamData, Phase, RunCheckpoint};
pub use engine::{run_kaizen, KaizenEngine, KaizenOutcome, KaizenSnapshot};
pub use metrics::{blank_ratio, evaluate, EvalReport, MetricsRecord, Stage, UtteranceEval};
pub use pseudo::{generate_pseudo_label, PlSource, PseudoLabel};
pub use supervised::{
    fine_tune, train_supervised, validate_supervised, SupervisedConfig, TrainLogRecord,
};

use serde::{Deserialize, Serialize};

use crate::data::MaskConfig;
use crate::ema::EmaConfig;
use crate::error::{Error, Result};
use crate::numeric::{AdamConfig, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    /// Sequence-level CTC on greedy-decoded pseudo-labels.
    Ctc,
    /// Frame-level KL distillation from teacher posteriors.
    FrameKl,
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Paradigm::Ctc => "ctc",
            Paradigm::FrameKl => "frame_kl",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub size: usize,
    /// Probability of regenerating fresh labels once the cache is full.
    pub refresh_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    Random,
    WarmStartFromSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub adam: AdamConfig,
    /// Schedule covering burn-in plus continuous pseudo-labeling.
    pub main_lr: LrSchedule,
    pub fine_tune_lr: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub paradigm: Paradigm,
    pub ema: EmaConfig,
    pub burn_in_steps: u64,
    pub total_steps: u64,
    pub fine_tune_steps: u64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    #[serde(default)]
    pub mask: MaskConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub cache: Option<CacheConfig>,
    #[serde(default = "default_student_init")]
    pub student_init: StudentInit,
    #[serde(default)]
    pub supervised_mix_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_collapse_threshold")]
    pub collapse_blank_threshold: f64,
    /// Drop empty pseudo-labels instead of training on all-blank targets.
    /// Off by default: filtering masks collapse.
    #[serde(default)]
    pub filter_empty_pls: bool,
    #[serde(default = "default_kl_mass")]
    pub kl_mass_threshold: f64,
    /// Accumulate the EMA master in emulated binary16 (the degradation
    /// demonstration); snapshots follow `ema.precision_mode` as usual.
    #[serde(default)]
    pub lowprecision_ema: bool,
    /// Mid-run checkpoint cadence, in optimizer steps.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

fn default_student_init() -> StudentInit {
    StudentInit::Random
}
pub(crate) fn default_eval_every() -> u64 {
    200
}
fn default_collapse_threshold() -> f64 {
    0.95
}
pub(crate) fn default_kl_mass() -> f64 {
    0.99
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ema.validate()?;
        if self.burn_in_steps > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "burn_in_steps {} > total_steps {}",
                self.burn_in_steps, self.total_steps
            )));
        }
        if self.ema.start_step > self.burn_in_steps {
            return Err(Error::InvalidConfig(format!(
                "ema.start_step {} must not exceed burn_in_steps {} (the continuous \
                 stage needs an initialized teacher)",
                self.ema.start_step, self.burn_in_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.supervised_mix_fraction) {
            return Err(Error::InvalidConfig(format!(
                "supervised_mix_fraction must be in [0, 1], got {}",
                self.supervised_mix_fraction
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.collapse_blank_threshold) {
            return Err(Error::InvalidConfig(format!(
                "collapse_blank_threshold must be in [0, 1], got {}",
                self.collapse_blank_threshold
            )));
        }
        if !(self.kl_mass_threshold > 0.0 && self.kl_mass_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "kl_mass_threshold must be in (0, 1], got {}",
                self.kl_mass_threshold
            )));
        }
        if let Some(cache) = &self.cache {
            if cache.size == 0 {
                return Err(Error::InvalidConfig("cache.size must be >= 1".into()));
            }
            if !(cache.refresh_prob > 0.0 && cache.refresh_prob <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "cache.refresh_prob must be in (0, 1], got {}",
                    cache.refresh_prob
                )));
            }
            if self.paradigm != Paradigm::Ctc {
                return Err(Error::InvalidConfig(
                    "the pseudo-label cache stores token sequences and requires the \
                     ctc paradigm"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// Carried by [`Error::Collapse`]: the metrics history up to the abort, so
/// sweeps can score collapsed runs instead of crashing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseReport {
    pub step: u64,
    pub blank_ratio: f64,
    pub threshold: f64,
    pub consecutive_evals: u32,
    pub metrics: Vec<MetricsRecord>,
}

// Stateless per-step seed derivation (splitmix64 chain). Stability of these
// constants is part of run reproducibility.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_BATCH: u64 = 2;
pub(crate) const TAG_MASK: u64 = 3;
pub(crate) const TAG_DROPOUT: u64 = 4;
pub(crate) const TAG_CACHE: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn mix_seed(base: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(base ^ tag.wrapping_mul(0xA076_1D64_78BD_642F));
    s = splitmix64(s ^ a);
    splitmix64(s ^ b)
}

/// Derives a named sub-seed from a run seed; used to give the pipeline
/// stages (seed training, semi-supervised run, fine-tuning) independent
/// streams from one declared seed.
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    // FNV-1a over the purpose string keeps the derivation stable.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix_seed(base, h, 0, 0)
}
