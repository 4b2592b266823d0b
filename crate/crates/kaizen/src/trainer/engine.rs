//! The two-stage semi-supervised engine.
//!
//! Stage 1 (burn-in): the student trains on unsupervised batches labeled by
//! the frozen seed model. EMA accumulation begins at `ema.start_step` with
//! the master copied from the student. Stage 2 (continuous PL): labels come
//! from the EMA teacher's snapshot (or the cache policy when enabled); the
//! student sees masked, dropout-regularized inputs while the teacher always
//! consumes the raw features. After every optimizer step the EMA master is
//! updated on its `delta` grid.
//!
//! The run aborts with a structured collapse error when the teacher's blank
//! ratio on dev exceeds the threshold for three consecutive evaluations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::ema::{
    effective_half_life, ema_init, ema_update, ema_update_lowprecision, teacher_snapshot,
    EmaState,
};
use crate::error::{Error, Result};
use crate::losses::log_softmax;
use crate::model::{forward, init_params, ForwardMode, ModelDims};
use crate::numeric::{adam_step, AdamState, ParameterVector};
use crate::trainer::batch::{batch_gradient, BatchMember, BatchSettings, BatchTarget};
use crate::trainer::cache::{CacheEntry, PlCache};
use crate::trainer::checkpoint::ParamData;
use crate::trainer::metrics::{blank_ratio, evaluate, MetricsRecord, Stage};
use crate::trainer::pseudo::{generate_pseudo_label, PlSource};
use crate::trainer::supervised::validate_supervised;
use crate::trainer::{
    mix_seed, CollapseReport, Paradigm, StudentInit, TrainRunConfig, TAG_BATCH, TAG_CACHE,
    TAG_INIT,
};
use crate::Scalar;

const COLLAPSE_EVALS: u32 = 3;

/// Final state and metrics of a completed run.
#[derive(Debug, Clone)]
pub struct KaizenOutcome<T> {
    pub student: ParameterVector<T>,
    /// Teacher snapshot at the end of the run (mode-dependent precision).
    pub teacher: ParameterVector<T>,
    pub metrics: Vec<MetricsRecord>,
}

/// Resumable mid-run state; parameters stored widened to f64.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KaizenSnapshot {
    pub completed_steps: u64,
    pub student: ParamData,
    pub adam_first: ParamData,
    pub adam_second: ParamData,
    pub adam_steps: u64,
    pub ema_master: Option<ParamData>,
    pub ema_updates: u64,
    pub cache_entries: Option<Vec<CacheEntry>>,
    pub metrics: Vec<MetricsRecord>,
    pub collapse_streak: u32,
    pub last_loss: f64,
}

pub struct KaizenEngine<'a, T: Scalar> {
    corpus: &'a Corpus<T>,
    config: &'a TrainRunConfig,
    seed_params: ParameterVector<T>,
    student: ParameterVector<T>,
    adam: AdamState<T>,
    ema: Option<EmaState<T>>,
    cache: Option<PlCache>,
    completed_steps: u64,
    metrics: Vec<MetricsRecord>,
    collapse_streak: u32,
    last_loss: f64,
}

impl<'a, T: Scalar> KaizenEngine<'a, T> {
    pub fn new(
        corpus: &'a Corpus<T>,
        dims: ModelDims,
        seed_params: &ParameterVector<T>,
        config: &'a TrainRunConfig,
    ) -> Result<Self> {
        config.validate()?;
        dims.validate()?;
        seed_params.check_finite()?;
        if corpus.unsupervised.is_empty() {
            return Err(Error::InvalidConfig("unsupervised pool is empty".into()));
        }
        if corpus.dev.is_empty() {
            return Err(Error::InvalidConfig(
                "dev set is empty (metrics need one)".into(),
            ));
        }
        if config.supervised_mix_fraction > 0.0 {
            validate_supervised(&corpus.supervised, config.paradigm)?;
        }
        let student = match config.student_init {
            StudentInit::Random => init_params(dims, mix_seed(config.seed, TAG_INIT, 0, 0)),
            StudentInit::WarmStartFromSeed => seed_params.clone(),
        };
        let adam = AdamState::new(student.layout().clone(), config.optimizer.adam);
        let mut engine = KaizenEngine {
            corpus,
            config,
            seed_params: seed_params.clone(),
            student,
            adam,
            ema: None,
            cache: config.cache.map(PlCache::new),
            completed_steps: 0,
            metrics: Vec::new(),
            collapse_streak: 0,
            last_loss: 0.0,
        };
        if config.ema.start_step == 0 {
            engine.ema = Some(ema_init(&engine.student, config.ema)?);
        }
        Ok(engine)
    }

    /// Restores a mid-run engine from a snapshot; per-step randomness is
    /// stateless, so the continuation is bit-exact.
    pub fn restore(
        corpus: &'a Corpus<T>,
        dims: ModelDims,
        seed_params: &ParameterVector<T>,
        config: &'a TrainRunConfig,
        snapshot: &KaizenSnapshot,
    ) -> Result<Self> {
        let mut engine = KaizenEngine::new(corpus, dims, seed_params, config)?;
        let layout = engine.student.layout().clone();
        engine.student = snapshot.student.to_vector(&layout)?;
        engine.adam = AdamState::from_parts(
            snapshot.adam_first.to_vector(&layout)?,
            snapshot.adam_second.to_vector(&layout)?,
            snapshot.adam_steps,
            config.optimizer.adam,
        )?;
        engine.ema = match &snapshot.ema_master {
            None => None,
            Some(master) => Some(EmaState::from_parts(
                master.to_vector(&layout)?,
                snapshot.ema_updates,
                config.ema,
            )?),
        };
        engine.cache = match (&config.cache, &snapshot.cache_entries) {
            (Some(cfg), Some(entries)) => Some(PlCache::from_entries(*cfg, entries.clone())),
            (Some(cfg), None) => Some(PlCache::new(*cfg)),
            (None, _) => None,
        };
        engine.completed_steps = snapshot.completed_steps;
        engine.metrics = snapshot.metrics.clone();
        engine.collapse_streak = snapshot.collapse_streak;
        engine.last_loss = snapshot.last_loss;
        Ok(engine)
    }

    pub fn snapshot(&self) -> KaizenSnapshot {
        KaizenSnapshot {
            completed_steps: self.completed_steps,
            student: ParamData::from_vector(&self.student),
            adam_first: ParamData::from_vector(self.adam.first_moment()),
            adam_second: ParamData::from_vector(self.adam.second_moment()),
            adam_steps: self.adam.step_count(),
            ema_master: self.ema.as_ref().map(|e| ParamData::from_vector(e.master())),
            ema_updates: self.ema.as_ref().map(|e| e.update_count()).unwrap_or(0),
            cache_entries: self.cache.as_ref().map(|c| c.entries().to_vec()),
            metrics: self.metrics.clone(),
            collapse_streak: self.collapse_streak,
            last_loss: self.last_loss,
        }
    }

    pub fn completed_steps(&self) -> u64 {
        self.completed_steps
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn student(&self) -> &ParameterVector<T> {
        &self.student
    }

    pub fn is_done(&self) -> bool {
        self.completed_steps >= self.config.total_steps
    }

    /// Teacher parameters used for pseudo-labels at the given stage.
    fn pl_teacher(&self, stage: Stage) -> Result<ParameterVector<T>> {
        match stage {
            Stage::BurnIn => Ok(self.seed_params.clone()),
            Stage::ContinuousPl => {
                let ema = self.ema.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(
                        "continuous stage reached without an initialized teacher".into(),
                    )
                })?;
                teacher_snapshot(ema)
            }
            Stage::FineTune => unreachable!("fine-tune is not run by this engine"),
        }
    }

    /// One optimizer step; returns the metrics record when this step emitted
    /// one.
    pub fn step_once(&mut self) -> Result<Option<MetricsRecord>> {
        let config = self.config;
        let step = self.completed_steps;
        debug_assert!(step < config.total_steps);
        let stage = if step < config.burn_in_steps {
            Stage::BurnIn
        } else {
            Stage::ContinuousPl
        };

        // Batch composition: supervised picks first, then unsupervised.
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(config.seed, TAG_BATCH, step, 0));
        let n_sup = ((config.supervised_mix_fraction * config.batch_size as f64).round()
            as usize)
            .min(config.batch_size);
        let sup_idx: Vec<usize> = (0..n_sup)
            .map(|_| rng.random_range(0..self.corpus.supervised.len().max(1)))
            .collect();
        let unsup_idx: Vec<usize> = (0..config.batch_size - n_sup)
            .map(|_| rng.random_range(0..self.corpus.unsupervised.len()))
            .collect();

        let teacher = self.pl_teacher(stage)?;
        let pl_source = match stage {
            Stage::BurnIn => PlSource::SeedModel,
            _ => PlSource::EmaTeacher,
        };

        // Unsupervised targets per paradigm.
        let unsup_targets: Vec<(usize, BatchTarget<T>)> = match config.paradigm {
            Paradigm::Ctc => {
                let pairs: Vec<(usize, crate::trainer::PseudoLabel)> =
                    if stage == Stage::ContinuousPl && self.cache.is_some() {
                        let mut cache_rng = ChaCha8Rng::seed_from_u64(mix_seed(
                            config.seed,
                            TAG_CACHE,
                            step,
                            0,
                        ));
                        self.cache.as_mut().unwrap().step(
                            &unsup_idx,
                            &teacher,
                            &self.corpus.unsupervised,
                            step,
                            &mut cache_rng,
                        )?
                    } else {
                        unsup_idx
                            .iter()
                            .map(|&i| {
                                generate_pseudo_label(
                                    &teacher,
                                    &self.corpus.unsupervised[i],
                                    step,
                                    pl_source,
                                )
                                .map(|pl| (i, pl))
                            })
                            .collect::<Result<_>>()?
                    };
                pairs
                    .into_iter()
                    .filter(|(_, pl)| !(config.filter_empty_pls && pl.tokens.is_empty()))
                    .map(|(i, pl)| (i, BatchTarget::Tokens(pl.tokens)))
                    .collect()
            }
            Paradigm::FrameKl => unsup_idx
                .iter()
                .map(|&i| {
                    let utt = &self.corpus.unsupervised[i];
                    let (logits, _) =
                        forward(&teacher, &utt.features, ForwardMode::Eval, 0.0, 0)?;
                    Ok((i, BatchTarget::Posteriors(log_softmax(&logits))))
                })
                .collect::<Result<_>>()?,
        };

        let mut members: Vec<BatchMember<'_, T>> = Vec::with_capacity(config.batch_size);
        for &i in &sup_idx {
            let utt = &self.corpus.supervised[i];
            let target = match config.paradigm {
                Paradigm::Ctc => BatchTarget::Tokens(utt.reference.clone().expect("validated")),
                Paradigm::FrameKl => {
                    BatchTarget::OneHotFrames(utt.alignment.clone().expect("validated"))
                }
            };
            members.push(BatchMember {
                utterance: utt,
                target,
            });
        }
        for (i, target) in unsup_targets {
            members.push(BatchMember {
                utterance: &self.corpus.unsupervised[i],
                target,
            });
        }

        let settings = BatchSettings {
            mask: &config.mask,
            dropout_rate: config.dropout_rate,
            kl_mass_threshold: config.kl_mass_threshold,
            seed: config.seed,
            step,
        };
        let (loss, grads) = batch_gradient(&self.student, &members, &settings)?;
        if !loss.is_finite() {
            return Err(Error::NumericFailure {
                step,
                what: format!("batch loss {loss}"),
            });
        }
        self.last_loss = loss;

        let done = step + 1;
        let lr = config.optimizer.main_lr.lr_at(done);
        adam_step(&mut self.student, &grads, &mut self.adam, lr).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NumericFailure {
                step: done,
                what: e.to_string(),
            },
            other => other,
        })?;
        self.completed_steps = done;

        // EMA: copy-initialize exactly at start_step, then update on the
        // delta grid.
        if self.ema.is_none() && done == config.ema.start_step {
            self.ema = Some(ema_init(&self.student, config.ema)?);
        } else if let Some(ema) = self.ema.as_mut() {
            if done > config.ema.start_step {
                if config.lowprecision_ema {
                    ema_update_lowprecision(ema, &self.student, done)?;
                } else {
                    ema_update(ema, &self.student, done)?;
                }
            }
        }

        if done % config.eval_every == 0 || done == config.total_steps {
            let record = self.emit_metrics(stage, lr)?;
            return Ok(Some(record));
        }
        Ok(None)
    }

    fn emit_metrics(&mut self, stage: Stage, lr: f64) -> Result<MetricsRecord> {
        let config = self.config;
        let student_eval = evaluate(&self.student, &self.corpus.dev)?;
        // Blank ratio is measured on the decoding teacher: the EMA snapshot
        // once accumulation started, the seed model before that.
        let (teacher_blank, l2) = match &self.ema {
            Some(ema) => (
                blank_ratio(&teacher_snapshot(ema)?, &self.corpus.dev)?,
                ema.master().l2_distance(&self.student)?,
            ),
            None => (
                blank_ratio(&self.seed_params, &self.corpus.dev)?,
                self.seed_params.l2_distance(&self.student)?,
            ),
        };
        let record = MetricsRecord {
            step: self.completed_steps,
            stage,
            train_loss: self.last_loss,
            dev_wer: student_eval.wer,
            blank_ratio: teacher_blank,
            teacher_student_l2: l2,
            lr,
            half_life_steps: effective_half_life(config.ema.alpha, config.ema.delta),
        };
        self.metrics.push(record.clone());

        if teacher_blank > config.collapse_blank_threshold {
            self.collapse_streak += 1;
        } else {
            self.collapse_streak = 0;
        }
        if self.collapse_streak >= COLLAPSE_EVALS {
            return Err(Error::Collapse {
                report: Box::new(CollapseReport {
                    step: self.completed_steps,
                    blank_ratio: teacher_blank,
                    threshold: config.collapse_blank_threshold,
                    consecutive_evals: self.collapse_streak,
                    metrics: self.metrics.clone(),
                }),
            });
        }
        Ok(record)
    }

    /// Runs to `total_steps`, invoking `on_metrics` for each emitted record
    /// (streaming sinks rely on this for collapse-truncated logs).
    pub fn run(
        &mut self,
        mut on_metrics: impl FnMut(&MetricsRecord) -> Result<()>,
        mut on_checkpoint: impl FnMut(&KaizenSnapshot) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            if let Some(record) = self.step_once()? {
                on_metrics(&record)?;
            }
            if let Some(every) = self.config.checkpoint_every {
                if every > 0 && self.completed_steps % every == 0 && !self.is_done() {
                    on_checkpoint(&self.snapshot())?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<KaizenOutcome<T>> {
        let teacher = match &self.ema {
            Some(ema) => teacher_snapshot(ema)?,
            None => self.seed_params.clone(),
        };
        Ok(KaizenOutcome {
            student: self.student,
            teacher,
            metrics: self.metrics,
        })
    }
}

/// Runs the full two-stage loop and returns the final student, the final
/// teacher snapshot, and the metrics log.
pub fn run_kaizen<T: Scalar>(
    corpus: &Corpus<T>,
    dims: ModelDims,
    seed_params: &ParameterVector<T>,
    config: &TrainRunConfig,
) -> Result<KaizenOutcome<T>> {
    let mut engine = KaizenEngine::new(corpus, dims, seed_params, config)?;
    engine.run(|_| Ok(()), |_| Ok(()))?;
    engine.finish()
}
