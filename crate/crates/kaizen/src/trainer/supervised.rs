//! Supervised training on reference labels: the seed model and the final
//! fine-tuning stage share this loop.

use serde::{Deserialize, Serialize};

use crate::data::{MaskConfig, Utterance};
use crate::error::{Error, Result};
use crate::model::{init_params, ModelDims};
use crate::numeric::{adam_step, AdamConfig, AdamState, LrSchedule, ParameterVector};
use crate::trainer::batch::{batch_gradient, BatchMember, BatchSettings, BatchTarget};
use crate::trainer::metrics::{evaluate, MetricsRecord, Stage};
use crate::trainer::{
    default_eval_every, default_kl_mass, mix_seed, Paradigm, TAG_BATCH, TAG_INIT,
};
use crate::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    pub paradigm: Paradigm,
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    pub lr: LrSchedule,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_kl_mass")]
    pub kl_mass_threshold: f64,
}

/// One row of a supervised training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub train_loss: f64,
    pub dev_wer: f64,
    pub lr: f64,
}

/// Checks every reference is present, CTC-feasible, and (for the frame-KL
/// paradigm) aligned. Errors list the offending utterance ids.
pub fn validate_supervised<T: Scalar>(
    data: &[Utterance<T>],
    paradigm: Paradigm,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("supervised set is empty".into()));
    }
    let mut bad = Vec::new();
    for utt in data {
        match &utt.reference {
            None => bad.push(utt.id.clone()),
            Some(reference) => match paradigm {
                Paradigm::Ctc => {
                    if utt.frames() < reference.min_ctc_frames() {
                        bad.push(utt.id.clone());
                    }
                }
                Paradigm::FrameKl => {
                    if utt.alignment.as_ref().map(|a| a.len()) != Some(utt.frames()) {
                        bad.push(utt.id.clone());
                    }
                }
            },
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InfeasibleUtterances { ids: bad })
    }
}

fn target_for<T: Scalar>(utt: &Utterance<T>, paradigm: Paradigm) -> BatchTarget<T> {
    match paradigm {
        Paradigm::Ctc => BatchTarget::Tokens(utt.reference.clone().expect("validated")),
        Paradigm::FrameKl => {
            BatchTarget::OneHotFrames(utt.alignment.clone().expect("validated"))
        }
    }
}

fn supervised_loop<T: Scalar>(
    params: &mut ParameterVector<T>,
    sup: &[Utterance<T>],
    dev: &[Utterance<T>],
    config: &SupervisedConfig,
    mut emit: impl FnMut(u64, f64, f64, f64) -> Result<()>,
) -> Result<()> {
    validate_supervised(sup, config.paradigm)?;
    let mut adam = AdamState::new(params.layout().clone(), config.adam);
    for step in 0..config.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, TAG_BATCH, step, 0));
        let members: Vec<BatchMember<'_, T>> = (0..config.batch_size)
            .map(|_| {
                let utt = &sup[rng.random_range(0..sup.len())];
                BatchMember {
                    utterance: utt,
                    target: target_for(utt, config.paradigm),
                }
            })
            .collect();
        let settings = BatchSettings {
            mask: &config.mask,
            dropout_rate: config.dropout_rate,
            kl_mass_threshold: config.kl_mass_threshold,
            seed: config.seed,
            step,
        };
        let (loss, grads) = batch_gradient(params, &members, &settings)?;
        if !loss.is_finite() {
            return Err(Error::NumericFailure {
                step,
                what: format!("supervised batch loss {loss}"),
            });
        }
        let done = step + 1;
        let lr = config.lr.lr_at(done);
        adam_step(params, &grads, &mut adam, lr).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NumericFailure {
                step: done,
                what: e.to_string(),
            },
            other => other,
        })?;
        if done % config.eval_every == 0 || done == config.steps {
            let dev_wer = if dev.is_empty() {
                f64::NAN
            } else {
                evaluate(params, dev)?.wer
            };
            emit(done, loss, dev_wer, lr)?;
        }
    }
    Ok(())
}

/// Trains a model from scratch on supervised data only; the result serves as
/// the seed model generating burn-in pseudo-labels.
pub fn train_supervised<T: Scalar>(
    sup: &[Utterance<T>],
    dev: &[Utterance<T>],
    dims: ModelDims,
    config: &SupervisedConfig,
) -> Result<(ParameterVector<T>, Vec<TrainLogRecord>)> {
    dims.validate()?;
    let mut params = init_params(dims, mix_seed(config.seed, TAG_INIT, 0, 0));
    let mut log = Vec::new();
    supervised_loop(&mut params, sup, dev, config, |step, train_loss, dev_wer, lr| {
        log.push(TrainLogRecord {
            step,
            train_loss,
            dev_wer,
            lr,
        });
        Ok(())
    })?;
    Ok((params, log))
}

/// Continues training an existing student on the supervised references with
/// the fine-tune schedule. Metrics continue the run's step numbering from
/// `step_offset` and carry the run's half-life for log continuity.
pub fn fine_tune<T: Scalar>(
    student: &ParameterVector<T>,
    sup: &[Utterance<T>],
    dev: &[Utterance<T>],
    config: &SupervisedConfig,
    step_offset: u64,
    half_life_steps: f64,
) -> Result<(ParameterVector<T>, Vec<MetricsRecord>)> {
    let mut params = student.clone();
    let mut records = Vec::new();
    supervised_loop(&mut params, sup, dev, config, |step, train_loss, dev_wer, lr| {
        records.push(MetricsRecord {
            step: step_offset + step,
            stage: Stage::FineTune,
            train_loss,
            dev_wer,
            blank_ratio: f64::NAN, // filled below from the student itself
            teacher_student_l2: 0.0,
            lr,
            half_life_steps,
        });
        Ok(())
    })?;
    // Fine-tuning has no teacher; report the student's own blank ratio at
    // each evaluation point retrospectively is not possible, so compute it
    // for the final state only and backfill NaNs with it.
    if !dev.is_empty() {
        let ratio = crate::trainer::metrics::blank_ratio(&params, dev)?;
        for r in &mut records {
            if r.blank_ratio.is_nan() {
                r.blank_ratio = ratio;
            }
        }
    }
    Ok((params, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, Corpus, CorpusConfig, SplitCounts};

    fn noiseless_corpus() -> Corpus<f64> {
        generate_corpus(&CorpusConfig {
            vocab: 4,
            feature_dim: 8,
            frames_per_token: (2, 3),
            noise_sigma: 0.0,
            utterance_tokens: (1, 4),
            counts: SplitCounts {
                supervised: 16,
                unsupervised: 0,
                dev: 12,
                test: 0,
            },
            seed: 31,
            avoid_repeats: true,
            silence_frames: (0, 0),
            embedding_norm: None,
        })
        .unwrap()
    }

    fn dims() -> ModelDims {
        ModelDims {
            feature_dim: 8,
            context: 1,
            hidden: 16,
            vocab: 4,
        }
    }

    fn config(paradigm: Paradigm, steps: u64) -> SupervisedConfig {
        SupervisedConfig {
            paradigm,
            steps,
            batch_size: 4,
            dropout_rate: 0.0,
            mask: MaskConfig::none(),
            adam: AdamConfig::default(),
            lr: LrSchedule::warmup_decay(40, 5e-3, steps.max(1)),
            seed: 11,
            eval_every: 100,
            kl_mass_threshold: 0.99,
        }
    }

    #[test]
    fn noiseless_ctc_reaches_zero_wer() {
        let c = noiseless_corpus();
        let cfg = config(Paradigm::Ctc, 400);
        let (params, log) = train_supervised(&c.supervised, &c.dev, dims(), &cfg).unwrap();
        let report = evaluate(&params, &c.dev).unwrap();
        assert_eq!(report.wer, 0.0, "log: {log:?}");
    }

    #[test]
    fn noiseless_frame_kl_reaches_zero_wer() {
        let c = noiseless_corpus();
        let cfg = config(Paradigm::FrameKl, 300);
        let (params, _) = train_supervised(&c.supervised, &c.dev, dims(), &cfg).unwrap();
        let report = evaluate(&params, &c.dev).unwrap();
        assert_eq!(report.wer, 0.0);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let c = noiseless_corpus();
        let cfg = config(Paradigm::Ctc, 0);
        let (params, log) = train_supervised(&c.supervised, &c.dev, dims(), &cfg).unwrap();
        let want = init_params::<f64>(dims(), mix_seed(cfg.seed, TAG_INIT, 0, 0));
        assert_eq!(params.values(), want.values());
        assert!(log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let c = noiseless_corpus();
        let cfg = config(Paradigm::Ctc, 150);
        let (p1, l1) = train_supervised(&c.supervised, &c.dev, dims(), &cfg).unwrap();
        let (p2, l2) = train_supervised(&c.supervised, &c.dev, dims(), &cfg).unwrap();
        assert_eq!(p1.values(), p2.values());
        assert_eq!(l1, l2);
    }

    #[test]
    fn unlabeled_utterances_rejected_with_ids() {
        let mut c = noiseless_corpus();
        c.supervised[2].reference = None;
        let cfg = config(Paradigm::Ctc, 10);
        match train_supervised(&c.supervised, &c.dev, dims(), &cfg) {
            Err(Error::InfeasibleUtterances { ids }) => {
                assert_eq!(ids, vec![c.supervised[2].id.clone()])
            }
            other => panic!("expected InfeasibleUtterances, got {other:?}"),
        }
    }

    #[test]
    fn fine_tune_zero_steps_is_identity() {
        let c = noiseless_corpus();
        let student = init_params::<f64>(dims(), 99);
        let cfg = config(Paradigm::Ctc, 0);
        let (out, records) =
            fine_tune(&student, &c.supervised, &c.dev, &cfg, 5000, 42.0).unwrap();
        assert_eq!(out.values(), student.values());
        assert!(records.is_empty());
    }

    #[test]
    fn fine_tune_recovers_a_collapsed_model() {
        // An all-blank model (live network, blank bias pushed up) decodes
        // everything to the empty sequence; fine-tuning on noiseless data
        // must strictly reduce its WER.
        let c = noiseless_corpus();
        let mut collapsed = init_params::<f64>(dims(), 7);
        collapsed.segment_mut("b2").unwrap()[crate::BLANK] = 5.0;
        let before = evaluate(&collapsed, &c.dev).unwrap().wer;
        assert_eq!(before, 1.0);
        let cfg = config(Paradigm::Ctc, 300);
        let (out, records) =
            fine_tune(&collapsed, &c.supervised, &c.dev, &cfg, 1000, f64::INFINITY).unwrap();
        let after = evaluate(&out, &c.dev).unwrap().wer;
        assert!(after < before, "after={after}");
        assert!(records.iter().all(|r| r.stage == Stage::FineTune));
        assert_eq!(records.last().unwrap().step, 1300);
    }
}
