//! Run metrics and greedy-decoding evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::losses::{
    argmax_frames, collapse_alignment, edit_distance, log_softmax, wer_from_counts, EditCounts,
    TokenSequence,
};
use crate::model::{forward, ForwardMode};
use crate::numeric::ParameterVector;
use crate::{Scalar, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BurnIn,
    ContinuousPl,
    FineTune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::BurnIn => "burn_in",
            Stage::ContinuousPl => "continuous_pl",
            Stage::FineTune => "fine_tune",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "burn_in" => Ok(Stage::BurnIn),
            "continuous_pl" => Ok(Stage::ContinuousPl),
            "fine_tune" => Ok(Stage::FineTune),
            other => Err(Error::InvalidConfig(format!("unknown stage `{other}`"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub stage: Stage,
    pub train_loss: f64,
    pub dev_wer: f64,
    /// Fraction of dev frames whose teacher argmax is blank.
    pub blank_ratio: f64,
    pub teacher_student_l2: f64,
    pub lr: f64,
    pub half_life_steps: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "step,stage,train_loss,dev_wer,blank_ratio,teacher_student_l2,lr,half_life_steps";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.stage,
            self.train_loss,
            self.dev_wer,
            self.blank_ratio,
            self.teacher_student_l2,
            self.lr,
            self.half_life_steps
        )
    }

    pub fn from_csv_row(row: &str) -> Result<MetricsRecord> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::InvalidConfig(format!(
                "metrics row has {} fields, expected 8: `{row}`",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad number `{s}`: {e}")))
        };
        Ok(MetricsRecord {
            step: fields[0]
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("bad step: {e}")))?,
            stage: Stage::parse(fields[1])?,
            train_loss: num(fields[2])?,
            dev_wer: num(fields[3])?,
            blank_ratio: num(fields[4])?,
            teacher_student_l2: num(fields[5])?,
            lr: num(fields[6])?,
            half_life_steps: num(fields[7])?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub id: String,
    pub counts: EditCounts,
    pub ref_len: usize,
    pub hyp_len: usize,
    pub wer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Aggregate token error rate: total edits over total reference tokens.
    pub wer: f64,
    /// Fraction of frames whose argmax is blank.
    pub blank_ratio: f64,
    pub counts: EditCounts,
    pub ref_tokens: usize,
    pub frames: usize,
    pub blank_frames: usize,
    pub per_utterance: Vec<UtteranceEval>,
}

/// Greedy-decodes every utterance with an eval-mode forward pass and
/// aggregates edit counts. Order-independent: totals are sums.
pub fn evaluate<T: Scalar>(
    params: &ParameterVector<T>,
    set: &[Utterance<T>],
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::InvalidConfig("evaluation set is empty".into()));
    }
    let mut counts = EditCounts::default();
    let mut ref_tokens = 0usize;
    let mut frames = 0usize;
    let mut blank_frames = 0usize;
    let mut per_utterance = Vec::with_capacity(set.len());
    for utt in set {
        let reference = utt.reference.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("utterance {} has no reference", utt.id))
        })?;
        let (logits, _) = forward(params, &utt.features, ForwardMode::Eval, 0.0, 0)?;
        let lp = log_softmax(&logits);
        let argmax = argmax_frames(&lp);
        frames += argmax.len();
        blank_frames += argmax.iter().filter(|&&k| k == BLANK).count();
        let hyp = TokenSequence::new(collapse_alignment(&argmax)).expect("no blanks");
        let c = edit_distance(reference, &hyp);
        counts.add(&c);
        ref_tokens += reference.len();
        per_utterance.push(UtteranceEval {
            id: utt.id.clone(),
            counts: c,
            ref_len: reference.len(),
            hyp_len: hyp.len(),
            wer: wer_from_counts(&c, reference.len()),
        });
    }
    Ok(EvalReport {
        wer: counts.total() as f64 / ref_tokens.max(1) as f64,
        blank_ratio: blank_frames as f64 / frames.max(1) as f64,
        counts,
        ref_tokens,
        frames,
        blank_frames,
        per_utterance,
    })
}

/// Blank ratio of `params` on `set` without needing references (used for the
/// teacher, whose diagnostic is decode emptiness, not accuracy).
pub fn blank_ratio<T: Scalar>(
    params: &ParameterVector<T>,
    set: &[Utterance<T>],
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidConfig("evaluation set is empty".into()));
    }
    let mut frames = 0usize;
    let mut blanks = 0usize;
    for utt in set {
        let (logits, _) = forward(params, &utt.features, ForwardMode::Eval, 0.0, 0)?;
        let lp = log_softmax(&logits);
        let argmax = argmax_frames(&lp);
        frames += argmax.len();
        blanks += argmax.iter().filter(|&&k| k == BLANK).count();
    }
    Ok(blanks as f64 / frames.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, Corpus, CorpusConfig, SplitCounts};
    use crate::model::{init_params, ModelDims};

    fn corpus() -> Corpus<f64> {
        generate_corpus(&CorpusConfig {
            vocab: 3,
            feature_dim: 4,
            frames_per_token: (2, 3),
            noise_sigma: 0.1,
            utterance_tokens: (1, 3),
            counts: SplitCounts {
                supervised: 4,
                unsupervised: 2,
                dev: 4,
                test: 2,
            },
            seed: 3,
            avoid_repeats: true,
            silence_frames: (0, 0),
            embedding_norm: None,
        })
        .unwrap()
    }

    #[test]
    fn zero_params_decode_empty_wer_one() {
        let c = corpus();
        let dims = ModelDims {
            feature_dim: 4,
            context: 1,
            hidden: 6,
            vocab: 3,
        };
        let params = crate::numeric::ParameterVector::<f64>::zeros(dims.layout());
        let report = evaluate(&params, &c.dev).unwrap();
        assert_eq!(report.wer, 1.0);
        assert_eq!(report.blank_ratio, 1.0);
        assert!(report.per_utterance.iter().all(|u| u.hyp_len == 0));
    }

    #[test]
    fn evaluation_is_order_independent() {
        let c = corpus();
        let dims = ModelDims {
            feature_dim: 4,
            context: 1,
            hidden: 6,
            vocab: 3,
        };
        let params = init_params::<f64>(dims, 9);
        let a = evaluate(&params, &c.dev).unwrap();
        let mut reversed = c.dev.clone();
        reversed.reverse();
        let b = evaluate(&params, &reversed).unwrap();
        assert_eq!(a.wer, b.wer);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.blank_ratio, b.blank_ratio);
    }

    #[test]
    fn unlabeled_set_rejected() {
        let c = corpus();
        let dims = ModelDims {
            feature_dim: 4,
            context: 1,
            hidden: 6,
            vocab: 3,
        };
        let params = init_params::<f64>(dims, 9);
        assert!(evaluate(&params, &c.unsupervised).is_err());
        assert!(blank_ratio(&params, &c.unsupervised).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let r = MetricsRecord {
            step: 400,
            stage: Stage::ContinuousPl,
            train_loss: 1.25,
            dev_wer: 0.4375,
            blank_ratio: 0.62,
            teacher_student_l2: 0.0078125,
            lr: 0.0015,
            half_life_steps: f64::INFINITY,
        };
        let row = r.to_csv_row();
        let back = MetricsRecord::from_csv_row(&row).unwrap();
        assert_eq!(r, back);
    }
}
