//! Pseudo-label generation: deterministic eval-mode decode of the teacher on
//! raw (unaugmented) input.

use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::Result;
use crate::losses::{greedy_decode, log_softmax, TokenSequence};
use crate::model::{forward, ForwardMode};
use crate::numeric::ParameterVector;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlSource {
    SeedModel,
    EmaTeacher,
    Cache,
}

/// Token sequence produced by teacher decoding, with generation-step
/// provenance for cache semantics. Empty sequences are kept: an all-blank
/// decode is a legitimate (and collapse-revealing) target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub utterance_id: String,
    pub tokens: TokenSequence,
    pub generated_at_step: u64,
    pub source: PlSource,
}

pub fn generate_pseudo_label<T: Scalar>(
    teacher: &ParameterVector<T>,
    utterance: &Utterance<T>,
    step: u64,
    source: PlSource,
) -> Result<PseudoLabel> {
    let (logits, _) = forward(teacher, &utterance.features, ForwardMode::Eval, 0.0, 0)?;
    let lp = log_softmax(&logits);
    Ok(PseudoLabel {
        utterance_id: utterance.id.clone(),
        tokens: greedy_decode(&lp),
        generated_at_step: step,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusConfig, SplitCounts};
    use crate::model::ModelDims;

    #[test]
    fn zero_params_yield_empty_labels_deterministically() {
        let corpus = generate_corpus::<f64>(&CorpusConfig {
            vocab: 3,
            feature_dim: 4,
            frames_per_token: (2, 2),
            noise_sigma: 0.1,
            utterance_tokens: (1, 2),
            counts: SplitCounts {
                supervised: 0,
                unsupervised: 3,
                dev: 0,
                test: 0,
            },
            seed: 1,
            avoid_repeats: true,
            silence_frames: (0, 0),
            embedding_norm: None,
        })
        .unwrap();
        let dims = ModelDims {
            feature_dim: 4,
            context: 1,
            hidden: 5,
            vocab: 3,
        };
        let zero = crate::numeric::ParameterVector::<f64>::zeros(dims.layout());
        for utt in &corpus.unsupervised {
            // Uniform posteriors tie-break to blank: the label is empty.
            let a = generate_pseudo_label(&zero, utt, 10, PlSource::EmaTeacher).unwrap();
            let b = generate_pseudo_label(&zero, utt, 10, PlSource::EmaTeacher).unwrap();
            assert!(a.tokens.is_empty());
            assert_eq!(a, b);
            assert_eq!(a.utterance_id, utt.id);
        }
    }
}
