//! Training criteria and evaluation metrics: log-softmax, CTC with exact
//! gradients and a brute-force oracle, greedy decoding, top-k-truncated KL
//! distillation, and edit-distance error rates.

mod ctc;
mod decode;
mod edit;
mod kl;

pub use ctc::{ctc_bruteforce, ctc_loss};
pub use decode::{argmax_frames, collapse_alignment, greedy_decode};
pub use edit::{edit_distance, wer_from_counts, EditCounts};
pub use kl::kl_topk_loss;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Scalar, BLANK};

/// Token sequence over `[1, V]`; the blank index never appears.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.iter().any(|&t| t == BLANK) {
            return Err(Error::BlankInTokens);
        }
        Ok(TokenSequence(tokens))
    }

    pub fn empty() -> Self {
        TokenSequence(Vec::new())
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Minimum number of frames a CTC alignment needs: length plus one
    /// mandatory blank between each adjacent repeated pair.
    pub fn min_ctc_frames(&self) -> usize {
        let repeats = self.0.windows(2).filter(|w| w[0] == w[1]).count();
        self.0.len() + repeats
    }
}

impl std::fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter() {
            sum = sum + (*v - max).exp();
        }
        let lse = max + sum.ln();
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    out
}

/// Checks the log-posterior invariant: each row log-sum-exps to zero.
pub fn validate_log_posteriors<T: Scalar>(log_probs: &Array2<T>) -> Result<()> {
    for (i, row) in log_probs.axis_iter(Axis(0)).enumerate() {
        let sum: f64 = row.iter().map(|v| v.as_f64().exp()).sum();
        if (sum.ln()).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "log-posterior row {i} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn blank_rejected_in_token_sequence() {
        assert!(TokenSequence::new(vec![1, 0, 2]).is_err());
        assert!(TokenSequence::new(vec![1, 2]).is_ok());
    }

    #[test]
    fn min_ctc_frames_counts_repeats() {
        assert_eq!(TokenSequence::new(vec![1, 1]).unwrap().min_ctc_frames(), 3);
        assert_eq!(TokenSequence::new(vec![1, 2]).unwrap().min_ctc_frames(), 2);
        assert_eq!(TokenSequence::empty().min_ctc_frames(), 0);
    }

    #[test]
    fn uniform_rows_from_zero_logits() {
        let logits = Array2::<f64>::zeros((2, 4));
        let lp = log_softmax(&logits);
        let want = (0.25f64).ln();
        assert!(lp.iter().all(|&v| (v - want).abs() < 1e-12));
        validate_log_posteriors(&lp).unwrap();
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let logits: Array2<f64> = array![[1000.0, 0.0, 0.0, 0.0]];
        let lp = log_softmax(&logits);
        assert!(lp.iter().all(|v| v.is_finite()));
        assert!(lp[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let logits: Array2<f64> = array![[0.3, -1.2, 2.0]];
        let shifted = logits.mapv(|v| v + 17.5);
        let a = log_softmax(&logits);
        let b = log_softmax(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn rows_normalize(vals in proptest::collection::vec(-30.0f64..30.0, 8)) {
            let logits = Array2::from_shape_vec((2, 4), vals).unwrap();
            let lp = log_softmax(&logits);
            validate_log_posteriors(&lp).unwrap();
        }
    }
}
