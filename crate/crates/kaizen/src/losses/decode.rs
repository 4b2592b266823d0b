//! Greedy CTC decoding: per-frame argmax, collapse adjacent repeats, drop
//! blanks.

use ndarray::Array2;

use crate::losses::TokenSequence;
use crate::{Scalar, BLANK};

/// Per-frame argmax with ties broken toward the lowest index, so blank wins
/// any tie. Deterministic across platforms.
pub fn argmax_frames<T: Scalar>(log_probs: &Array2<T>) -> Vec<usize> {
    log_probs
        .axis_iter(ndarray::Axis(0))
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Collapses an alignment string: de-duplicate adjacent symbols, then remove
/// blanks.
pub fn collapse_alignment(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

pub fn greedy_decode<T: Scalar>(log_probs: &Array2<T>) -> TokenSequence {
    TokenSequence::new(collapse_alignment(&argmax_frames(log_probs)))
        .expect("collapse removes blanks")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_hot_rows(frames: &[usize], classes: usize) -> Array2<f64> {
        let mut m = Array2::from_elem((frames.len(), classes), -10.0);
        for (t, &k) in frames.iter().enumerate() {
            m[[t, k]] = 0.0;
        }
        m
    }

    #[test]
    fn dedupe_then_blank_removal() {
        // frames: blank, a, a, blank, b -> [a, b]
        let lp = one_hot_rows(&[0, 1, 1, 0, 2], 3);
        assert_eq!(greedy_decode(&lp).tokens(), &[1, 2]);
    }

    #[test]
    fn blank_separates_repeats() {
        let lp = one_hot_rows(&[1, 0, 1], 3);
        assert_eq!(greedy_decode(&lp).tokens(), &[1, 1]);
    }

    #[test]
    fn all_blank_decodes_empty() {
        let lp = one_hot_rows(&[0, 0, 0], 3);
        assert!(greedy_decode(&lp).is_empty());
    }

    #[test]
    fn ties_break_toward_blank() {
        let lp = array![[0.5, 0.5, 0.3], [0.2, 0.7, 0.7]];
        assert_eq!(argmax_frames(&lp), vec![0, 1]);
        assert!(greedy_decode(&lp).tokens() == &[1]);
    }

    proptest::proptest! {
        #[test]
        fn decode_output_has_no_blank_and_no_spurious_repeats(
            frames in proptest::collection::vec(0usize..4, 1..20),
        ) {
            let lp = one_hot_rows(&frames, 4);
            let decoded = greedy_decode(&lp);
            proptest::prop_assert!(decoded.tokens().iter().all(|&t| t != crate::BLANK));
            // Any adjacent duplicate in the output must come from two argmax
            // runs separated by a different symbol, never from one run.
            let collapsed = collapse_alignment(&frames);
            proptest::prop_assert_eq!(decoded.tokens(), &collapsed[..]);
        }
    }
}
