//! CTC loss by the standard forward-backward recursion over the
//! blank-interleaved target, entirely in log space, with exact gradients
//! with respect to the per-frame log-probabilities.
//!
//! [`ctc_bruteforce`] is the verification oracle: it enumerates every
//! alignment string and sums the probability of those that collapse to the
//! target. It shares no code with the recursion apart from
//! [`collapse_alignment`].

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::losses::{collapse_alignment, TokenSequence};
use crate::{Scalar, BLANK};

fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Blank-interleaved expansion `[b, t1, b, t2, ..., tL, b]`.
fn expand(target: &TokenSequence) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * target.len() + 1);
    out.push(BLANK);
    for &t in target.tokens() {
        out.push(t);
        out.push(BLANK);
    }
    out
}

fn check_inputs<T: Scalar>(log_probs: &Array2<T>, target: &TokenSequence) -> Result<()> {
    let (frames, classes) = log_probs.dim();
    if let Some(&bad) = target.tokens().iter().find(|&&t| t >= classes) {
        return Err(Error::ShapeMismatch(format!(
            "target token {bad} out of range for {classes} classes"
        )));
    }
    let required = target.min_ctc_frames();
    if frames < required {
        return Err(Error::InfeasibleTarget { required, frames });
    }
    Ok(())
}

/// Negative log-probability of `target` under `log_probs`, plus the exact
/// gradient of the loss with respect to every log-probability entry
/// (treated as free variables).
///
/// The empty target is valid: its probability is that of the all-blank path.
/// A target that cannot fit in the available frames is an explicit
/// infeasibility error, never an infinite loss.
pub fn ctc_loss<T: Scalar>(
    log_probs: &Array2<T>,
    target: &TokenSequence,
) -> Result<(T, Array2<T>)> {
    check_inputs(log_probs, target)?;
    let (frames, _classes) = log_probs.dim();
    let labels = expand(target);
    let states = labels.len();
    let ninf = T::neg_infinity();

    // Forward: alpha[t][s] = log prob of consuming frames 0..=t and being at
    // expanded state s (emission at t included).
    let mut alpha = Array2::from_elem((frames, states), ninf);
    alpha[[0, 0]] = log_probs[[0, labels[0]]];
    if states > 1 {
        alpha[[0, 1]] = log_probs[[0, labels[1]]];
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            // Skip over a blank is allowed unless the previous non-blank
            // label is identical.
            if s >= 2 && labels[s] != BLANK && labels[s] != labels[s - 2] {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != ninf {
                alpha[[t, s]] = acc + log_probs[[t, labels[s]]];
            }
        }
    }
    let mut log_total = alpha[[frames - 1, states - 1]];
    if states > 1 {
        log_total = log_add(log_total, alpha[[frames - 1, states - 2]]);
    }
    if log_total == ninf {
        // Unreachable for finite log_probs and a feasible target.
        return Err(Error::InfeasibleTarget {
            required: target.min_ctc_frames(),
            frames,
        });
    }

    // Backward: beta[t][s] = log prob of emitting the suffix from frame t
    // onward starting at state s (emission at t included).
    let mut beta = Array2::from_elem((frames, states), ninf);
    beta[[frames - 1, states - 1]] = log_probs[[frames - 1, labels[states - 1]]];
    if states > 1 {
        beta[[frames - 1, states - 2]] = log_probs[[frames - 1, labels[states - 2]]];
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < states {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < states && labels[s + 2] != BLANK && labels[s + 2] != labels[s] {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            if acc != ninf {
                beta[[t, s]] = acc + log_probs[[t, labels[s]]];
            }
        }
    }

    // Path mass through (t, s) divides out one emission factor:
    //   gamma = alpha + beta - log_probs[t][label(s)]
    // and d loss / d lp[t][k] = -sum_{s: label(s)=k} exp(gamma - log_total).
    let mut grad = Array2::zeros(log_probs.dim());
    for t in 0..frames {
        for s in 0..states {
            if alpha[[t, s]] == ninf || beta[[t, s]] == ninf {
                continue;
            }
            let gamma = alpha[[t, s]] + beta[[t, s]] - log_probs[[t, labels[s]]];
            let w = (gamma - log_total).exp();
            grad[[t, labels[s]]] = grad[[t, labels[s]]] - w;
        }
    }

    Ok((-log_total, grad))
}

/// Enumeration oracle: sums the probability of all `classes^frames`
/// alignment strings whose collapse equals `target`. Bounded to frames <= 10
/// and vocab <= 4 to keep the enumeration tractable.
pub fn ctc_bruteforce<T: Scalar>(log_probs: &Array2<T>, target: &TokenSequence) -> Result<T> {
    let (frames, classes) = log_probs.dim();
    let vocab = classes - 1;
    if frames > 10 || vocab > 4 {
        return Err(Error::BruteForceBounds { frames, vocab });
    }
    if let Some(&bad) = target.tokens().iter().find(|&&t| t >= classes) {
        return Err(Error::ShapeMismatch(format!(
            "target token {bad} out of range for {classes} classes"
        )));
    }

    let mut total = 0.0f64;
    let mut path = vec![0usize; frames];
    loop {
        if collapse_alignment(&path) == target.tokens() {
            let logp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| log_probs[[t, k]].as_f64())
                .sum();
            total += logp.exp();
        }
        // Odometer over base-`classes` strings.
        let mut pos = 0;
        loop {
            if pos == frames {
                return if total > 0.0 {
                    Ok(T::from_config(-total.ln()))
                } else {
                    Err(Error::InfeasibleTarget {
                        required: target.min_ctc_frames(),
                        frames,
                    })
                };
            }
            path[pos] += 1;
            if path[pos] < classes {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
