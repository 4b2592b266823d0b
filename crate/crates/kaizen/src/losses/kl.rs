//! Frame-level KL distillation with top-k truncation of the teacher
//! posterior.
//!
//! Per frame, the smallest k teacher classes whose probabilities reach the
//! mass threshold are kept and renormalized; the student posterior is used
//! as-is (not renormalized), which keeps the objective a proper
//! cross-entropy bound. The loss is averaged over frames.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Scalar;

/// Truncated KL between teacher and student log-posteriors, plus the exact
/// gradient with respect to the student log-posterior entries.
pub fn kl_topk_loss<T: Scalar>(
    teacher: &Array2<T>,
    student: &Array2<T>,
    mass_threshold: f64,
) -> Result<(T, Array2<T>)> {
    if teacher.dim() != student.dim() {
        return Err(Error::ShapeMismatch(format!(
            "teacher {:?} vs student {:?}",
            teacher.dim(),
            student.dim()
        )));
    }
    if !(mass_threshold > 0.0 && mass_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "mass threshold must be in (0, 1], got {mass_threshold}"
        )));
    }
    let (frames, classes) = teacher.dim();
    if frames == 0 {
        return Err(Error::ShapeMismatch("empty posterior sequence".into()));
    }

    let mut grad = Array2::zeros((frames, classes));
    let mut total = 0.0f64;
    let inv_frames = 1.0 / frames as f64;
    let mut order: Vec<usize> = Vec::with_capacity(classes);
    for t in 0..frames {
        let probs: Vec<f64> = (0..classes).map(|k| teacher[[t, k]].as_f64().exp()).collect();
        order.clear();
        order.extend(0..classes);
        // Descending probability, index ascending on ties: deterministic.
        order.sort_by(|&a, &b| {
            probs[b]
                .partial_cmp(&probs[a])
                .expect("finite probabilities")
                .then(a.cmp(&b))
        });
        let k = select_k(&probs, &order, mass_threshold);
        let selected_mass: f64 = order[..k].iter().map(|&i| probs[i]).sum();
        for &i in &order[..k] {
            let p = probs[i] / selected_mass;
            if p == 0.0 {
                continue;
            }
            let q_log = student[[t, i]].as_f64();
            total += p * (p.ln() - q_log) * inv_frames;
            grad[[t, i]] = T::from_config(-p * inv_frames);
        }
    }
    Ok((T::from_config(total), grad))
}

/// Smallest k such that the top-k probabilities sum to at least the
/// threshold; falls back to the full support if rounding keeps the running
/// sum below it.
fn select_k(probs: &[f64], order: &[usize], threshold: f64) -> usize {
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        acc += probs[i];
        if acc >= threshold {
            return rank + 1;
        }
    }
    order.len()
}
