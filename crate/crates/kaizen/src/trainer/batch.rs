//! Shared batch loss/gradient computation for the supervised and
//! semi-supervised loops.
//!
//! Members are processed and accumulated in batch order, so every run is
//! schedule-independent and bit-reproducible.

use ndarray::{Array2, Axis};

use crate::data::{apply_masks, MaskConfig, Utterance};
use crate::error::{Error, Result};
use crate::losses::{ctc_loss, kl_topk_loss, log_softmax, TokenSequence};
use crate::model::{backward, forward, ForwardMode};
use crate::numeric::ParameterVector;
use crate::trainer::{mix_seed, TAG_DROPOUT, TAG_MASK};
use crate::Scalar;

/// Supervision for one batch member.
pub enum BatchTarget<T> {
    /// CTC on a token sequence (reference or pseudo-label).
    Tokens(TokenSequence),
    /// Frame-level KL against a one-hot alignment (token id per frame).
    OneHotFrames(Vec<usize>),
    /// Frame-level KL against teacher log-posteriors on the clean input.
    Posteriors(Array2<T>),
}

pub struct BatchMember<'a, T> {
    pub utterance: &'a Utterance<T>,
    pub target: BatchTarget<T>,
}

pub struct BatchSettings<'a> {
    pub mask: &'a MaskConfig,
    pub dropout_rate: f64,
    pub kl_mass_threshold: f64,
    /// Base seed and step used to derive per-member mask/dropout streams.
    pub seed: u64,
    pub step: u64,
}

/// Mean loss and mean gradient over the batch. Members are masked and
/// dropout-seeded individually; accumulation order is the member order.
pub fn batch_gradient<T: Scalar>(
    params: &ParameterVector<T>,
    members: &[BatchMember<'_, T>],
    settings: &BatchSettings<'_>,
) -> Result<(f64, ParameterVector<T>)> {
    let mut grads = ParameterVector::zeros(params.layout().clone());
    let mut total_loss = 0.0f64;
    if members.is_empty() {
        return Ok((0.0, grads));
    }
    for (member_idx, member) in members.iter().enumerate() {
        let mask_seed = mix_seed(settings.seed, TAG_MASK, settings.step, member_idx as u64);
        let dropout_seed =
            mix_seed(settings.seed, TAG_DROPOUT, settings.step, member_idx as u64);
        let masked = apply_masks(&member.utterance.features, settings.mask, mask_seed);
        let (logits, trace) = forward(
            params,
            &masked,
            ForwardMode::Train,
            settings.dropout_rate,
            dropout_seed,
        )?;
        let student_lp = log_softmax(&logits);
        let (loss, dlp) = match &member.target {
            BatchTarget::Tokens(tokens) => ctc_loss(&student_lp, tokens)?,
            BatchTarget::Posteriors(teacher_lp) => {
                kl_topk_loss(teacher_lp, &student_lp, settings.kl_mass_threshold)?
            }
            BatchTarget::OneHotFrames(alignment) => {
                let teacher_lp = one_hot_log_posteriors(alignment, student_lp.ncols())?;
                kl_topk_loss(&teacher_lp, &student_lp, settings.kl_mass_threshold)?
            }
        };
        total_loss += loss.as_f64();
        let dlogits = chain_log_softmax(&student_lp, &dlp);
        let member_grads = backward(&trace, &dlogits)?;
        let acc = grads.values_mut();
        for (a, g) in acc.iter_mut().zip(member_grads.values()) {
            *a = *a + *g;
        }
    }
    let inv = T::from_config(1.0 / members.len() as f64);
    for g in grads.values_mut() {
        *g = *g * inv;
    }
    Ok((total_loss / members.len() as f64, grads))
}

/// Pulls a loss gradient taken w.r.t. log-posteriors back through
/// log-softmax: `dlogit_i = dlp_i - softmax_i * sum_j dlp_j` per row.
pub fn chain_log_softmax<T: Scalar>(log_probs: &Array2<T>, dlp: &Array2<T>) -> Array2<T> {
    let mut out = dlp.clone();
    for (mut orow, (lrow, drow)) in out
        .axis_iter_mut(Axis(0))
        .zip(log_probs.axis_iter(Axis(0)).zip(dlp.axis_iter(Axis(0))))
    {
        let row_sum = drow.iter().fold(T::zero(), |acc, &v| acc + v);
        for (o, &lp) in orow.iter_mut().zip(lrow.iter()) {
            *o = *o - lp.exp() * row_sum;
        }
    }
    out
}

/// One-hot teacher log-posteriors from a frame alignment: log 1 = 0 at the
/// aligned class, -inf elsewhere.
pub fn one_hot_log_posteriors<T: Scalar>(
    alignment: &[usize],
    classes: usize,
) -> Result<Array2<T>> {
    let mut out = Array2::from_elem((alignment.len(), classes), T::neg_infinity());
    for (t, &tok) in alignment.iter().enumerate() {
        if tok >= classes {
            return Err(Error::ShapeMismatch(format!(
                "alignment token {tok} out of range for {classes} classes"
            )));
        }
        out[[t, tok]] = T::zero();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_error};
    use crate::model::{init_params, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            feature_dim: 3,
            context: 1,
            hidden: 4,
            vocab: 2,
        }
    }

    fn utterance(frames: usize, seed: u64) -> Utterance<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Utterance {
            id: format!("u{seed}"),
            features: Array2::from_shape_fn((frames, 3), |_| rng.random_range(-1.0..1.0)),
            reference: Some(TokenSequence::new(vec![1, 2]).unwrap()),
            alignment: Some(vec![1, 1, 2, 2]),
        }
    }

    /// End-to-end check: params -> masked forward -> log-softmax -> loss
    /// gradient matches finite differences over the parameters, for every
    /// target kind.
    #[test]
    fn end_to_end_parameter_gradients_match_finite_differences() {
        let d = dims();
        let params = init_params::<f64>(d, 5);
        let utt = utterance(4, 6);
        let mask = MaskConfig {
            num_time_masks: 1,
            max_time_width: 1,
            num_feature_masks: 0,
            max_feature_width: 0,
            mask_value: 0.0,
        };
        let settings = BatchSettings {
            mask: &mask,
            dropout_rate: 0.3,
            kl_mass_threshold: 0.99,
            seed: 77,
            step: 3,
        };
        let teacher_lp = {
            let teacher = init_params::<f64>(d, 50);
            let (logits, _) =
                forward(&teacher, &utt.features, ForwardMode::Eval, 0.0, 0).unwrap();
            log_softmax(&logits)
        };
        let targets = [
            BatchTarget::Tokens(TokenSequence::new(vec![1, 2]).unwrap()),
            BatchTarget::OneHotFrames(vec![1, 1, 2, 2]),
            BatchTarget::Posteriors(teacher_lp),
        ];
        for target in targets {
            let members = [BatchMember {
                utterance: &utt,
                target,
            }];
            let (_, grads) = batch_gradient(&params, &members, &settings).unwrap();
            let flat = params.to_f64_values();
            let numeric = central_diff(
                |x| {
                    let p = ParameterVector::from_values(params.layout().clone(), x.to_vec())
                        .unwrap();
                    batch_gradient(&p, &members, &settings).unwrap().0
                },
                &flat,
                1e-5,
            );
            let err = max_rel_error(&grads.to_f64_values(), &numeric, 1e-4);
            assert!(err <= 1e-5, "rel err {err}");
        }
    }

    #[test]
    fn empty_batch_gives_zero() {
        let params = init_params::<f64>(dims(), 5);
        let settings = BatchSettings {
            mask: &MaskConfig::none(),
            dropout_rate: 0.0,
            kl_mass_threshold: 0.99,
            seed: 0,
            step: 0,
        };
        let (loss, grads) = batch_gradient::<f64>(&params, &[], &settings).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.values().iter().all(|&v| v == 0.0));
    }
}
