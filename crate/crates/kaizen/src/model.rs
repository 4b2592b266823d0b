//! A small frame-level acoustic model with manual backpropagation.
//!
//! Per frame `t`, the frames `t-c .. t+c` are stacked (zero-padded at the
//! edges, which affects bit-exact reproducibility and is therefore fixed),
//! then passed through `affine -> tanh -> dropout -> affine` to produce
//! logits over `vocab + 1` classes, blank at index 0. Dropout is inverted
//! (activations scaled by `1/(1-p)` at train time) and applied only in train
//! mode; eval mode is a pure function of `(params, features)`, which is what
//! makes teacher inference deterministic.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{Layout, ParameterVector};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub feature_dim: usize,
    /// Frames of left and right context stacked per position.
    pub context: usize,
    pub hidden: usize,
    /// Real tokens; the output dimension is `vocab + 1` with blank at 0.
    pub vocab: usize,
}

impl ModelDims {
    pub fn output_dim(&self) -> usize {
        self.vocab + 1
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.context + 1) * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.vocab == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dims must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Segment table shared by parameters, gradients, and optimizer moments.
    pub fn layout(&self) -> Arc<Layout> {
        Layout::new([
            ("w1", self.input_dim() * self.hidden),
            ("b1", self.hidden),
            ("w2", self.hidden * self.output_dim()),
            ("b2", self.output_dim()),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Cached activations for one forward pass, sufficient for exact gradients.
/// Valid only for the exact `(params, input, mask)` triple that produced it.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    params: ParameterVector<T>,
    stacked: Array2<T>,
    hidden: Array2<T>,
    /// Inverted-dropout factor per activation: 0 or 1/(1-p). None in eval
    /// mode or when the rate is zero.
    mask_scale: Option<Array2<T>>,
    mode: ForwardMode,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn mode(&self) -> ForwardMode {
        self.mode
    }

    /// True where the dropout mask kept hidden unit `j` at frame `t`.
    pub fn kept(&self, t: usize, j: usize) -> bool {
        match &self.mask_scale {
            None => true,
            Some(m) => m[[t, j]] != T::zero(),
        }
    }
}

fn weight_view<'a, T: Scalar>(
    params: &'a ParameterVector<T>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<ArrayView2<'a, T>> {
    let slice = params.segment(name)?;
    ArrayView2::from_shape((rows, cols), slice)
        .map_err(|e| Error::ShapeMismatch(format!("segment {name}: {e}")))
}

/// Deterministic fan-in-scaled uniform initialization; biases zero.
pub fn init_params<T: Scalar>(dims: ModelDims, seed: u64) -> ParameterVector<T> {
    let layout = dims.layout();
    let mut params = ParameterVector::zeros(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Weight segments are drawn in declaration order so the byte stream, and
    // hence the vector, is a pure function of (dims, seed).
    for (name, fan_in) in [("w1", dims.input_dim()), ("w2", dims.hidden)] {
        let scale = (1.0 / fan_in as f64).sqrt();
        for v in params.segment_mut(name).expect("segment exists") {
            *v = T::from_config(rng.random_range(-scale..scale));
        }
    }
    params
}

/// Stacks `context` frames of left/right context per position, zero-padded.
fn stack_context<T: Scalar>(features: &Array2<T>, context: usize) -> Array2<T> {
    let (frames, dim) = features.dim();
    let width = 2 * context + 1;
    let mut out = Array2::zeros((frames, width * dim));
    for t in 0..frames {
        for (slot, offset) in (-(context as isize)..=context as isize).enumerate() {
            let src = t as isize + offset;
            if src < 0 || src >= frames as isize {
                continue; // zero padding at the edges
            }
            let src = src as usize;
            for d in 0..dim {
                out[[t, slot * dim + d]] = features[[src, d]];
            }
        }
    }
    out
}

/// Runs the model over a `T x D` frame matrix, returning `T x (V+1)` logits
/// and the trace needed by [`backward`].
///
/// In train mode, dropout is sampled from `seed` only (never from the
/// parameter values), so a trace's mask can be replayed exactly.
pub fn forward<T: Scalar>(
    params: &ParameterVector<T>,
    features: &Array2<T>,
    mode: ForwardMode,
    dropout_rate: f64,
    seed: u64,
) -> Result<(Array2<T>, ForwardTrace<T>)> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must be in [0, 1), got {dropout_rate}"
        )));
    }
    params.check_finite()?;
    let dims = infer_dims(params, features)?;
    let stacked = stack_context(features, dims.context);
    let w1 = weight_view(params, "w1", dims.input_dim(), dims.hidden)?;
    let b1 = params.segment("b1")?;
    let w2 = weight_view(params, "w2", dims.hidden, dims.output_dim())?;
    let b2 = params.segment("b2")?;

    let mut z1 = stacked.dot(&w1);
    for mut row in z1.axis_iter_mut(Axis(0)) {
        for (v, b) in row.iter_mut().zip(b1) {
            *v = *v + *b;
        }
    }
    let hidden = z1.mapv(|v| v.tanh());

    let mask_scale = if mode == ForwardMode::Train && dropout_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = T::from_config(1.0 / (1.0 - dropout_rate));
        let mut mask = Array2::zeros(hidden.dim());
        for v in mask.iter_mut() {
            if rng.random::<f64>() >= dropout_rate {
                *v = keep_scale;
            }
        }
        Some(mask)
    } else {
        None
    };

    let dropped = match &mask_scale {
        Some(mask) => &hidden * mask,
        None => hidden.clone(),
    };

    let mut logits = dropped.dot(&w2);
    for mut row in logits.axis_iter_mut(Axis(0)) {
        for (v, b) in row.iter_mut().zip(b2) {
            *v = *v + *b;
        }
    }

    let trace = ForwardTrace {
        params: params.clone(),
        stacked,
        hidden,
        mask_scale,
        mode,
    };
    Ok((logits, trace))
}

fn infer_dims<T: Scalar>(
    params: &ParameterVector<T>,
    features: &Array2<T>,
) -> Result<ModelDims> {
    let d = features.ncols();
    let h = params.layout().segment("b1")?.len;
    let out = params.layout().segment("b2")?.len;
    let w1_len = params.layout().segment("w1")?.len;
    if d == 0 || h == 0 || out < 2 || w1_len % (d * h) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "features ({d} dims) incompatible with parameter layout"
        )));
    }
    let width = w1_len / (d * h);
    if width % 2 != 1 {
        return Err(Error::ShapeMismatch(
            "context width inferred from layout is not odd".into(),
        ));
    }
    Ok(ModelDims {
        feature_dim: d,
        context: (width - 1) / 2,
        hidden: h,
        vocab: out - 1,
    })
}

/// Exact reverse-mode gradients of `sum(logits * dlogits)` with respect to
/// the parameters of the forward pass recorded in `trace`.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    dlogits: &Array2<T>,
) -> Result<ParameterVector<T>> {
    let (frames, hidden_dim) = trace.hidden.dim();
    let out_dim = trace.params.layout().segment("b2")?.len;
    if dlogits.dim() != (frames, out_dim) {
        return Err(Error::ShapeMismatch(format!(
            "dlogits {:?} vs expected ({frames}, {out_dim})",
            dlogits.dim()
        )));
    }
    let w2 = weight_view(&trace.params, "w2", hidden_dim, out_dim)?;

    let dropped = match &trace.mask_scale {
        Some(mask) => &trace.hidden * mask,
        None => trace.hidden.clone(),
    };

    let dw2 = dropped.t().dot(dlogits);
    let db2 = dlogits.sum_axis(Axis(0));
    let dh = dlogits.dot(&w2.t());
    let da = match &trace.mask_scale {
        Some(mask) => &dh * mask,
        None => dh,
    };
    let one = T::one();
    let dz1 = ndarray::Zip::from(&da)
        .and(&trace.hidden)
        .map_collect(|&g, &a| g * (one - a * a));
    let dw1 = trace.stacked.t().dot(&dz1);
    let db1 = dz1.sum_axis(Axis(0));

    let mut grads = ParameterVector::zeros(trace.params.layout().clone());
    fill_segment(&mut grads, "w1", dw1.iter())?;
    fill_segment(&mut grads, "b1", db1.iter())?;
    fill_segment(&mut grads, "w2", dw2.iter())?;
    fill_segment(&mut grads, "b2", db2.iter())?;
    Ok(grads)
}

fn fill_segment<'a, T: Scalar + 'a>(
    grads: &mut ParameterVector<T>,
    name: &str,
    values: impl Iterator<Item = &'a T>,
) -> Result<()> {
    let seg = grads.segment_mut(name)?;
    let mut n = 0;
    for (dst, src) in seg.iter_mut().zip(values) {
        *dst = *src;
        n += 1;
    }
    debug_assert_eq!(n, seg.len());
    Ok(())
}

// Convenience used by trainer and tests.
impl<T: Scalar> ForwardTrace<T> {
    pub fn frames(&self) -> usize {
        self.stacked.nrows()
    }
}
