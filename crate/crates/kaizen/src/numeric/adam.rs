//! Adam with bias correction and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ParameterVector;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Global gradient-norm clip threshold, applied before moment updates.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_clip_norm() -> f64 {
    10.0
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            clip_norm: default_clip_norm(),
        }
    }
}

/// First/second moment estimates plus the applied-update counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    first_moment: ParameterVector<T>,
    second_moment: ParameterVector<T>,
    step_count: u64,
    config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(layout: std::sync::Arc<crate::numeric::Layout>, config: AdamConfig) -> Self {
        AdamState {
            first_moment: ParameterVector::zeros(layout.clone()),
            second_moment: ParameterVector::zeros(layout),
            step_count: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moment(&self) -> &ParameterVector<T> {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &ParameterVector<T> {
        &self.second_moment
    }

    /// Rebuilds state from checkpointed pieces.
    pub fn from_parts(
        first_moment: ParameterVector<T>,
        second_moment: ParameterVector<T>,
        step_count: u64,
        config: AdamConfig,
    ) -> Result<Self> {
        first_moment.check_same_layout(&second_moment, "adam moment layouts")?;
        Ok(AdamState {
            first_moment,
            second_moment,
            step_count,
            config,
        })
    }
}

/// One Adam update, in place.
///
/// The gradient is clipped to `config.clip_norm` in global L2 norm first,
/// then biased moments are updated and the bias-corrected step is applied.
/// With `lr == 0` the parameters are left untouched (bitwise) while the
/// moments and step count still advance.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterVector<T>,
    grads: &ParameterVector<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::InvalidConfig(format!("negative learning rate {lr}")));
    }
    params.check_same_layout(grads, "params vs grads")?;
    params.check_same_layout(&state.first_moment, "params vs adam moments")?;
    grads.check_finite()?;

    let norm = grads.l2_norm();
    let scale = if norm > state.config.clip_norm {
        state.config.clip_norm / norm
    } else {
        1.0
    };
    let scale_t = T::from_config(scale);

    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::from_config(state.config.beta1);
    let b2 = T::from_config(state.config.beta2);
    let one = T::one();
    let bc1 = T::from_config(1.0 - state.config.beta1.powi(t));
    let bc2 = T::from_config(1.0 - state.config.beta2.powi(t));
    let eps = T::from_config(state.config.epsilon);
    let lr_t = T::from_config(lr);

    let m = state.first_moment.values_mut();
    let v = state.second_moment.values_mut();
    let g = grads.values();
    for i in 0..g.len() {
        let gi = g[i] * scale_t;
        m[i] = b1 * m[i] + (one - b1) * gi;
        v[i] = b2 * v[i] + (one - b2) * gi * gi;
    }
    if lr > 0.0 {
        let p = params.values_mut();
        for i in 0..p.len() {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        params.check_finite()?;
    }
    Ok(())
}
