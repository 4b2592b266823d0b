//! The continuously improving teacher: EMA accumulation of student
//! parameters, half-life algebra, and the precision policy.
//!
//! The teacher master is updated every `delta` optimizer steps as
//!
//! ```text
//! master <- (1 - alpha) * master + alpha * student
//! ```
//!
//! always element-wise in the full-width scalar type, regardless of the
//! precision mode. `emulated16` only affects [`teacher_snapshot`], which
//! casts the master down to binary16 for the teacher's forward pass — the
//! master itself is never quantized. [`ema_update_lowprecision`] is the
//! deliberately broken variant (master quantized after every update) used by
//! the precision-ablation harness to demonstrate how half-precision
//! accumulation freezes the teacher.
//!
//! At the limits: `alpha = 0` freezes the teacher (single-generation
//! pseudo-labeling), `alpha = 1` copies the student wholesale every `delta`
//! steps (iterative pseudo-labeling).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{quantize_binary16, ParameterVector};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// Snapshots return the master unchanged.
    Master64,
    /// Snapshots are cast to binary16; the master stays full precision.
    Emulated16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    /// Discount factor: weight on the newest student parameters.
    pub alpha: f64,
    /// Update period in optimizer steps.
    pub delta: u64,
    #[serde(default = "default_precision")]
    pub precision_mode: PrecisionMode,
    /// Optimizer step at which accumulation begins.
    #[serde(default)]
    pub start_step: u64,
}

fn default_precision() -> PrecisionMode {
    PrecisionMode::Master64
}

impl EmaConfig {
    pub fn new(alpha: f64, delta: u64) -> Self {
        EmaConfig {
            alpha,
            delta,
            precision_mode: PrecisionMode::Master64,
            start_step: 0,
        }
    }

    /// Decay factor `lambda = 1 - alpha`; derived, never stored.
    pub fn decay(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "ema alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.delta == 0 {
            return Err(Error::InvalidConfig("ema delta must be >= 1".into()));
        }
        Ok(())
    }
}

/// Teacher master parameters plus EMA configuration and update counter.
#[derive(Debug, Clone)]
pub struct EmaState<T> {
    master: ParameterVector<T>,
    update_count: u64,
    config: EmaConfig,
}

impl<T: Scalar> EmaState<T> {
    pub fn master(&self) -> &ParameterVector<T> {
        &self.master
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn config(&self) -> &EmaConfig {
        &self.config
    }

    /// Rebuilds state from checkpointed pieces.
    pub fn from_parts(
        master: ParameterVector<T>,
        update_count: u64,
        config: EmaConfig,
    ) -> Result<Self> {
        config.validate()?;
        master.check_finite()?;
        Ok(EmaState {
            master,
            update_count,
            config,
        })
    }
}

/// Starts EMA accumulation: the master is a copy of the student.
pub fn ema_init<T: Scalar>(
    student: &ParameterVector<T>,
    config: EmaConfig,
) -> Result<EmaState<T>> {
    config.validate()?;
    student.check_finite()?;
    Ok(EmaState {
        master: student.clone(),
        update_count: 0,
        config,
    })
}

/// Applies one EMA update if `step` lands on the update grid
/// (`(step - start_step) % delta == 0`); otherwise leaves the state
/// unchanged. Returns whether the update was applied.
///
/// Accumulation is always element-wise in the full-width scalar type. The
/// `alpha = 0` and `alpha = 1` limits are handled exactly (bitwise frozen
/// master / bitwise student copy).
pub fn ema_update<T: Scalar>(
    state: &mut EmaState<T>,
    student: &ParameterVector<T>,
    step: u64,
) -> Result<bool> {
    ema_update_impl(state, student, step, false)
}

/// Identical to [`ema_update`] except the master is quantized to binary16
/// after every applied update, so accumulation is effectively half
/// precision. Sub-half-ulp updates vanish: with a small `alpha` the master
/// becomes a fixed point while the full-precision update keeps moving.
pub fn ema_update_lowprecision<T: Scalar>(
    state: &mut EmaState<T>,
    student: &ParameterVector<T>,
    step: u64,
) -> Result<bool> {
    ema_update_impl(state, student, step, true)
}

fn ema_update_impl<T: Scalar>(
    state: &mut EmaState<T>,
    student: &ParameterVector<T>,
    step: u64,
    quantize_master: bool,
) -> Result<bool> {
    if step < state.config.start_step {
        return Err(Error::InvalidConfig(format!(
            "ema_update at step {} before start_step {}",
            step, state.config.start_step
        )));
    }
    if (step - state.config.start_step) % state.config.delta != 0 {
        return Ok(false);
    }
    state.master.check_same_layout(student, "ema master vs student")?;
    student.check_finite()?;

    let alpha = state.config.alpha;
    if alpha == 1.0 {
        state.master.values_mut().copy_from_slice(student.values());
    } else if alpha > 0.0 {
        let a = T::from_config(alpha);
        let lambda = T::from_config(1.0 - alpha);
        let m = state.master.values_mut();
        let s = student.values();
        for i in 0..s.len() {
            m[i] = lambda * m[i] + a * s[i];
        }
    }
    // alpha == 0: master bitwise frozen.

    if quantize_master && alpha > 0.0 {
        for v in state.master.values_mut() {
            *v = quantize_binary16(*v)?;
        }
    }
    state.update_count += 1;
    Ok(true)
}

/// Snapshot of the teacher parameters used for the forward pass.
///
/// `master64` returns the master as-is; `emulated16` casts every element to
/// binary16 (the master is never modified).
pub fn teacher_snapshot<T: Scalar>(state: &EmaState<T>) -> Result<ParameterVector<T>> {
    match state.config.precision_mode {
        PrecisionMode::Master64 => Ok(state.master.clone()),
        PrecisionMode::Emulated16 => {
            let mut snap = state.master.clone();
            for v in snap.values_mut() {
                *v = quantize_binary16(*v)?;
            }
            Ok(snap)
        }
    }
}

/// Half-life in optimizer steps: the lag at which an unrolled student's
/// contribution weight halves. Undefined at `alpha` in `{0, 1}`.
pub fn half_life(alpha: f64, delta: u64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::HalfLifeUndefined { alpha });
    }
    Ok(-(delta as f64) * std::f64::consts::LN_2 / (1.0 - alpha).ln())
}

/// Half-life extended to the limits for reporting: `alpha = 0` has an
/// infinite half-life (frozen teacher), `alpha = 1` is bucketed by its
/// replacement period `delta` (every snapshot lives exactly `delta` steps).
pub fn effective_half_life(alpha: f64, delta: u64) -> f64 {
    if alpha <= 0.0 {
        f64::INFINITY
    } else if alpha >= 1.0 {
        delta as f64
    } else {
        half_life(alpha, delta).expect("alpha in (0,1)")
    }
}

/// Expands the EMA recursion after `n` applied updates into per-student
/// weights: `weights[i] = alpha * (1-alpha)^i` on the i-th most recent
/// student, plus `residual = (1-alpha)^n` on the initial master. The weights
/// and residual sum to one.
pub fn unrolled_weights(alpha: f64, n: usize) -> Result<(Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let lambda = 1.0 - alpha;
    let weights: Vec<f64> = (0..n).map(|i| alpha * lambda.powi(i as i32)).collect();
    let residual = lambda.powi(n as i32);
    Ok((weights, residual))
}
