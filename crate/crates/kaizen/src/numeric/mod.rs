//! Deterministic numeric primitives: parameter containers, IEEE binary16
//! rounding emulation, the Adam optimizer, and learning-rate schedules.

mod adam;
mod binary16;
mod params;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use binary16::quantize_binary16;
pub use params::{Layout, ParameterVector, Segment};
pub use schedule::{LrSchedule, ScheduleShape};
