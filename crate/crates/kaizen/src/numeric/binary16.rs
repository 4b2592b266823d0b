//! IEEE 754 binary16 rounding emulation.
//!
//! Values stay in the native scalar type; quantization rounds to the nearest
//! representable binary16 value (ties to even) and widens back. This
//! reproduces half-precision accumulation effects deterministically without
//! hardware fp16.

use crate::error::{Error, Result};
use crate::Scalar;

const MAX_BINARY16: f64 = 65504.0;

/// Rounds `x` to the nearest IEEE 754 binary16 value and widens it back.
///
/// Overflow past the finite binary16 range is a hard error: training must
/// abort rather than silently saturate.
pub fn quantize_binary16<T: Scalar>(x: T) -> Result<T> {
    let q = quantize_f64(x.as_f64())?;
    // Binary16 values are exactly representable in both f32 and f64.
    Ok(T::from_config(q))
}

fn quantize_f64(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFiniteValue { value: x });
    }
    if x == 0.0 {
        return Ok(x); // preserves signed zero
    }
    let mag = x.abs();
    // Exponent field of the f64: exact floor(log2(mag)) for normal values;
    // subnormal f64 inputs fall far below the binary16 subnormal range and
    // take the 2^-24 quantum branch, rounding to zero.
    let exp = ((mag.to_bits() >> 52) & 0x7ff) as i64 - 1023;
    // Spacing of binary16 values around mag: 2^(e-10) for normals, 2^-24 in
    // the subnormal range. Scaling by a power of two is exact.
    let q_exp = (exp - 10).max(-24);
    let quantum = f64::from_bits(((q_exp + 1023) as u64) << 52);
    let steps = (mag / quantum).round_ties_even();
    let q = steps * quantum;
    if q > MAX_BINARY16 {
        return Err(Error::Binary16Overflow { value: x });
    }
    Ok(if x < 0.0 { -q } else { q })
}
