//! Rotary position embedding over interleaved dimension pairs.

use crate::error::{Error, Result};

/// Rotate pair `(2i, 2i+1)` by `position * base^(-2i/d)`.
///
/// Angles are evaluated in f64 and the rotation itself in f32.
pub fn rotate_in_place(v: &mut [f32], position: usize, base: f32) {
    let d = v.len();
    let base = base as f64;
    for i in 0..d / 2 {
        let inv_freq = base.powf(-((2 * i) as f64) / d as f64);
        let angle = position as f64 * inv_freq;
        let (sin, cos) = angle.sin_cos();
        let (sin, cos) = (sin as f32, cos as f32);
        let a = v[2 * i];
        let b = v[2 * i + 1];
        v[2 * i] = a * cos - b * sin;
        v[2 * i + 1] = a * sin + b * cos;
    }
}

/// Return a rotated copy of `vector` at `position`.
pub fn apply_rope(vector: &[f32], position: usize, rope_base: f32) -> Result<Vec<f32>> {
    if !vector.len().is_multiple_of(2) {
        return Err(Error::config(
            "d_head",
            format!("rotary embedding needs an even head dimension, got {}", vector.len()),
        ));
    }
    let mut out = vector.to_vec();
    rotate_in_place(&mut out, position, rope_base);
    Ok(out)
}
