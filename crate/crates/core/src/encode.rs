//! Input encodings: per-slot index vectors and the sinusoidal feature lift.

use crate::error::{Error, Result};
use crate::geom::MAX_OBJECTS;
use crate::scalar::Real;

/// Octave frequencies `2^k * pi` for `k = 0..num_frequencies`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftConfig {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            num_frequencies: 5,
            include_input: true,
        }
    }
}

impl LiftConfig {
    /// Features emitted per input scalar.
    pub fn block_len(&self) -> usize {
        usize::from(self.include_input) + 2 * self.num_frequencies
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.block_len()
    }
}

/// Lifts each scalar `p` to `[p, sin(pi p), cos(pi p), ..., sin(2^(K-1) pi p), cos(2^(K-1) pi p)]`
/// and concatenates the blocks in input order.
pub fn sinusoidal_lift<T: Real>(v: &[T], cfg: &LiftConfig) -> Result<Vec<T>> {
    if cfg.num_frequencies == 0 {
        return Err(Error::Config("num_frequencies must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(cfg.output_dim(v.len()));
    lift_into(v, cfg, &mut out)?;
    Ok(out)
}

/// Appends the lift of `v` to `out`.
pub fn lift_into<T: Real>(v: &[T], cfg: &LiftConfig, out: &mut Vec<T>) -> Result<()> {
    for (i, &p) in v.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFinite(i));
        }
        if cfg.include_input {
            out.push(p);
        }
        let mut freq = T::PI();
        for _ in 0..cfg.num_frequencies {
            let (s, c) = (freq * p).sin_cos();
            out.push(s);
            out.push(c);
            freq = freq + freq;
        }
    }
    Ok(())
}

/// Fixed transformer position vector for `slot`: even entries `sin(slot / 10000^(2i/d))`,
/// odd entries the matching cosine.
pub fn index_encoding<T: Real>(slot: usize, d_model: usize) -> Result<Vec<T>> {
    if slot >= MAX_OBJECTS {
        return Err(Error::SlotOutOfRange {
            slot,
            max: MAX_OBJECTS,
        });
    }
    Ok(index_encoding_unchecked(slot, d_model))
}

pub(crate) fn index_encoding_unchecked<T: Real>(slot: usize, d_model: usize) -> Vec<T> {
    (0..d_model)
        .map(|j| {
            let pair = (j / 2) as f64;
            let angle = slot as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            T::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}
