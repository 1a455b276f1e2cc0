//! A concrete stationary martingale difference sequence with one step of
//! memory: X_i = ε_i·(1 + β·ε_{i−1}) with i.i.d. Rademacher ε.
//!
//! Because ε_i is independent of the past and has mean zero,
//! E[X_i | past] = 0 exactly, yet consecutive increments share the factor
//! (1 + β·ε_{i−1}), so the sequence is dependent whenever β > 0. All
//! conditional moments are closed-form, which makes the block
//! self-normalization theory checkable: the conditional variance of a block
//! sum of length m deviates from its mean by exactly ±2β/(m(1+β²)).

use super::{clamp_scale, RngStream, SignBits};
use crate::error::{LabError, Result};
use crate::stats_core::{EnvelopeParams, Sample, VarianceConcentration};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MdsModel {
    beta: f64,
}

impl MdsModel {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(LabError::Config(format!(
                "mds beta must lie in [0, 1), got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Stationary variance E X_i² = 1 + β².
    pub fn variance(&self) -> f64 {
        1.0 + self.beta * self.beta
    }

    /// Concentration scale of length-m block sums: the conditional variance
    /// given the pre-block past is (1+βε₀)² + (m−1)(1+β²), whose relative
    /// deviation from m(1+β²) is exactly ±2β/(m(1+β²)). Returns that
    /// sup-norm.
    pub fn block_scale(&self, m: usize) -> Result<f64> {
        if m == 0 {
            return Err(LabError::Domain("block length m must be >= 1".into()));
        }
        Ok(2.0 * self.beta / (m as f64 * self.variance()))
    }

    /// Envelope scales for the block self-normalized statistic with block
    /// length m on samples of length n: k = floor(n/m) blocks give moment
    /// scale 1/√k and variance-concentration scale block_scale(m)·√(ln k),
    /// both clamped into (0, 1/4].
    pub fn block_envelope_inputs(
        &self,
        n: usize,
        m: usize,
        rho: f64,
        c: f64,
    ) -> Result<(EnvelopeParams, VarianceConcentration)> {
        if m == 0 || n < m {
            return Err(LabError::Domain(format!(
                "need 1 <= m <= n, got m = {m}, n = {n}"
            )));
        }
        let k = (n / m) as f64;
        let gamma = clamp_scale(1.0 / k.sqrt());
        let delta = clamp_scale(self.block_scale(m)? * k.ln().sqrt());
        Ok((
            EnvelopeParams::new(rho, gamma, delta, c)?,
            VarianceConcentration::Exponential,
        ))
    }
}

/// Draws a stationary path X_1..X_n. Consumes n+1 Rademacher signs
/// (ε_0..ε_n) from the stream, least significant bit of each 64-bit block
/// first.
pub fn sample_mds(model: &MdsModel, n: usize, stream: RngStream) -> Result<Sample> {
    if n == 0 {
        return Err(LabError::Domain("sample length must be >= 1".into()));
    }
    let mut rng = stream.rng();
    let mut bits = SignBits::new();
    let beta = model.beta;
    let mut prev = bits.next(&mut rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let eps = bits.next(&mut rng);
        out.push(eps * (1.0 + beta * prev));
        prev = eps;
    }
    Sample::new(out)
}
