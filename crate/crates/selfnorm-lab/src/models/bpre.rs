//! Supercritical branching process in an i.i.d. random environment.
//!
//! Each generation first draws an environment state, then every individual
//! independently draws an offspring count from that state's law. Offspring
//! laws put no mass on zero, so populations never shrink and the process is
//! supercritical. Finite supports keep every moment closed-form: the
//! offspring mean m, the environment variance σ² = Var(m₀), the mean
//! quenched variance τ² = E Var_env(Z₁), the log-mean μ = E ln m₀, and
//! ν² = Var(ln m₀) are all computed exactly from the model, never estimated
//! from simulated data.

use super::{clamp_scale, RngStream};
use crate::error::{LabError, Result};
use crate::stats_core::{CompensatedSum, EnvelopeParams, VarianceConcentration};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::{Binomial, StandardNormal};

pub const P0_MESSAGE: &str = "offspring law must give each individual at least one offspring";

#[derive(Clone, Debug, PartialEq)]
struct EnvState {
    weight: f64,
    /// Offspring law as (count, probability), counts ≥ 1, sorted ascending.
    offspring: Vec<(u64, f64)>,
    mean: f64,
    variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BpreModel {
    states: Vec<EnvState>,
}

/// Exact model-level moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvMoments {
    /// Offspring mean m = E Z₁.
    pub m: f64,
    /// σ² = Var(m₀), the variance of the environment mean.
    pub sigma2: f64,
    /// τ² = E Var_env(Z₁), the mean quenched offspring variance.
    pub tau2: f64,
    /// υ² = Var(Z₁) = σ² + τ².
    pub upsilon2: f64,
    /// μ = E ln m₀, the criticality parameter.
    pub mu: f64,
    /// ν² = Var(ln m₀).
    pub nu2: f64,
}

/// One simulated population path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Population sizes Z₀..Z_N; exact integers until `approx_from`.
    pub z: Vec<f64>,
    /// Realized environment means m₀..m_{N−1}.
    pub env_means: Vec<f64>,
    /// First step whose offspring sum used the matched-moment Gaussian
    /// approximation instead of exact per-individual summation.
    pub approx_from: Option<usize>,
}

impl BpreModel {
    /// Builds a model from (weight, offspring pmf) pairs. Weights and every
    /// pmf must sum to 1 within 1e-12; offspring counts must be ≥ 1.
    pub fn new(states: Vec<(f64, Vec<(u64, f64)>)>) -> Result<Self> {
        if states.is_empty() {
            return Err(LabError::Config(
                "environment needs at least one state".into(),
            ));
        }
        let mut weight_sum = CompensatedSum::new();
        let mut built = Vec::with_capacity(states.len());
        for (weight, pmf) in states {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(LabError::Config(format!(
                    "environment weight {weight} is not a probability"
                )));
            }
            weight_sum.add(weight);
            built.push(EnvState::new(weight, pmf)?);
        }
        if (weight_sum.value() - 1.0).abs() > 1e-12 {
            return Err(LabError::Config(format!(
                "environment weights sum to {}, expected 1 within 1e-12",
                weight_sum.value()
            )));
        }
        Ok(Self { states: built })
    }

    /// Single deterministic environment where every individual has exactly
    /// `offspring` children.
    pub fn deterministic(offspring: u64) -> Result<Self> {
        Self::new(vec![(1.0, vec![(offspring, 1.0)])])
    }

    /// Exact model moments.
    pub fn env_moments(&self) -> EnvMoments {
        let mut m = CompensatedSum::new();
        let mut m2 = CompensatedSum::new();
        let mut qvar = CompensatedSum::new();
        let mut z1sq = CompensatedSum::new();
        let mut lm = CompensatedSum::new();
        let mut lm2 = CompensatedSum::new();
        for s in &self.states {
            m.add(s.weight * s.mean);
            m2.add(s.weight * s.mean * s.mean);
            qvar.add(s.weight * s.variance);
            z1sq.add(s.weight * (s.variance + s.mean * s.mean));
            let l = s.mean.ln();
            lm.add(s.weight * l);
            lm2.add(s.weight * l * l);
        }
        let m = m.value();
        let sigma2 = (m2.value() - m * m).max(0.0);
        let tau2 = qvar.value();
        // Independent route: Var(Z₁) = E Z₁² − m²; equals σ² + τ² by the
        // law of total variance, which the tests assert.
        let upsilon2 = (z1sq.value() - m * m).max(0.0);
        let mu = lm.value();
        let nu2 = (lm2.value() - mu * mu).max(0.0);
        EnvMoments {
            m,
            sigma2,
            tau2,
            upsilon2,
            mu,
            nu2,
        }
    }

    /// E|Z₁ − m₀|^order: the mean absolute central moment of one
    /// individual's offspring count around its own environment mean.
    pub fn abs_central_offspring_moment(&self, order: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for s in &self.states {
            let mut inner = CompensatedSum::new();
            for &(k, p) in &s.offspring {
                inner.add(p * (k as f64 - s.mean).abs().powf(order));
            }
            acc.add(s.weight * inner.value());
        }
        acc.value()
    }

    /// E|m₀ − m|^order: the absolute moment of the environment mean around
    /// the offspring mean.
    pub fn abs_env_mean_moment(&self, order: f64) -> f64 {
        let m = self.env_moments().m;
        let mut acc = CompensatedSum::new();
        for s in &self.states {
            acc.add(s.weight * (s.mean - m).abs().powf(order));
        }
        acc.value()
    }
}

impl EnvState {
    fn new(weight: f64, mut pmf: Vec<(u64, f64)>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(LabError::Config("offspring law has empty support".into()));
        }
        pmf.sort_by_key(|(k, _)| *k);
        let mut mass = CompensatedSum::new();
        let mut mean = CompensatedSum::new();
        let mut m2 = CompensatedSum::new();
        let mut prev: Option<u64> = None;
        for &(k, p) in &pmf {
            if k == 0 {
                return Err(LabError::Config(P0_MESSAGE.into()));
            }
            if prev == Some(k) {
                return Err(LabError::Config(format!(
                    "offspring count {k} listed twice in one law"
                )));
            }
            prev = Some(k);
            if !(p >= 0.0) || !p.is_finite() {
                return Err(LabError::Config(format!(
                    "offspring probability {p} is not a probability"
                )));
            }
            mass.add(p);
            mean.add(p * k as f64);
            m2.add(p * (k as f64) * (k as f64));
        }
        if (mass.value() - 1.0).abs() > 1e-12 {
            return Err(LabError::Config(format!(
                "offspring probabilities sum to {}, expected 1 within 1e-12",
                mass.value()
            )));
        }
        let mean = mean.value();
        let variance = (m2.value() - mean * mean).max(0.0);
        Ok(Self {
            weight,
            offspring: pmf,
            mean,
            variance,
        })
    }
}

/// Closed-form model moments (free-function form of
/// [`BpreModel::env_moments`]).
pub fn env_moments(model: &BpreModel) -> EnvMoments {
    model.env_moments()
}

/// Sum of `count` i.i.d. draws from the state's offspring law, sampled by
/// the chain-rule factorization of the multinomial category counts:
/// N₁ ~ Bin(count, p₁), then N₂ | N₁ ~ Bin(count − N₁, p₂/(1−p₁)), and so
/// on. The joint law of the counts — hence of the sum Σ Nⱼ·kⱼ — is exactly
/// the law of summing `count` individual draws, at the cost of one binomial
/// per support point instead of one draw per individual.
fn offspring_sum_exact<R: Rng>(count: u64, state: &EnvState, rng: &mut R) -> f64 {
    let mut remaining = count;
    let mut remaining_mass = 1.0f64;
    let mut total = 0.0f64;
    let last = state.offspring.len() - 1;
    for (idx, &(k, p)) in state.offspring.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if idx == last {
            total += remaining as f64 * k as f64;
            break;
        }
        let cond = (p / remaining_mass).clamp(0.0, 1.0);
        let drawn = Binomial::new(remaining, cond)
            .expect("clamped probability is valid")
            .sample(rng);
        total += drawn as f64 * k as f64;
        remaining -= drawn;
        remaining_mass -= p;
    }
    total
}

/// Simulates Z₀..Z_horizon. While the population is at or below
/// `exact_threshold` the offspring sum is drawn from its exact law; above it
/// the step uses a Gaussian with the environment's exact conditional mean
/// and variance, rounded to the nearest integer and floored at the current
/// population. The first approximated step index is recorded.
pub fn sample_bpre(
    model: &BpreModel,
    horizon: usize,
    stream: RngStream,
    exact_threshold: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(LabError::Domain("horizon must be >= 1".into()));
    }
    if exact_threshold == 0 {
        return Err(LabError::Domain("exact_threshold must be >= 1".into()));
    }
    let mut rng = stream.rng();
    let weights = WeightedIndex::new(model.states.iter().map(|s| s.weight))
        .map_err(|e| LabError::Config(format!("invalid environment weights: {e}")))?;
    let mut z = Vec::with_capacity(horizon + 1);
    z.push(1.0f64);
    let mut env_means = Vec::with_capacity(horizon);
    let mut approx_from = None;
    for step in 0..horizon {
        let state = &model.states[weights.sample(&mut rng)];
        env_means.push(state.mean);
        let current = z[step];
        let next = if current <= exact_threshold as f64 {
            offspring_sum_exact(current as u64, state, &mut rng)
        } else {
            if approx_from.is_none() {
                approx_from = Some(step);
            }
            let gaussian: f64 = StandardNormal.sample(&mut rng);
            let proposed = current * state.mean + (current * state.variance).sqrt() * gaussian;
            proposed.round().max(current)
        };
        if !next.is_finite() {
            return Err(LabError::PopulationOverflow { step });
        }
        z.push(next);
    }
    Ok(Trajectory {
        z,
        env_means,
        approx_from,
    })
}

/// Conditional variance of the window's centered population ratios:
/// n·σ² + τ²·Σ_{k=n0}^{n0+n−1} 1/Z_k. Each term is
/// E[(Z_{k+1}/Z_k − m)² | generation k], split into environment variance σ²
/// plus quenched variance τ²/Z_k.
pub fn conditional_variance_bpre(
    traj: &Trajectory,
    mom: &EnvMoments,
    n0: usize,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(LabError::Domain("window length must be >= 1".into()));
    }
    if n0 + n > traj.z.len() {
        return Err(LabError::Domain(format!(
            "window [{n0}, {}] exceeds trajectory length {}",
            n0 + n - 1,
            traj.z.len()
        )));
    }
    let mut harmonic = CompensatedSum::new();
    for &zk in &traj.z[n0..n0 + n] {
        harmonic.add(1.0 / zk);
    }
    Ok(n as f64 * mom.sigma2 + mom.tau2 * harmonic.value())
}

/// V_n = Z_n / Π_{i<n} m_i, the population normalized by the realized
/// environment means — a mean-one martingale in n.
pub fn normalized_population(traj: &Trajectory, upto: usize) -> Result<f64> {
    if upto >= traj.z.len() {
        return Err(LabError::Domain(format!(
            "generation {upto} beyond trajectory length {}",
            traj.z.len()
        )));
    }
    if upto > traj.env_means.len() {
        return Err(LabError::Domain(format!(
            "environment record covers {} generations, need {upto}",
            traj.env_means.len()
        )));
    }
    let mut product = 1.0f64;
    for &m in &traj.env_means[..upto] {
        product *= m;
    }
    let v = traj.z[upto] / product;
    if !v.is_finite() {
        return Err(LabError::Domain(format!(
            "normalizing product overflowed at generation {upto}"
        )));
    }
    Ok(v)
}

/// Standardized log population (ln Z_n − n·μ)/(√n·ν). Asymptotically
/// standard normal; degenerate when the environment is deterministic.
pub fn log_population_z(traj: &Trajectory, mom: &EnvMoments, n: usize) -> Result<f64> {
    if mom.nu2 <= 0.0 {
        return Err(LabError::Degenerate(
            "environment log-mean variance is zero; standardized log population undefined".into(),
        ));
    }
    if n == 0 || n >= traj.z.len() {
        return Err(LabError::Domain(format!(
            "generation {n} not covered by trajectory of length {}",
            traj.z.len()
        )));
    }
    Ok((traj.z[n].ln() - n as f64 * mom.mu) / ((n as f64).sqrt() * mom.nu2.sqrt()))
}

/// Envelope scales for the self-normalized ratio statistics over a window
/// of length n: moment scale 1/√n and variance-concentration scale
/// √(ln n / n), both clamped into (0, 1/4].
pub fn envelope_inputs_bpre(
    n: usize,
    rho: f64,
    c: f64,
) -> Result<(EnvelopeParams, VarianceConcentration)> {
    if n == 0 {
        return Err(LabError::Domain("envelope inputs need n >= 1".into()));
    }
    let nf = n as f64;
    let gamma = clamp_scale(1.0 / nf.sqrt());
    let delta = clamp_scale((nf.ln() / nf).sqrt());
    Ok((
        EnvelopeParams::new(rho, gamma, delta, c)?,
        VarianceConcentration::Exponential,
    ))
}
