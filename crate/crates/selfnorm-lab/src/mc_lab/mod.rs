//! Monte Carlo experiment engine.
//!
//! This module turns a declarative [`ExperimentConfig`] into tail-probability
//! curves and distributional diagnostics for self-normalized statistics.  The
//! engine is deterministic for a fixed `(seed, config)` pair regardless of how
//! many worker threads execute it: every replication derives its generator
//! from the replication index alone, and the parallel reduction merges
//! integer hit counts, which is associative and commutative.
//!
//! The per-point columns mirror what the report layer writes to CSV: hit
//! count, point estimate `phat`, a 95% Wilson score interval, the ratio of
//! `phat` to the standard normal tail, the log of that ratio, and the
//! theoretical envelope bound on the log-ratio.

mod diagnostics;

pub use diagnostics::{
    coverage_experiment, kolmogorov_distance, ks_distance_to_normal, ln_z_tail_probe, mdp_diagnostic,
    mdp_rate, probe_variance_concentration, CoverageReport, ExceedancePoint, KolmogorovDistance,
    LnZTailCurve, MdpDiagnostic, MdpPoint, ProbePoint, VarianceProbe,
};

use crate::bpre_infer::{n_statistic, s_statistic, window_from_trajectory};
use crate::error::{LabError, Result};
use crate::gauss::{phi_quantile, phi_tail};
use crate::models::{
    env_moments, envelope_inputs_bpre, sample_bpre, sample_iid, sample_mds, BpreModel, IidLaw,
    IidModel, MdsModel, RngStream,
};
use crate::stats_core::{
    block_self_normalized, log_ratio_envelope, self_normalized, student_t, EnvelopeParams, Sample,
    VarianceConcentration,
};
use rayon::prelude::*;

/// Largest exponent for which exhaustive sign enumeration is permitted
/// (`2^24` replications is ~17 million evaluations).
const MAX_ENUMERATION_BITS: usize = 24;

/// Data-generating process for one experiment.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    /// Independent, identically distributed increments.
    Iid(IidModel),
    /// One-step dependent martingale-difference increments.
    Mds(MdsModel),
    /// Branching process in random environment.
    Bpre {
        model: BpreModel,
        /// Population size up to which reproduction is simulated exactly.
        exact_threshold: u64,
    },
}

/// Statistic evaluated on each simulated replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatisticKind {
    /// Self-normalized sum `S_n / sqrt([S]_n)`.
    W,
    /// Student t statistic.
    T,
    /// Self-normalized sum of non-overlapping block sums of length `m`.
    WBlock { m: usize },
    /// Studentized mean-offspring estimator of a population window.
    N,
    /// Known-variance normalized estimator of a population window.
    S,
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StatisticKind::W => write!(f, "W"),
            StatisticKind::T => write!(f, "T"),
            StatisticKind::WBlock { m } => write!(f, "W_block({m})"),
            StatisticKind::N => write!(f, "N"),
            StatisticKind::S => write!(f, "S"),
        }
    }
}

/// Which tail of the statistic's distribution is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    /// Events `{stat >= x}`.
    Upper,
    /// Events `{stat <= -x}`.
    Lower,
}

/// What to do when a replication yields a degenerate statistic
/// (for example, a zero empirical variance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneratePolicy {
    /// Abort the experiment with an error.
    Error,
    /// Drop the replication and report the count.
    SkipAndReport,
}

/// Full description of one Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub statistic: StatisticKind,
    /// Sample size (number of increments, or population-window length).
    pub n: usize,
    /// First generation of the observation window (population models only).
    pub n0: usize,
    /// Number of Monte Carlo replications.
    pub replications: u64,
    /// Tail thresholds, strictly increasing and non-negative.
    pub x_grid: Vec<f64>,
    /// Base seed; replication `r` uses stream `r` of this seed.
    pub seed: u64,
    /// Grid points whose expected hit count `R * phi_tail(x)` falls below
    /// this floor are excluded from the curve and reported.  Zero disables
    /// the rule.
    pub min_expected_hits: f64,
    pub tail: TailSide,
    pub degenerate: DegeneratePolicy,
    /// Replace sampling by exhaustive enumeration of all `2^n` sign vectors.
    /// Requires a symmetric Bernoulli model and `replications == 2^n`.
    pub enumerate: bool,
    /// Moment exponent used by the envelope column.
    pub rho: f64,
    /// Multiplicative constant used by the envelope column.
    pub envelope_c: f64,
}

impl ExperimentConfig {
    /// A configuration with the documented defaults filled in: upper tail,
    /// skip-and-report degeneracy handling, an expected-hit floor of 50,
    /// `rho = 1`, and a unit envelope constant.
    pub fn new(
        model: ModelSpec,
        statistic: StatisticKind,
        n: usize,
        replications: u64,
        x_grid: Vec<f64>,
        seed: u64,
    ) -> Self {
        ExperimentConfig {
            model,
            statistic,
            n,
            n0: 0,
            replications,
            x_grid,
            seed,
            min_expected_hits: 50.0,
            tail: TailSide::Upper,
            degenerate: DegeneratePolicy::SkipAndReport,
            enumerate: false,
            rho: 1.0,
            envelope_c: 1.0,
        }
    }

    /// Checks every structural requirement that does not depend on simulated
    /// data, so the engine can assume a well-formed configuration.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(LabError::Config(
                "replications must be at least 1".into(),
            ));
        }
        if self.n == 0 {
            return Err(LabError::Config("sample size n must be at least 1".into()));
        }
        if self.x_grid.is_empty() {
            return Err(LabError::Config("x_grid must be non-empty".into()));
        }
        for pair in self.x_grid.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(LabError::Config(
                    "x_grid must be strictly increasing".into(),
                ));
            }
        }
        let first = self.x_grid[0];
        let last = *self.x_grid.last().expect("non-empty grid");
        if !first.is_finite() || first < 0.0 {
            return Err(LabError::Config(
                "x_grid entries must be finite and non-negative".into(),
            ));
        }
        if last > crate::gauss::MAX_ABS_Z {
            return Err(LabError::Config(format!(
                "x_grid entries must not exceed {}",
                crate::gauss::MAX_ABS_Z
            )));
        }
        if !self.min_expected_hits.is_finite() || self.min_expected_hits < 0.0 {
            return Err(LabError::Config(
                "min_expected_hits must be finite and non-negative".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(LabError::Config(
                "envelope moment exponent rho must lie in (0, 1]".into(),
            ));
        }
        if !(self.envelope_c > 0.0) || !self.envelope_c.is_finite() {
            return Err(LabError::Config(
                "envelope constant must be positive and finite".into(),
            ));
        }
        match (&self.model, self.statistic) {
            (ModelSpec::Iid(_) | ModelSpec::Mds(_), StatisticKind::N | StatisticKind::S) => {
                return Err(LabError::Unsupported(
                    "statistics N and S require a branching-process model".into(),
                ));
            }
            (ModelSpec::Bpre { .. }, StatisticKind::W | StatisticKind::T | StatisticKind::WBlock { .. }) => {
                return Err(LabError::Unsupported(
                    "statistics W, T, and W_block require increment models".into(),
                ));
            }
            _ => {}
        }
        match self.statistic {
            StatisticKind::T => {
                if self.n < 2 {
                    return Err(LabError::Config(
                        "the Student t statistic requires n >= 2".into(),
                    ));
                }
            }
            StatisticKind::WBlock { m } => {
                if m == 0 || m > self.n {
                    return Err(LabError::Config(
                        "block length must satisfy 1 <= m <= n".into(),
                    ));
                }
            }
            StatisticKind::N | StatisticKind::S => {
                if self.n < 2 {
                    return Err(LabError::Config(
                        "population-window statistics require n >= 2".into(),
                    ));
                }
            }
            _ => {}
        }
        if let (ModelSpec::Bpre { model, .. }, StatisticKind::S) = (&self.model, self.statistic) {
            let mom = env_moments(model);
            if mom.sigma2 <= 0.0 {
                return Err(LabError::Config(
                    "statistic S requires a positive environment variance".into(),
                ));
            }
        }
        if self.enumerate {
            match &self.model {
                ModelSpec::Iid(m) if matches!(m.law(), IidLaw::Rademacher) => {}
                _ => {
                    return Err(LabError::Config(
                        "enumeration requires the symmetric Bernoulli model".into(),
                    ));
                }
            }
            if self.n > MAX_ENUMERATION_BITS {
                return Err(LabError::Config(format!(
                    "enumeration supports n <= {MAX_ENUMERATION_BITS}"
                )));
            }
            if self.replications != 1u64 << self.n {
                return Err(LabError::Config(
                    "enumeration requires replications == 2^n".into(),
                ));
            }
        }
        Ok(())
    }

    /// The envelope inputs implied by the model and statistic, in the same
    /// units as the tail grid.
    pub fn envelope_inputs(&self) -> Result<(EnvelopeParams, VarianceConcentration)> {
        match (&self.model, self.statistic) {
            (ModelSpec::Iid(_), StatisticKind::WBlock { m }) => {
                // Block sums of i.i.d. increments: the universal block scale
                // 1/sqrt(k) for the moment term and the deterministic
                // conditional-variance scale 1/n spread over the k blocks.
                let k = self.n / m;
                let gamma = crate::models::clamp_scale(1.0 / (k as f64).sqrt());
                let delta =
                    crate::models::clamp_scale((k as f64).ln().sqrt() / self.n as f64);
                Ok((
                    EnvelopeParams::new(self.rho, gamma, delta, self.envelope_c)?,
                    VarianceConcentration::Exponential,
                ))
            }
            (ModelSpec::Iid(model_ref), _) => {
                model_ref.envelope_inputs(self.n, self.rho, self.envelope_c)
            }
            (ModelSpec::Mds(model), statistic) => {
                let m = match statistic {
                    StatisticKind::WBlock { m } => m,
                    _ => 1,
                };
                model.block_envelope_inputs(self.n, m, self.rho, self.envelope_c)
            }
            (ModelSpec::Bpre { .. }, _) => {
                envelope_inputs_bpre(self.n, self.rho, self.envelope_c)
            }
        }
    }
}

/// One estimated grid point of a tail curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TailPoint {
    pub x: f64,
    /// Number of replications whose statistic landed in the tail event.
    pub count: u64,
    /// `count / replications`.
    pub phat: f64,
    /// Lower 95% Wilson score bound for the tail probability.
    pub wilson_lo: f64,
    /// Upper 95% Wilson score bound for the tail probability.
    pub wilson_hi: f64,
    /// `phat / phi_tail(x)`.
    pub ratio: f64,
    /// `ln(phat) - ln(phi_tail(x))`; absent when the count is zero.
    pub log_ratio: Option<f64>,
    /// Theoretical bound on `|log_ratio|` for the configured envelope inputs.
    pub envelope: f64,
}

/// A grid point dropped by the expected-hit floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedPoint {
    pub x: f64,
    /// `replications * phi_tail(x)` at the time of exclusion.
    pub expected_hits: f64,
}

/// Result of [`estimate_tail_curve`].
#[derive(Debug, Clone)]
pub struct TailCurve {
    pub points: Vec<TailPoint>,
    pub excluded: Vec<ExcludedPoint>,
    pub replications: u64,
    /// Replications dropped under [`DegeneratePolicy::SkipAndReport`].
    pub degenerate: u64,
    pub n: usize,
    pub seed: u64,
    pub statistic: String,
    pub tail: TailSide,
    pub envelope_params: EnvelopeParams,
    pub regime: VarianceConcentration,
}

/// 95% two-sided Wilson score interval for a binomial proportion.
pub fn wilson_bounds(count: u64, total: u64) -> Result<(f64, f64)> {
    if total == 0 {
        return Err(LabError::Domain(
            "Wilson bounds require at least one trial".into(),
        ));
    }
    let z = phi_quantile(0.975)?;
    let n = total as f64;
    let p = count as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Maps a statistic value to the orientation in which "hit" means
/// `oriented value >= x`.
fn oriented(stat: f64, tail: TailSide) -> f64 {
    match tail {
        TailSide::Upper => stat,
        TailSide::Lower => -stat,
    }
}

/// Routes a degenerate-statistic error through the configured policy.
fn apply_policy(err: LabError, policy: DegeneratePolicy) -> Result<Option<f64>> {
    match (policy, &err) {
        (DegeneratePolicy::SkipAndReport, LabError::Degenerate(_)) => Ok(None),
        _ => Err(err),
    }
}

/// Evaluates the configured statistic on one increment sample.
fn eval_sample(statistic: StatisticKind, sample: &Sample) -> Result<f64> {
    match statistic {
        StatisticKind::W => Ok(self_normalized(sample)?.w),
        StatisticKind::T => student_t(sample),
        StatisticKind::WBlock { m } => Ok(block_self_normalized(sample, m)?.w),
        StatisticKind::N | StatisticKind::S => Err(LabError::Unsupported(
            "population statistics cannot be evaluated on increment samples".into(),
        )),
    }
}

/// Evaluates one replication.  `Ok(None)` marks a skipped degenerate
/// replication; hard errors (overflow, configuration) propagate.
pub(crate) fn eval_replication(cfg: &ExperimentConfig, rep: u64) -> Result<Option<f64>> {
    let stream = RngStream::new(cfg.seed, rep);
    match &cfg.model {
        ModelSpec::Iid(model) => {
            let sample = sample_iid(model, cfg.n, stream)?;
            match eval_sample(cfg.statistic, &sample) {
                Ok(v) => Ok(Some(v)),
                Err(e) => apply_policy(e, cfg.degenerate),
            }
        }
        ModelSpec::Mds(model) => {
            let sample = sample_mds(model, cfg.n, stream)?;
            match eval_sample(cfg.statistic, &sample) {
                Ok(v) => Ok(Some(v)),
                Err(e) => apply_policy(e, cfg.degenerate),
            }
        }
        ModelSpec::Bpre {
            model,
            exact_threshold,
        } => {
            let mom = env_moments(model);
            let traj = sample_bpre(model, cfg.n0 + cfg.n, stream, *exact_threshold)?;
            let window = window_from_trajectory(&traj, cfg.n0, cfg.n)?;
            let value = match cfg.statistic {
                StatisticKind::N => n_statistic(&window, mom.m),
                StatisticKind::S => s_statistic(&window, mom.m, mom.sigma2.sqrt()),
                _ => Err(LabError::Unsupported(
                    "increment statistics cannot be evaluated on population windows".into(),
                )),
            };
            match value {
                Ok(v) => Ok(Some(v)),
                Err(e) => apply_policy(e, cfg.degenerate),
            }
        }
    }
}

/// Evaluates the statistic on one exhaustively enumerated sign vector.
fn eval_enumerated(cfg: &ExperimentConfig, pattern: u64) -> Result<f64> {
    let increments: Vec<f64> = (0..cfg.n)
        .map(|bit| if (pattern >> bit) & 1 == 1 { 1.0 } else { -1.0 })
        .collect();
    eval_sample(cfg.statistic, &Sample::new(increments)?)
}

/// Runs the replication loop and merges per-threshold hit counts.
///
/// The reduction is over integers, so the result is identical for any number
/// of worker threads.  Returns the hit count per grid entry and the number of
/// degenerate replications that were skipped.
pub(crate) fn run_counts(cfg: &ExperimentConfig, grid: &[f64]) -> Result<(Vec<u64>, u64)> {
    let zero = || (vec![0u64; grid.len()], 0u64);
    let merge = |mut a: (Vec<u64>, u64), b: (Vec<u64>, u64)| -> Result<(Vec<u64>, u64)> {
        for (x, y) in a.0.iter_mut().zip(b.0) {
            *x += y;
        }
        a.1 += b.1;
        Ok(a)
    };
    let tally = |mut acc: (Vec<u64>, u64), value: Option<f64>| {
        match value {
            None => acc.1 += 1,
            Some(stat) => {
                let v = oriented(stat, cfg.tail);
                // The grid is strictly increasing, so the hit set
                // {x : x <= v} is exactly the first `hits` entries.
                let hits = grid.partition_point(|x| *x <= v);
                for c in &mut acc.0[..hits] {
                    *c += 1;
                }
            }
        }
        acc
    };
    if cfg.enumerate {
        (0..cfg.replications)
            .into_par_iter()
            .try_fold(zero, |acc, pattern| -> Result<(Vec<u64>, u64)> {
                Ok(tally(acc, Some(eval_enumerated(cfg, pattern)?)))
            })
            .try_reduce(zero, merge)
    } else {
        (0..cfg.replications)
            .into_par_iter()
            .try_fold(zero, |acc, rep| -> Result<(Vec<u64>, u64)> {
                Ok(tally(acc, eval_replication(cfg, rep)?))
            })
            .try_reduce(zero, merge)
    }
}

/// Collects the statistic value of every replication in replication order,
/// together with the number of degenerate replications that were skipped.
pub(crate) fn run_values(cfg: &ExperimentConfig) -> Result<(Vec<f64>, u64)> {
    let raw: Vec<Option<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| eval_replication(cfg, rep))
        .collect::<Result<Vec<Option<f64>>>>()?;
    let degenerate = raw.iter().filter(|v| v.is_none()).count() as u64;
    Ok((raw.into_iter().flatten().collect(), degenerate))
}

/// Estimates the tail probability of the configured statistic on the grid
/// and augments each point with normal-tail comparisons and the theoretical
/// envelope column.
pub fn estimate_tail_curve(cfg: &ExperimentConfig) -> Result<TailCurve> {
    cfg.validate()?;
    let (params, regime) = cfg.envelope_inputs()?;

    let mut retained: Vec<(f64, f64, f64)> = Vec::new(); // (x, reference tail, log reference)
    let mut excluded = Vec::new();
    for &x in &cfg.x_grid {
        let tail = phi_tail(x)?;
        let expected = cfg.replications as f64 * tail.value;
        if cfg.min_expected_hits > 0.0 && expected < cfg.min_expected_hits {
            excluded.push(ExcludedPoint {
                x,
                expected_hits: expected,
            });
        } else {
            retained.push((x, tail.value, tail.log_value));
        }
    }

    let grid: Vec<f64> = retained.iter().map(|&(x, _, _)| x).collect();
    let (counts, degenerate) = run_counts(cfg, &grid)?;

    let mut points = Vec::with_capacity(grid.len());
    for (&(x, reference, log_reference), &count) in retained.iter().zip(&counts) {
        let phat = count as f64 / cfg.replications as f64;
        let (wilson_lo, wilson_hi) = wilson_bounds(count, cfg.replications)?;
        let ratio = phat / reference;
        let log_ratio = if count > 0 {
            Some(phat.ln() - log_reference)
        } else {
            None
        };
        let envelope = log_ratio_envelope(x, &params, regime)?;
        points.push(TailPoint {
            x,
            count,
            phat,
            wilson_lo,
            wilson_hi,
            ratio,
            log_ratio,
            envelope,
        });
    }

    Ok(TailCurve {
        points,
        excluded,
        replications: cfg.replications,
        degenerate,
        n: cfg.n,
        seed: cfg.seed,
        statistic: cfg.statistic.to_string(),
        tail: cfg.tail,
        envelope_params: params,
        regime,
    })
}

/// One point of the log-tail quotient diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioPoint {
    pub x: f64,
    /// `ln(phat) / ln(phi_tail(x))`.
    pub quotient: f64,
}

/// Result of [`log_ratio_curve`]: the quotient of log tail probabilities,
/// which tends to 1 exactly when the two tails agree to first order on the
/// logarithmic scale.
#[derive(Debug, Clone)]
pub struct LogRatioCurve {
    pub points: Vec<LogRatioPoint>,
    /// Grid points skipped because no replication hit the tail event.
    pub excluded_zero_count: Vec<f64>,
}

/// Derives the log-tail quotient `ln(phat) / ln(phi_tail(x))` from an
/// estimated tail curve.
pub fn log_ratio_curve(curve: &TailCurve) -> Result<LogRatioCurve> {
    let mut points = Vec::new();
    let mut excluded_zero_count = Vec::new();
    for point in &curve.points {
        if point.count == 0 {
            excluded_zero_count.push(point.x);
            continue;
        }
        let log_reference = phi_tail(point.x)?.log_value;
        points.push(LogRatioPoint {
            x: point.x,
            quotient: point.phat.ln() / log_reference,
        });
    }
    Ok(LogRatioCurve {
        points,
        excluded_zero_count,
    })
}

/// Result of [`fit_envelope_constant`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    /// Smallest constant for which the envelope dominates every usable point.
    pub c_fit: f64,
    /// Largest value of `|log_ratio| - c_fit * shape(x)` over usable points;
    /// non-positive by construction.
    pub max_violation: f64,
    /// Number of points with a defined log-ratio that entered the fit.
    pub usable_points: usize,
}

/// The envelope shape at a curve point, normalized to constant 1.
fn envelope_shape(curve: &TailCurve, point: &TailPoint) -> f64 {
    point.envelope / curve.envelope_params.c
}

/// Finds the smallest envelope constant `c` such that
/// `|log_ratio(x)| <= c * shape(x)` for every point of the curve with a
/// defined log-ratio, where `shape` is the envelope evaluated at constant 1.
///
/// Requires at least three usable points.  If the shape vanishes at a point
/// whose log-ratio does not, no constant works and the fit reports a shape
/// mismatch.
pub fn fit_envelope_constant(curve: &TailCurve) -> Result<EnvelopeFit> {
    let usable: Vec<(&TailPoint, f64)> = curve
        .points
        .iter()
        .filter_map(|p| p.log_ratio.map(|lr| (p, lr)))
        .collect();
    if usable.len() < 3 {
        return Err(LabError::Domain(format!(
            "envelope fitting requires at least 3 points with nonzero counts, found {}",
            usable.len()
        )));
    }
    let mut c_fit: f64 = 0.0;
    for &(point, log_ratio) in &usable {
        let shape = envelope_shape(curve, point);
        if shape <= 0.0 {
            if log_ratio.abs() > 0.0 {
                return Err(LabError::EnvelopeShapeMismatch {
                    x: point.x,
                    log_ratio,
                });
            }
            continue;
        }
        c_fit = c_fit.max(log_ratio.abs() / shape);
    }
    let max_violation = envelope_violation(curve, c_fit)?;
    Ok(EnvelopeFit {
        c_fit,
        max_violation,
        usable_points: usable.len(),
    })
}

/// Largest value of `|log_ratio| - c * shape(x)` over the curve's points with
/// a defined log-ratio.  Non-positive means the envelope with constant `c`
/// dominates the curve.
pub fn envelope_violation(curve: &TailCurve, c: f64) -> Result<f64> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(LabError::Domain(
            "envelope constant must be finite and non-negative".into(),
        ));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut any = false;
    for point in &curve.points {
        if let Some(log_ratio) = point.log_ratio {
            any = true;
            worst = worst.max(log_ratio.abs() - c * envelope_shape(curve, point));
        }
    }
    if !any {
        return Err(LabError::Domain(
            "envelope violation is undefined on a curve with no nonzero counts".into(),
        ));
    }
    Ok(worst)
}
