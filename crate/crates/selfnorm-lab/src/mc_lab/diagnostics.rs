//! Distributional diagnostics built on the Monte Carlo engine: moderate-
//! deviation rates, Kolmogorov distance to the normal law, predictable-
//! variance concentration probes, confidence-interval coverage, and the tail
//! of the standardized log-population.

use super::{run_counts, run_values, wilson_bounds, ExperimentConfig, ModelSpec};
use crate::bpre_infer::{confidence_interval, window_from_trajectory};
use crate::error::{LabError, Result};
use crate::gauss::phi_cdf;
use crate::models::{env_moments, log_population_z, sample_bpre, RngStream};
use rayon::prelude::*;

/// One usable point of the moderate-deviation diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpPoint {
    /// Speed parameter.
    pub a: f64,
    /// Tail threshold `a * b` at which the probability was estimated.
    pub threshold: f64,
    pub count: u64,
    pub phat: f64,
    /// Normalized log tail probability `ln(phat) / a^2`; converges to
    /// `-b^2 / 2` when the moderate-deviation principle holds.
    pub rate: f64,
}

/// Result of [`mdp_diagnostic`].
#[derive(Debug, Clone)]
pub struct MdpDiagnostic {
    pub points: Vec<MdpPoint>,
    /// Speeds that produced no usable rate, with the reason.
    pub excluded: Vec<(f64, String)>,
    pub b: f64,
    pub replications: u64,
    pub degenerate: u64,
}

/// Normalized log tail probability at speed `a`.  `None` when the speed is
/// non-positive or the estimate is zero, where the rate is undefined.
pub fn mdp_rate(a: f64, phat: f64) -> Option<f64> {
    if !(a > 0.0) || !(phat > 0.0) || !a.is_finite() || phat > 1.0 {
        return None;
    }
    Some(phat.ln() / (a * a))
}

/// Estimates the moderate-deviation rate `ln P(stat >= a*b) / a^2` for each
/// speed `a`.  Speeds that are non-positive, fall below the expected-hit
/// floor, or produce an empty tail event are excluded and reported.
pub fn mdp_diagnostic(cfg: &ExperimentConfig, a_values: &[f64], b: f64) -> Result<MdpDiagnostic> {
    cfg.validate()?;
    if !(b > 0.0) || !b.is_finite() {
        return Err(LabError::Config(
            "the ray scale b must be positive and finite".into(),
        ));
    }
    if a_values.is_empty() {
        return Err(LabError::Config("at least one speed is required".into()));
    }

    let mut excluded: Vec<(f64, String)> = Vec::new();
    let mut speeds: Vec<f64> = Vec::new();
    for &a in a_values {
        if !a.is_finite() || a <= 0.0 {
            excluded.push((a, "speed must be positive".into()));
        } else if speeds.contains(&a) {
            excluded.push((a, "duplicate speed".into()));
        } else {
            speeds.push(a);
        }
    }
    speeds.sort_by(|p, q| p.partial_cmp(q).expect("finite speeds"));
    for &a in &speeds {
        let threshold = a * b;
        if threshold > crate::gauss::MAX_ABS_Z {
            return Err(LabError::Config(format!(
                "threshold a*b = {threshold} exceeds the supported range"
            )));
        }
    }
    let mut retained: Vec<f64> = Vec::new();
    for &a in &speeds {
        let expected = cfg.replications as f64 * crate::gauss::phi_tail(a * b)?.value;
        if cfg.min_expected_hits > 0.0 && expected < cfg.min_expected_hits {
            excluded.push((
                a,
                format!("expected hits {expected:.3} below floor {}", cfg.min_expected_hits),
            ));
        } else {
            retained.push(a);
        }
    }

    let grid: Vec<f64> = retained.iter().map(|&a| a * b).collect();
    let (counts, degenerate) = if grid.is_empty() {
        (Vec::new(), 0)
    } else {
        run_counts(cfg, &grid)?
    };

    let mut points = Vec::new();
    for (&a, &count) in retained.iter().zip(&counts) {
        let phat = count as f64 / cfg.replications as f64;
        match mdp_rate(a, phat) {
            Some(rate) => points.push(MdpPoint {
                a,
                threshold: a * b,
                count,
                phat,
                rate,
            }),
            None => excluded.push((a, "no replication hit the tail event".into())),
        }
    }
    Ok(MdpDiagnostic {
        points,
        excluded,
        b,
        replications: cfg.replications,
        degenerate,
    })
}

/// Result of [`kolmogorov_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KolmogorovDistance {
    /// Supremum distance between the empirical law and the standard normal.
    pub d: f64,
    /// Sample value at which the supremum is attained.
    pub at: f64,
    /// Number of non-degenerate replications behind the empirical law.
    pub replications_used: u64,
    pub degenerate: u64,
}

/// One-sample Kolmogorov distance between a data set and the standard
/// normal distribution.  The input need not be sorted.
pub fn ks_distance_to_normal(values: &[f64]) -> Result<KolmogorovDistance> {
    if values.is_empty() {
        return Err(LabError::Domain(
            "the Kolmogorov distance requires at least one value".into(),
        ));
    }
    let mut sorted = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Domain(
            "the Kolmogorov distance requires finite values".into(),
        ));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    let mut at = sorted[0];
    for (i, &v) in sorted.iter().enumerate() {
        let cdf = phi_cdf(v)?;
        let below = cdf - i as f64 / n;
        let above = (i + 1) as f64 / n - cdf;
        let local = below.max(above);
        if local > d {
            d = local;
            at = v;
        }
    }
    Ok(KolmogorovDistance {
        d,
        at,
        replications_used: sorted.len() as u64,
        degenerate: 0,
    })
}

/// Simulates the configured statistic and measures the Kolmogorov distance
/// of its empirical law to the standard normal.  Requires at least 100
/// replications for the distance to be meaningful.
pub fn kolmogorov_distance(cfg: &ExperimentConfig) -> Result<KolmogorovDistance> {
    cfg.validate()?;
    if cfg.replications < 100 {
        return Err(LabError::Config(
            "the Kolmogorov diagnostic requires at least 100 replications".into(),
        ));
    }
    let (values, degenerate) = run_values(cfg)?;
    if values.is_empty() {
        return Err(LabError::Degenerate(
            "every replication was degenerate".into(),
        ));
    }
    let mut result = ks_distance_to_normal(&values)?;
    result.degenerate = degenerate;
    Ok(result)
}

/// One grid point of the variance-concentration probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePoint {
    /// Relative-deviation threshold.
    pub x: f64,
    /// Replications with `|V_n / B_n^2 - 1| >= x`.
    pub count: u64,
    pub phat: f64,
}

/// Result of [`probe_variance_concentration`].
#[derive(Debug, Clone)]
pub struct VarianceProbe {
    pub points: Vec<ProbePoint>,
    /// Least-squares slope of `ln phat` against `x` over points with nonzero
    /// counts; present when at least two such points exist.  Exponential
    /// concentration of the predictable variance shows up as a strongly
    /// negative slope.
    pub slope: Option<f64>,
    /// Population models: the harmonic-mean reference used inside the
    /// normalizer, chosen as the empirical median across replications.
    pub reference_harmonic_mean: Option<f64>,
    pub replications: u64,
}

/// Least-squares slope of `y` against `x`; `None` when fewer than two
/// distinct abscissas are available.
fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    Some(sxy / sxx)
}

/// Builds probe points from per-replication relative deviations.
fn probe_points_from_deviations(
    grid: &[f64],
    deviations: &[f64],
    replications: u64,
) -> Vec<ProbePoint> {
    grid.iter()
        .map(|&x| {
            let count = deviations.iter().filter(|&&d| d >= x).count() as u64;
            ProbePoint {
                x,
                count,
                phat: count as f64 / replications as f64,
            }
        })
        .collect()
}

/// Estimates `P(|V_n / B_n^2 - 1| >= x)` over the configured grid, where
/// `V_n` is the predictable variance of the statistic's underlying martingale
/// and `B_n^2` its deterministic (or reference) normalizer.
///
/// * i.i.d. increments: the predictable variance is the constant `n * Var(X)`
///   and the probe is exactly zero at every positive threshold.
/// * One-step dependent increments: the predictable variance equals the sum
///   of squared increments pathwise and is compared to `n * (1 + beta^2)`.
/// * Population models: the predictable variance of the centered offspring
///   ratios is `n*sigma^2 + tau^2 * sum(1/Z_k)`; the normalizer replaces the
///   random harmonic sum by `n` times a reference harmonic mean, chosen as
///   the empirical median and recorded in the output.
pub fn probe_variance_concentration(cfg: &ExperimentConfig) -> Result<VarianceProbe> {
    cfg.validate()?;
    let grid = &cfg.x_grid;
    let (deviations, reference) = match &cfg.model {
        ModelSpec::Iid(_) => {
            // The compensated bracket of mutually independent increments is
            // predictable only through its conditional expectation, which is
            // the constant n * Var(X): the relative deviation vanishes
            // identically and no sampling is needed.
            (vec![0.0; cfg.replications as usize], None)
        }
        ModelSpec::Mds(model) => {
            let b2 = cfg.n as f64 * model.variance();
            let devs: Vec<f64> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| -> Result<f64> {
                    let sample =
                        crate::models::sample_mds(model, cfg.n, RngStream::new(cfg.seed, rep))?;
                    // E[X_i^2 | F_{i-1}] = (1 + beta * eps_{i-1})^2 = X_i^2
                    // because the driving signs square to one, so the
                    // predictable variance equals the bracket pathwise.
                    let mut bracket = crate::stats_core::CompensatedSum::new();
                    for &x in sample.increments() {
                        bracket.add(x * x);
                    }
                    Ok((bracket.value() / b2 - 1.0).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            (devs, None)
        }
        ModelSpec::Bpre {
            model,
            exact_threshold,
        } => {
            let mom = env_moments(model);
            // Predictable variance of the centered ratio window:
            // n*sigma^2 + tau^2 * sum over the window of 1/Z_k.
            let harmonic_sums: Vec<f64> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| -> Result<f64> {
                    let traj = sample_bpre(
                        model,
                        cfg.n0 + cfg.n,
                        RngStream::new(cfg.seed, rep),
                        *exact_threshold,
                    )?;
                    let mut sum = crate::stats_core::CompensatedSum::new();
                    for &z in &traj.z[cfg.n0..cfg.n0 + cfg.n] {
                        sum.add(1.0 / z);
                    }
                    Ok(sum.value())
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut sorted = harmonic_sums.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite harmonic sums"));
            let mid = sorted.len() / 2;
            let median_sum = if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                0.5 * (sorted[mid - 1] + sorted[mid])
            };
            let n = cfg.n as f64;
            let b2 = n * mom.sigma2 + mom.tau2 * median_sum;
            if !(b2 > 0.0) {
                return Err(LabError::Degenerate(
                    "the variance normalizer vanishes for this model".into(),
                ));
            }
            let devs: Vec<f64> = harmonic_sums
                .iter()
                .map(|&s| ((n * mom.sigma2 + mom.tau2 * s) / b2 - 1.0).abs())
                .collect();
            (devs, Some(median_sum / n))
        }
    };

    let points = probe_points_from_deviations(grid, &deviations, cfg.replications);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in &points {
        if p.count > 0 && p.phat < 1.0 {
            xs.push(p.x);
            ys.push(p.phat.ln());
        }
    }
    Ok(VarianceProbe {
        slope: ls_slope(&xs, &ys),
        points,
        reference_harmonic_mean: reference,
        replications: cfg.replications,
    })
}

/// Result of [`coverage_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    /// Nominal confidence level of the intervals.
    pub level: f64,
    /// Fraction of non-degenerate replications whose interval contains the
    /// true offspring mean.
    pub coverage: f64,
    /// Number of intervals that contained the true mean.
    pub hits: u64,
    /// Non-degenerate replications (the coverage denominator).
    pub replications_used: u64,
    pub degenerate: u64,
    /// 95% Wilson score bounds for the coverage fraction.
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// Simulates population windows, builds a normal-theory confidence interval
/// for the offspring mean from each, and reports the empirical coverage of
/// the true mean.  Degenerate windows (zero empirical variance) are skipped
/// and reported; more than 1% of them aborts the experiment.
pub fn coverage_experiment(cfg: &ExperimentConfig, level: f64) -> Result<CoverageReport> {
    cfg.validate()?;
    let (model, exact_threshold) = match &cfg.model {
        ModelSpec::Bpre {
            model,
            exact_threshold,
        } => (model, *exact_threshold),
        _ => {
            return Err(LabError::Unsupported(
                "coverage experiments require a branching-process model".into(),
            ));
        }
    };
    let mom = env_moments(model);
    let (hits, degenerate) = (0..cfg.replications)
        .into_par_iter()
        .try_fold(
            || (0u64, 0u64),
            |mut acc, rep| -> Result<(u64, u64)> {
                let traj = sample_bpre(
                    model,
                    cfg.n0 + cfg.n,
                    RngStream::new(cfg.seed, rep),
                    exact_threshold,
                )?;
                let window = window_from_trajectory(&traj, cfg.n0, cfg.n)?;
                match confidence_interval(&window, level) {
                    Ok(ci) => {
                        if ci.contains(mom.m) {
                            acc.0 += 1;
                        }
                    }
                    Err(LabError::Degenerate(_)) => acc.1 += 1,
                    Err(e) => return Err(e),
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || (0, 0),
            |a, b| Ok((a.0 + b.0, a.1 + b.1)),
        )?;

    if degenerate * 100 > cfg.replications {
        return Err(LabError::Degenerate(format!(
            "{degenerate} of {} replications produced a degenerate window (more than 1%)",
            cfg.replications
        )));
    }
    let used = cfg.replications - degenerate;
    if used == 0 {
        return Err(LabError::Degenerate(
            "every replication was degenerate".into(),
        ));
    }
    let coverage = hits as f64 / used as f64;
    let (wilson_lo, wilson_hi) = wilson_bounds(hits, used)?;
    Ok(CoverageReport {
        level,
        coverage,
        hits,
        replications_used: used,
        degenerate,
        wilson_lo,
        wilson_hi,
    })
}

/// One grid point of the standardized log-population tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedancePoint {
    pub x: f64,
    /// Replications with `|standardized log population| >= x`.
    pub count: u64,
    pub phat: f64,
}

/// Result of [`ln_z_tail_probe`].
#[derive(Debug, Clone)]
pub struct LnZTailCurve {
    pub points: Vec<ExceedancePoint>,
    pub replications: u64,
}

/// Estimates the two-sided tail `P(|(ln Z_n - n*mu) / (sqrt(n)*nu)| >= x)`
/// of the standardized log-population over the configured grid.
pub fn ln_z_tail_probe(cfg: &ExperimentConfig) -> Result<LnZTailCurve> {
    cfg.validate()?;
    let (model, exact_threshold) = match &cfg.model {
        ModelSpec::Bpre {
            model,
            exact_threshold,
        } => (model, *exact_threshold),
        _ => {
            return Err(LabError::Unsupported(
                "the log-population probe requires a branching-process model".into(),
            ));
        }
    };
    let mom = env_moments(model);
    if !(mom.nu2 > 0.0) {
        return Err(LabError::Degenerate(
            "the log-population probe requires a random environment (nu^2 > 0)".into(),
        ));
    }
    let grid = &cfg.x_grid;
    let zero = || vec![0u64; grid.len()];
    let counts = (0..cfg.replications)
        .into_par_iter()
        .try_fold(zero, |mut acc, rep| -> Result<Vec<u64>> {
            let traj = sample_bpre(
                model,
                cfg.n,
                RngStream::new(cfg.seed, rep),
                exact_threshold,
            )?;
            let v = log_population_z(&traj, &mom, cfg.n)?.abs();
            let hits = grid.partition_point(|x| *x <= v);
            for c in &mut acc[..hits] {
                *c += 1;
            }
            Ok(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            Ok(a)
        })?;
    let points = grid
        .iter()
        .zip(&counts)
        .map(|(&x, &count)| ExceedancePoint {
            x,
            count,
            phat: count as f64 / cfg.replications as f64,
        })
        .collect();
    Ok(LnZTailCurve {
        points,
        replications: cfg.replications,
    })
}
