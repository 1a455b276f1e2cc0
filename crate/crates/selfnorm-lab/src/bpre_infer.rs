//! Offspring-mean inference from branching-process trajectories.
//!
//! The per-generation population ratio Z_{k+1}/Z_k is an unbiased estimator
//! of the offspring mean m, so a window of n consecutive ratios yields the
//! estimator m̂ = mean(ratios), its studentized form
//! N = √n(m̂ − m)/σ̂ (exactly Student's t of the centered ratios), the
//! σ-scaled form S = √n(m̂ − m)/σ, and normal-quantile confidence
//! intervals for m. The moderate-deviation theory guarantees the relative
//! tail error of N against the standard normal stays controlled, which is
//! what makes the CI coverage quantitatively trustworthy; the coverage
//! experiments in `mc_lab` verify that empirically.

use crate::error::{LabError, Result};
use crate::gauss;
use crate::models::Trajectory;
use crate::stats_core::{self, CompensatedSum, Sample};

/// A window of n consecutive population ratios starting at generation n0.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryWindow {
    n0: usize,
    ratios: Vec<f64>,
}

/// Two-sided normal-quantile interval for the offspring mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, m: f64) -> bool {
        self.lower <= m && m <= self.upper
    }
}

/// Result of checking factorial moment growth E|·|^l ≤ ½·l!·c^{l−2}·E|·|²
/// for l = 2..l_max.
#[derive(Clone, Debug, PartialEq)]
pub struct BernsteinReport {
    pub c: f64,
    pub l_max: usize,
    /// Orders l at which the inequality fails.
    pub violations: Vec<usize>,
}

impl TrajectoryWindow {
    /// Builds a window from explicit ratios. Ratios must number at least 2,
    /// be finite, and be ≥ 1 — populations never shrink when every
    /// individual has at least one offspring.
    pub fn from_ratios(n0: usize, ratios: Vec<f64>) -> Result<Self> {
        if ratios.len() < 2 {
            return Err(LabError::Domain(format!(
                "window needs at least 2 ratios, got {}",
                ratios.len()
            )));
        }
        for (i, &r) in ratios.iter().enumerate() {
            if !r.is_finite() || r < 1.0 {
                return Err(LabError::Domain(format!(
                    "ratio {r} at window offset {i} is not a valid growth factor (population \
                     may not shrink: every individual has at least one offspring)"
                )));
            }
        }
        Ok(Self { n0, ratios })
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n(&self) -> usize {
        self.ratios.len()
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }
}

/// Extracts the n ratios Z_{k+1}/Z_k for k = n0..n0+n−1 from a simulated
/// trajectory.
pub fn window_from_trajectory(traj: &Trajectory, n0: usize, n: usize) -> Result<TrajectoryWindow> {
    window_from_populations(&traj.z, n0, n0, n)
}

/// Window over an explicit population sequence; `start_index` addresses the
/// slice while `n0_label` is the generation number reported for the window
/// (they differ when a data file starts at a positive generation).
fn window_from_populations(
    z: &[f64],
    n0_label: usize,
    start_index: usize,
    n: usize,
) -> Result<TrajectoryWindow> {
    if n < 2 {
        return Err(LabError::Domain(format!(
            "window length must be >= 2, got {n}"
        )));
    }
    if start_index + n + 1 > z.len() {
        return Err(LabError::Domain(format!(
            "window needs generations {n0_label}..={}, trajectory records {} generations",
            n0_label + n,
            z.len()
        )));
    }
    let ratios = z[start_index..start_index + n + 1]
        .windows(2)
        .map(|w| w[1] / w[0])
        .collect();
    TrajectoryWindow::from_ratios(n0_label, ratios)
}

/// m̂ = mean of the window's ratios.
pub fn mhat(w: &TrajectoryWindow) -> f64 {
    let mut s = CompensatedSum::new();
    for &r in w.ratios() {
        s.add(r);
    }
    s.value() / w.n() as f64
}

/// N = √n(m̂ − m)/σ̂ with σ̂ the sample standard deviation of the ratios.
/// Computed as Student's t of the centered ratios, so the pointwise
/// threshold bridge to the self-normalized form holds by construction.
pub fn n_statistic(w: &TrajectoryWindow, m: f64) -> Result<f64> {
    stats_core::student_t(&centered(w, m)?)
}

/// Self-normalized form of the centered ratios:
/// Σ(r−m) / √(Σ(r−m)²). N ≥ x is equivalent to this exceeding
/// chung_transform(x, n).
pub fn w_statistic(w: &TrajectoryWindow, m: f64) -> Result<f64> {
    Ok(stats_core::self_normalized(&centered(w, m)?)?.w)
}

fn centered(w: &TrajectoryWindow, m: f64) -> Result<Sample> {
    if !m.is_finite() {
        return Err(LabError::Domain(format!("offspring mean {m} not finite")));
    }
    Sample::new(w.ratios().iter().map(|r| r - m).collect())
}

/// S = √n(m̂ − m)/σ, the known-σ scaling.
pub fn s_statistic(w: &TrajectoryWindow, m: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(LabError::Domain(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    Ok((w.n() as f64).sqrt() * (mhat(w) - m) / sigma)
}

/// Sample standard deviation of the window's ratios (n−1 denominator),
/// the scale estimate behind the N statistic and the confidence interval.
pub fn sigma_hat(w: &TrajectoryWindow) -> Result<f64> {
    let n = w.n() as f64;
    let center = mhat(w);
    let mut q = CompensatedSum::new();
    for &r in w.ratios() {
        let d = r - center;
        q.add(d * d);
    }
    let var = q.value() / (n - 1.0);
    if var <= 0.0 {
        return Err(LabError::Degenerate(
            "all ratios in the window are equal; scale estimate is undefined".into(),
        ));
    }
    Ok(var.sqrt())
}

/// m̂ ± z·σ̂/√n with z the standard normal quantile at 1 − (1−level)/2.
/// The endpoints are exactly the two roots of |N(m)| = z.
pub fn confidence_interval(w: &TrajectoryWindow, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LabError::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let n = w.n() as f64;
    let center = mhat(w);
    let scale = sigma_hat(w).map_err(|e| match e {
        LabError::Degenerate(_) => LabError::Degenerate(
            "all ratios in the window are equal; interval width is undefined".into(),
        ),
        other => other,
    })?;
    let z = gauss::phi_quantile(1.0 - (1.0 - level) / 2.0)?;
    let half_width = z * scale / n.sqrt();
    Ok(ConfidenceInterval {
        lower: center - half_width,
        upper: center + half_width,
        level,
    })
}

/// Checks E|·|^l > ½·l!·c^{l−2}·E|·|² for each l. `abs_moments[i]` is
/// E|·|^{2+i}, so the slice starts at the order-2 moment and defines
/// l_max = moments supplied + 1.
pub fn bernstein_check(abs_moments: &[f64], c: f64) -> Result<BernsteinReport> {
    if abs_moments.is_empty() {
        return Err(LabError::Domain(
            "need at least the order-2 absolute moment".into(),
        ));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(LabError::Domain(format!(
            "Bernstein constant must be positive, got {c}"
        )));
    }
    if let Some(bad) = abs_moments.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
        return Err(LabError::Domain(format!("invalid absolute moment {bad}")));
    }
    let m2 = abs_moments[0];
    let l_max = abs_moments.len() + 1;
    let mut violations = Vec::new();
    let mut factorial = 2.0f64; // 2!
    let mut c_pow = 1.0f64; // c^{l-2}
    for (i, &ml) in abs_moments.iter().enumerate() {
        let l = i + 2;
        if ml > 0.5 * factorial * c_pow * m2 {
            violations.push(l);
        }
        factorial *= (l + 1) as f64;
        c_pow *= c;
    }
    Ok(BernsteinReport {
        c,
        l_max,
        violations,
    })
}

/// Closed-form ceiling for the conditional moment ratio
/// E[|ξ|^{2+ρ} | past] / E[ξ² | past] of the normalized ratio increments:
/// 2^{1+ρ}·(E|Z₁−m₀|^{2+ρ} + E|m₀−m|^{2+ρ}) / σ².
pub fn conditional_moment_bound_check(model: &crate::models::BpreModel, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(LabError::Domain(format!("rho {rho} outside (0, 1]")));
    }
    let mom = model.env_moments();
    if mom.sigma2 <= 0.0 {
        return Err(LabError::Degenerate(
            "environment mean is deterministic (sigma^2 = 0); ratio bound undefined".into(),
        ));
    }
    let order = 2.0 + rho;
    Ok((2.0f64).powf(1.0 + rho)
        * (model.abs_central_offspring_moment(order) + model.abs_env_mean_moment(order))
        / mom.sigma2)
}

/// A population sequence loaded from CSV, possibly starting at a positive
/// generation (earlier data missing).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedTrajectory {
    pub first_generation: usize,
    pub populations: Vec<f64>,
}

impl LoadedTrajectory {
    /// Window addressed by absolute generation number.
    pub fn window(&self, n0: usize, n: usize) -> Result<TrajectoryWindow> {
        if n0 < self.first_generation {
            return Err(LabError::Domain(format!(
                "window starts at generation {n0} but the data begins at generation {}",
                self.first_generation
            )));
        }
        window_from_populations(&self.populations, n0, n0 - self.first_generation, n)
    }

    /// The widest window the data supports.
    pub fn full_window(&self) -> Result<TrajectoryWindow> {
        let n = self.populations.len().saturating_sub(1);
        self.window(self.first_generation, n)
    }
}

/// Parses `generation,population` CSV text. Generations must be consecutive
/// integers (ratios pair adjacent generations); populations must be
/// positive.
pub fn read_trajectory_csv(text: &str) -> Result<LoadedTrajectory> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((i, line)) => break (i, line),
            None => return Err(LabError::Config("empty trajectory file".into())),
        }
    };
    if header.1.trim() != "generation,population" {
        return Err(LabError::Config(format!(
            "line {}: expected header 'generation,population', got '{}'",
            header.0 + 1,
            header.1.trim()
        )));
    }
    let mut first_generation = None;
    let mut prev_generation: Option<u64> = None;
    let mut populations = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (g, p) = match (fields.next(), fields.next(), fields.next()) {
            (Some(g), Some(p), None) => (g.trim(), p.trim()),
            _ => {
                return Err(LabError::Config(format!(
                    "line {}: expected 'generation,population', got '{line}'",
                    i + 1
                )))
            }
        };
        let g: u64 = g.parse().map_err(|_| {
            LabError::Config(format!("line {}: generation '{g}' is not an integer", i + 1))
        })?;
        let p: f64 = p.parse().map_err(|_| {
            LabError::Config(format!("line {}: population '{p}' is not a number", i + 1))
        })?;
        if !(p > 0.0) || !p.is_finite() {
            return Err(LabError::Config(format!(
                "line {}: population must be positive, got {p}",
                i + 1
            )));
        }
        if let Some(prev) = prev_generation {
            if g != prev + 1 {
                return Err(LabError::Config(format!(
                    "line {}: generation {g} does not follow {prev}; ratios need consecutive \
                     generations",
                    i + 1
                )));
            }
        } else {
            first_generation = Some(g);
        }
        prev_generation = Some(g);
        populations.push(p);
    }
    if populations.len() < 2 {
        return Err(LabError::Config(
            "trajectory needs at least two generations".into(),
        ));
    }
    Ok(LoadedTrajectory {
        first_generation: first_generation.unwrap() as usize,
        populations,
    })
}
