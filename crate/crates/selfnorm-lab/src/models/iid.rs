//! I.i.d. increment laws with exact mean zero and closed-form moments.

use super::{clamp_scale, RngStream, SignBits};
use crate::error::{LabError, Result};
use crate::stats_core::{CompensatedSum, EnvelopeParams, Sample, VarianceConcentration};
use rand::Rng;

/// Supported zero-mean increment laws. All moments are available in closed
/// form, so envelope scales and normal-approximation baselines are exact
/// rather than estimated.
#[derive(Clone, Debug, PartialEq)]
pub enum IidLaw {
    /// ±1 with probability 1/2 each.
    Rademacher,
    /// Uniform on (−a, a).
    Uniform { half_width: f64 },
    /// Takes `up` with probability `p_up`, else `down = −up·p_up/(1−p_up)`,
    /// so the mean is zero by construction.
    TwoPoint { up: f64, down: f64, p_up: f64 },
    /// Finite-support law; values are recentred at construction so the mean
    /// is zero.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IidModel {
    law: IidLaw,
}

impl IidModel {
    pub fn rademacher() -> Self {
        Self {
            law: IidLaw::Rademacher,
        }
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(LabError::Config(format!(
                "uniform half-width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Self {
            law: IidLaw::Uniform { half_width },
        })
    }

    pub fn two_point(up: f64, p_up: f64) -> Result<Self> {
        if !(up > 0.0) || !up.is_finite() {
            return Err(LabError::Config(format!(
                "two-point up value must be positive and finite, got {up}"
            )));
        }
        if !(p_up > 0.0 && p_up < 1.0) {
            return Err(LabError::Config(format!(
                "two-point p_up must lie in (0, 1), got {p_up}"
            )));
        }
        let down = -up * p_up / (1.0 - p_up);
        Ok(Self {
            law: IidLaw::TwoPoint { up, down, p_up },
        })
    }

    /// Builds a finite-support law and recentres it to mean zero.
    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(LabError::Config(format!(
                "discrete law needs matching non-empty values/probs, got {}/{}",
                values.len(),
                probs.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(LabError::Config(format!("non-finite support value {bad}")));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(LabError::Config(format!("invalid probability {bad}")));
        }
        let mut mass = CompensatedSum::new();
        for &p in &probs {
            mass.add(p);
        }
        if (mass.value() - 1.0).abs() > 1e-12 {
            return Err(LabError::Config(format!(
                "discrete probabilities sum to {}, expected 1 within 1e-12",
                mass.value()
            )));
        }
        let mut mean = CompensatedSum::new();
        for (v, p) in values.iter().zip(&probs) {
            mean.add(v * p);
        }
        let mean = mean.value();
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let model = Self {
            law: IidLaw::Discrete {
                values: centered,
                probs,
            },
        };
        if model.variance() <= 0.0 {
            return Err(LabError::Config(
                "discrete law is a point mass; variance must be positive".into(),
            ));
        }
        Ok(model)
    }

    pub fn law(&self) -> &IidLaw {
        &self.law
    }

    /// Exact variance E X².
    pub fn variance(&self) -> f64 {
        self.abs_moment(2.0)
    }

    /// Exact absolute moment E|X|^order for order > 0.
    pub fn abs_moment(&self, order: f64) -> f64 {
        match &self.law {
            IidLaw::Rademacher => 1.0,
            IidLaw::Uniform { half_width } => half_width.powf(order) / (order + 1.0),
            IidLaw::TwoPoint { up, down, p_up } => {
                p_up * up.powf(order) + (1.0 - p_up) * down.abs().powf(order)
            }
            IidLaw::Discrete { values, probs } => {
                let mut s = CompensatedSum::new();
                for (v, p) in values.iter().zip(probs) {
                    s.add(v.abs().powf(order) * p);
                }
                s.value()
            }
        }
    }

    /// Envelope scales for the self-normalized sum of n increments.
    ///
    /// The moment scale makes the conditional (2+rho)-moment bound an
    /// equality: gamma = kappa^{1/rho}/√n with kappa = E|X|^{2+rho}/σ^{2+rho}.
    /// The conditional variance of an i.i.d. sum is deterministic, so its
    /// concentration scale may be chosen freely; 1/n is used. Scales are
    /// clamped into (0, 1/4].
    pub fn envelope_inputs(
        &self,
        n: usize,
        rho: f64,
        c: f64,
    ) -> Result<(EnvelopeParams, VarianceConcentration)> {
        if n == 0 {
            return Err(LabError::Domain("envelope inputs need n >= 1".into()));
        }
        let sigma = self.variance().sqrt();
        let kappa = self.abs_moment(2.0 + rho) / sigma.powf(2.0 + rho);
        let gamma = clamp_scale(kappa.powf(1.0 / rho) / (n as f64).sqrt());
        let delta = clamp_scale(1.0 / n as f64);
        Ok((
            EnvelopeParams::new(rho, gamma, delta, c)?,
            VarianceConcentration::Exponential,
        ))
    }
}

/// Draws n i.i.d. increments from the model on the given stream.
pub fn sample_iid(model: &IidModel, n: usize, stream: RngStream) -> Result<Sample> {
    if n == 0 {
        return Err(LabError::Domain("sample length must be >= 1".into()));
    }
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(n);
    match model.law() {
        IidLaw::Rademacher => {
            let mut bits = SignBits::new();
            for _ in 0..n {
                out.push(bits.next(&mut rng));
            }
        }
        IidLaw::Uniform { half_width } => {
            for _ in 0..n {
                let u: f64 = rng.random();
                out.push(half_width * (2.0 * u - 1.0));
            }
        }
        IidLaw::TwoPoint { up, down, p_up } => {
            for _ in 0..n {
                let u: f64 = rng.random();
                out.push(if u < *p_up { *up } else { *down });
            }
        }
        IidLaw::Discrete { values, probs } => {
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut chosen = values[values.len() - 1];
                for (v, p) in values.iter().zip(probs) {
                    cum += p;
                    if u < cum {
                        chosen = *v;
                        break;
                    }
                }
                out.push(chosen);
            }
        }
    }
    Sample::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rademacher_is_reproducible_and_signed() {
        let s1 = sample_iid(&IidModel::rademacher(), 3, RngStream::new(7, 1)).unwrap();
        let s2 = sample_iid(&IidModel::rademacher(), 3, RngStream::new(7, 1)).unwrap();
        assert_eq!(s1.increments(), s2.increments());
        assert!(s1.increments().iter().all(|v| *v == 1.0 || *v == -1.0));
        // A different stream gives a different path (overwhelmingly likely
        // over 64 draws; checked deterministically for this seed).
        let s3 = sample_iid(&IidModel::rademacher(), 64, RngStream::new(7, 2)).unwrap();
        let s4 = sample_iid(&IidModel::rademacher(), 64, RngStream::new(7, 1)).unwrap();
        assert_ne!(s3.increments(), s4.increments());
    }

    #[test]
    fn rademacher_mean_at_scale() {
        let s = sample_iid(&IidModel::rademacher(), 1_000_000, RngStream::new(11, 0)).unwrap();
        let mut sum = CompensatedSum::new();
        for &x in s.increments() {
            sum.add(x);
        }
        let mean = sum.value() / 1e6;
        assert!(mean.abs() < 0.004, "empirical mean {mean} beyond 3 SE");
    }

    #[test]
    fn uniform_second_moment() {
        let model = IidModel::uniform(1.0).unwrap();
        let s = sample_iid(&model, 1_000_000, RngStream::new(3, 5)).unwrap();
        let mut sum = CompensatedSum::new();
        for &x in s.increments() {
            sum.add(x * x);
        }
        let m2 = sum.value() / 1e6;
        // Var(X²) = 1/5 − 1/9 = 4/45; 3 SE ≈ 8.9e-4.
        assert!((m2 - 1.0 / 3.0).abs() < 9e-4, "second moment {m2}");
        assert!(s.increments().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn two_point_centering_and_moments() {
        let model = IidModel::two_point(3.0, 0.25).unwrap();
        let IidLaw::TwoPoint { up, down, p_up } = model.law() else {
            panic!("wrong law")
        };
        assert_eq!((*up, *p_up), (3.0, 0.25));
        assert!((down - (-1.0)).abs() < 1e-15);
        assert!((p_up * up + (1.0 - p_up) * down).abs() < 1e-15);
        // E X² = 0.25·9 + 0.75·1 = 3; E|X|³ = 0.25·27 + 0.75·1 = 7.5.
        assert!((model.variance() - 3.0).abs() < 1e-15);
        assert!((model.abs_moment(3.0) - 7.5).abs() < 1e-14);
        let s = sample_iid(&model, 1000, RngStream::new(1, 0)).unwrap();
        assert!(s.increments().iter().all(|v| *v == 3.0 || *v == -1.0));
    }

    #[test]
    fn discrete_recentring() {
        let model = IidModel::discrete(vec![0.0, 1.0, 5.0], vec![0.5, 0.25, 0.25]).unwrap();
        let IidLaw::Discrete { values, probs } = model.law() else {
            panic!("wrong law")
        };
        // Mean of the raw values is 1.5.
        assert_eq!(values, &vec![-1.5, -0.5, 3.5]);
        let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
        assert!(mean.abs() < 1e-15);
        // Variance: 0.5·2.25 + 0.25·0.25 + 0.25·12.25 = 4.25.
        assert!((model.variance() - 4.25).abs() < 1e-14);
    }

    #[test]
    fn law_validation() {
        assert!(IidModel::uniform(0.0).is_err());
        assert!(IidModel::two_point(1.0, 0.0).is_err());
        assert!(IidModel::two_point(0.0, 0.5).is_err());
        assert!(IidModel::discrete(vec![1.0], vec![1.0]).is_err()); // point mass
        assert!(IidModel::discrete(vec![1.0, 2.0], vec![0.6, 0.5]).is_err());
        assert!(IidModel::discrete(vec![1.0, 2.0], vec![0.7]).is_err());
        assert!(sample_iid(&IidModel::rademacher(), 0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn envelope_inputs_rademacher() {
        // kappa = 1 for Rademacher, so gamma = 1/√n; delta = 1/n.
        let (p, regime) = IidModel::rademacher().envelope_inputs(16, 1.0, 1.0).unwrap();
        assert_eq!(p.gamma, 0.25);
        assert_eq!(p.delta, 1.0 / 16.0);
        assert_eq!(regime, VarianceConcentration::Exponential);
        // Small n clamps into the admissible domain.
        let (p, _) = IidModel::rademacher().envelope_inputs(3, 1.0, 1.0).unwrap();
        assert_eq!(p.gamma, 0.25);
    }
}
