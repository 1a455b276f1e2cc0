//! Self-normalized statistics and deviation envelopes.
//!
//! For increments X_1..X_n the self-normalized sum is
//! W = (X_1 + ... + X_n) / sqrt(X_1^2 + ... + X_n^2). The classical Student
//! t statistic is an algebraic function of W: T >= x holds exactly when
//! W >= chung_transform(x, n), which the laboratory uses both as a fast
//! evaluation route and as a cross-check between two independent
//! implementations. Block self-normalization groups the increments into
//! blocks of length m, sums within blocks, and self-normalizes the block
//! sums; with m = 1 it reduces bit-for-bit to plain self-normalization.
//!
//! The envelope functions express the relative-error bound for
//! P(W >= x) / (1 - Phi(x)) in terms of a moment scale gamma, a
//! variance-concentration scale delta, and the exponent rho of the available
//! conditional moments. Two variance-concentration regimes are supported:
//! exponential concentration contributes an x^2 * delta term, Gaussian
//! concentration an x^3 * delta term.

use crate::error::{LabError, Result};

/// Neumaier-compensated accumulator. All statistic sums in the crate go
/// through this so that results do not depend on summation luck.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A finite, non-empty vector of increments.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    increments: Vec<f64>,
}

impl Sample {
    pub fn new(increments: Vec<f64>) -> Result<Self> {
        if increments.is_empty() {
            return Err(LabError::Domain("sample must be non-empty".into()));
        }
        if let Some(bad) = increments.iter().find(|v| !v.is_finite()) {
            return Err(LabError::Domain(format!("non-finite increment {bad}")));
        }
        Ok(Self { increments })
    }

    pub fn n(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }
}

/// Sum, squared-sum bracket, and the self-normalized value W.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfNormStats {
    pub sum: f64,
    pub bracket: f64,
    pub w: f64,
}

/// W = S_n / sqrt([S]_n). Errors if every increment is zero, in which case
/// the statistic is undefined.
pub fn self_normalized(sample: &Sample) -> Result<SelfNormStats> {
    let mut s = CompensatedSum::new();
    let mut b = CompensatedSum::new();
    for &x in sample.increments() {
        s.add(x);
        b.add(x * x);
    }
    let sum = s.value();
    let bracket = b.value();
    if bracket == 0.0 {
        return Err(LabError::Degenerate(
            "all increments are zero, [S]_n = 0".into(),
        ));
    }
    Ok(SelfNormStats {
        sum,
        bracket,
        w: sum / bracket.sqrt(),
    })
}

/// Student t statistic sqrt(n) * mean / sd, with the unbiased-variance sd.
/// Needs n >= 2 and a non-degenerate sample.
pub fn student_t(sample: &Sample) -> Result<f64> {
    let n = sample.n();
    if n < 2 {
        return Err(LabError::Domain(format!(
            "student t needs at least 2 increments, got {n}"
        )));
    }
    let nf = n as f64;
    let mut s = CompensatedSum::new();
    for &x in sample.increments() {
        s.add(x);
    }
    let mean = s.value() / nf;
    let mut q = CompensatedSum::new();
    for &x in sample.increments() {
        let d = x - mean;
        q.add(d * d);
    }
    let var = q.value() / (nf - 1.0);
    if var <= 0.0 {
        return Err(LabError::Degenerate(
            "sample standard deviation is zero".into(),
        ));
    }
    Ok(nf.sqrt() * mean / var.sqrt())
}

/// Threshold map between the t statistic and the self-normalized sum:
/// {T_n >= x} = {W_n >= chung_transform(x, n)} pointwise for x >= 0.
pub fn chung_transform(x: f64, n: usize) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(LabError::Domain(format!(
            "chung transform needs finite x >= 0, got {x}"
        )));
    }
    if n < 2 {
        return Err(LabError::Domain(format!(
            "chung transform needs n >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    Ok(x * (nf / (nf + x * x - 1.0)).sqrt())
}

/// Self-normalization over block sums: the increments are cut into
/// k = floor(n/m) blocks of length m (trailing remainder discarded), summed
/// within blocks, and the block sums are self-normalized.
pub fn block_self_normalized(sample: &Sample, m: usize) -> Result<SelfNormStats> {
    if m == 0 {
        return Err(LabError::Domain("block length m must be >= 1".into()));
    }
    let k = sample.n() / m;
    if k == 0 {
        return Err(LabError::Domain(format!(
            "block length {m} exceeds sample size {}",
            sample.n()
        )));
    }
    let xs = sample.increments();
    let mut block_sums = Vec::with_capacity(k);
    for j in 0..k {
        let mut s = CompensatedSum::new();
        for &x in &xs[j * m..(j + 1) * m] {
            s.add(x);
        }
        block_sums.push(s.value());
    }
    self_normalized(&Sample::new(block_sums)?)
}

/// Parameters of the relative-error envelope.
///
/// `rho` is the conditional moment exponent in (0, 1] (moments of order
/// 2 + rho are available), `gamma` the moment scale, `delta` the
/// variance-concentration scale, both in (0, 1/4], and `c` a positive
/// multiplicative constant (fitted from data or set to 1 for the bare
/// shape).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeParams {
    pub rho: f64,
    pub gamma: f64,
    pub delta: f64,
    pub c: f64,
}

impl EnvelopeParams {
    pub fn new(rho: f64, gamma: f64, delta: f64, c: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(LabError::Domain(format!("rho {rho} outside (0, 1]")));
        }
        if !(gamma > 0.0 && gamma <= 0.25) {
            return Err(LabError::Domain(format!("gamma {gamma} outside (0, 1/4]")));
        }
        if !(delta > 0.0 && delta <= 0.25) {
            return Err(LabError::Domain(format!("delta {delta} outside (0, 1/4]")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(LabError::Domain(format!("envelope constant {c} <= 0")));
        }
        Ok(Self {
            rho,
            gamma,
            delta,
            c,
        })
    }
}

/// How sharply the conditional variance concentrates around its
/// deterministic normalizer; decides the delta term of the envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceConcentration {
    /// Tail of the variance deviation decays like exp(-x / delta^2);
    /// contributes x^2 * delta.
    Exponential,
    /// Tail decays like exp(-x^2 / delta^2); contributes x^3 * delta.
    Gaussian,
}

/// Combined moment-decay weight gamma^{rho(2-rho)/4} / (1 + x^{rho(2+rho)/4}).
/// Decreasing in x, so the envelope stays useful deep into the tail.
pub fn decay_weight(gamma: f64, x: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(LabError::Domain(format!("rho {rho} outside (0, 1]")));
    }
    if !(gamma > 0.0 && gamma <= 0.25) {
        return Err(LabError::Domain(format!("gamma {gamma} outside (0, 1/4]")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(LabError::Domain(format!("decay weight needs x >= 0, got {x}")));
    }
    Ok(gamma.powf(rho * (2.0 - rho) / 4.0) / (1.0 + x.powf(rho * (2.0 + rho) / 4.0)))
}

/// Envelope for |ln of the tail ratio| at threshold x:
///
/// c * ( x^{2+rho} gamma^rho  +  x^q delta  +  (1+x)(decay_weight + delta |ln delta|) )
///
/// with q = 2 under exponential variance concentration and q = 3 under
/// Gaussian concentration.
pub fn log_ratio_envelope(
    x: f64,
    params: &EnvelopeParams,
    regime: VarianceConcentration,
) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(LabError::Domain(format!("envelope needs x >= 0, got {x}")));
    }
    let EnvelopeParams {
        rho,
        gamma,
        delta,
        c,
    } = *params;
    let moment_term = x.powf(2.0 + rho) * gamma.powf(rho);
    let variance_term = match regime {
        VarianceConcentration::Exponential => x * x * delta,
        VarianceConcentration::Gaussian => x * x * x * delta,
    };
    let slow_term = (1.0 + x) * (decay_weight(gamma, x, rho)? + delta * delta.ln().abs());
    Ok(c * (moment_term + variance_term + slow_term))
}

/// Aggregated variance-concentration scale for nested block schemes:
/// (sum_{j=1..k} j^{-1/2} delta_j) / sqrt(k), where delta_j is the scale of
/// the j-th block prefix.
pub fn aggregate_block_scale(deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        return Err(LabError::Domain("empty block scale sequence".into()));
    }
    if let Some(bad) = deltas.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(LabError::Domain(format!("invalid block scale {bad}")));
    }
    let k = deltas.len() as f64;
    let mut s = CompensatedSum::new();
    for (j, &d) in deltas.iter().enumerate() {
        s.add(d / ((j as f64 + 1.0).sqrt()));
    }
    Ok(s.value() / k.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    #[test]
    fn self_normalized_small_cases() {
        let st = self_normalized(&s(&[1.0, -1.0, 1.0])).unwrap();
        assert_eq!(st.sum, 1.0);
        assert_eq!(st.bracket, 3.0);
        assert!((st.w - 1.0 / 3.0_f64.sqrt()).abs() < 1e-15);
        // Single increment: W = sign.
        assert_eq!(self_normalized(&s(&[-2.5])).unwrap().w, -1.0);
    }

    #[test]
    fn self_normalized_zero_bracket_is_error() {
        assert!(matches!(
            self_normalized(&s(&[0.0, 0.0])),
            Err(LabError::Degenerate(_))
        ));
    }

    #[test]
    fn student_t_small_cases() {
        // mean 3, sd 1: T = sqrt(3) * 3.
        let t = student_t(&s(&[2.0, 3.0, 4.0])).unwrap();
        assert!((t - 3.0 * 3.0_f64.sqrt()).abs() < 1e-12);
        assert!((t - 5.196152422706632).abs() < 1e-12);
        assert!(matches!(
            student_t(&s(&[1.0, 1.0, 1.0])),
            Err(LabError::Degenerate(_))
        ));
        assert!(student_t(&s(&[1.0])).is_err());
    }

    #[test]
    fn chung_transform_values() {
        let y = chung_transform(2.0, 4).unwrap();
        assert!((y - 2.0 * (4.0_f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!((y - 1.5118578920369088).abs() < 1e-12);
        assert_eq!(chung_transform(0.0, 5).unwrap(), 0.0);
        // x = 1 is the fixed point for every n.
        for n in [2usize, 3, 10, 1000] {
            assert!((chung_transform(1.0, n).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(chung_transform(-0.1, 4).is_err());
        assert!(chung_transform(1.0, 1).is_err());
    }

    #[test]
    fn block_cases() {
        // Blocks (0, 0, 2): W = 2 / sqrt(4) = 1.
        let st = block_self_normalized(&s(&[1.0, -1.0, 2.0, -2.0, 1.0, 1.0]), 2).unwrap();
        assert_eq!(st.w, 1.0);
        // Trailing remainder is discarded: n = 7, m = 3 keeps 6 increments.
        let full = block_self_normalized(&s(&[1.0, 2.0, -1.0, 0.5, 0.25, -3.0, 9.9]), 3).unwrap();
        let trimmed = block_self_normalized(&s(&[1.0, 2.0, -1.0, 0.5, 0.25, -3.0]), 3).unwrap();
        assert_eq!(full, trimmed);
        assert!(block_self_normalized(&s(&[1.0]), 2).is_err());
        assert!(block_self_normalized(&s(&[1.0]), 0).is_err());
    }

    #[test]
    fn decay_weight_values() {
        let g = decay_weight(1.0 / 16.0, 1.0, 1.0).unwrap();
        assert!((g - 0.25).abs() < 1e-15);
        assert!(decay_weight(0.3, 1.0, 1.0).is_err());
        assert!(decay_weight(0.1, 1.0, 1.5).is_err());
    }

    #[test]
    fn envelope_values() {
        // x = 0: only the slow term survives: 0.25^{1/4} + 0.25 ln 4.
        let p = EnvelopeParams::new(1.0, 0.25, 0.25, 1.0).unwrap();
        let e = log_ratio_envelope(0.0, &p, VarianceConcentration::Exponential).unwrap();
        assert!((e - 1.0536803714665203).abs() < 1e-12);

        let p = EnvelopeParams::new(1.0, 1.0 / 16.0, 1.0 / 16.0, 1.0).unwrap();
        let e = log_ratio_envelope(1.0, &p, VarianceConcentration::Exponential).unwrap();
        assert!((e - 0.9715735902799726).abs() < 1e-12);

        let e3 = log_ratio_envelope(2.0, &p, VarianceConcentration::Gaussian).unwrap();
        assert!((e3 - 2.0791877066568425).abs() < 1e-12);

        // Doubling c doubles the envelope.
        let p2 = EnvelopeParams::new(1.0, 1.0 / 16.0, 1.0 / 16.0, 2.0).unwrap();
        let e2 = log_ratio_envelope(1.0, &p2, VarianceConcentration::Exponential).unwrap();
        assert!((e2 - 2.0 * e).abs() < 1e-12);
    }

    #[test]
    fn envelope_param_validation() {
        assert!(EnvelopeParams::new(0.0, 0.1, 0.1, 1.0).is_err());
        assert!(EnvelopeParams::new(1.1, 0.1, 0.1, 1.0).is_err());
        assert!(EnvelopeParams::new(0.5, 0.26, 0.1, 1.0).is_err());
        assert!(EnvelopeParams::new(0.5, 0.1, 0.0, 1.0).is_err());
        assert!(EnvelopeParams::new(0.5, 0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn aggregate_block_scale_values() {
        // delta_j = (4j)^{-1/2}: the sum telescopes to (1/2) H_4 / 2.
        let deltas: Vec<f64> = (1..=4).map(|j| 1.0 / (4.0 * j as f64).sqrt()).collect();
        let e = aggregate_block_scale(&deltas).unwrap();
        assert!((e - 25.0 / 48.0).abs() < 1e-15);

        let e = aggregate_block_scale(&[0.1; 4]).unwrap();
        assert!((e - 0.13922285251880868).abs() < 1e-15);

        // Single block: epsilon = delta.
        let e = aggregate_block_scale(&[0.07]).unwrap();
        assert!((e - 0.07).abs() < 1e-16);

        assert!(aggregate_block_scale(&[]).is_err());
        assert!(aggregate_block_scale(&[0.1, -0.2]).is_err());
    }

    #[test]
    fn block_m1_bit_identical() {
        let xs = [0.1, -2.7, 3.14159, 0.5, -0.3333, 8.25, -1e-3];
        let a = self_normalized(&s(&xs)).unwrap();
        let b = block_self_normalized(&s(&xs), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        // 1 + 1e-16 repeated: naive summation loses the small term.
        let mut c = CompensatedSum::new();
        c.add(1.0);
        for _ in 0..10 {
            c.add(1e-16);
        }
        c.add(-1.0);
        // Naive left-to-right summation would return exactly 0 here.
        assert!((c.value() - 1e-15).abs() < 1e-17);
    }

    proptest! {
        #[test]
        fn w_bounded_by_sqrt_n(xs in prop::collection::vec(-100.0f64..100.0, 1..60)) {
            prop_assume!(xs.iter().any(|v| *v != 0.0));
            let st = self_normalized(&s(&xs)).unwrap();
            let n = xs.len() as f64;
            // |W| <= sqrt(n) by Cauchy-Schwarz, with a hair of float slack.
            prop_assert!(st.w.abs() <= n.sqrt() * (1.0 + 1e-12));
        }

        #[test]
        fn w_scale_invariant_pow2(xs in prop::collection::vec(-100.0f64..100.0, 1..40), k in -8i32..9) {
            prop_assume!(xs.iter().any(|v| *v != 0.0));
            let c = (2.0f64).powi(k);
            let scaled: Vec<f64> = xs.iter().map(|v| v * c).collect();
            let a = self_normalized(&s(&xs)).unwrap().w;
            let b = self_normalized(&s(&scaled)).unwrap().w;
            // Power-of-two scaling is exact in binary floating point.
            prop_assert_eq!(a, b);
        }

        #[test]
        fn w_scale_invariant_general(xs in prop::collection::vec(-10.0f64..10.0, 2..40), c in 0.001f64..1000.0) {
            prop_assume!(xs.iter().any(|v| v.abs() > 1e-6));
            let scaled: Vec<f64> = xs.iter().map(|v| v * c).collect();
            let a = self_normalized(&s(&xs)).unwrap().w;
            let b = self_normalized(&s(&scaled)).unwrap().w;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn chung_equivalence_pointwise(xs in prop::collection::vec(-5.0f64..5.0, 2..50), x in 0.0f64..4.0) {
            let sample = s(&xs);
            let t = match student_t(&sample) {
                Ok(t) => t,
                Err(_) => return Ok(()),
            };
            let w = self_normalized(&sample).unwrap().w;
            let y = chung_transform(x, xs.len()).unwrap();
            prop_assert_eq!(t >= x, w >= y, "t={} x={} w={} y={}", t, x, w, y);
        }

        #[test]
        fn decay_weight_monotone_in_x(gamma in 0.001f64..0.25, rho in 0.1f64..1.0, x1 in 0.0f64..10.0, dx in 0.0f64..10.0) {
            let a = decay_weight(gamma, x1, rho).unwrap();
            let b = decay_weight(gamma, x1 + dx, rho).unwrap();
            prop_assert!(b <= a + 1e-15);
        }

        #[test]
        fn envelope_monotone_in_scales(
            rho in 0.1f64..1.0,
            g1 in 0.001f64..0.25,
            d1 in 0.001f64..0.25,
            x in 0.0f64..6.0,
        ) {
            // Shrinking gamma and delta can only shrink the envelope.
            let g2 = g1 * 0.5;
            let d2 = d1 * 0.5;
            let p1 = EnvelopeParams::new(rho, g1, d1, 1.0).unwrap();
            let p2 = EnvelopeParams::new(rho, g2, d2, 1.0).unwrap();
            for regime in [VarianceConcentration::Exponential, VarianceConcentration::Gaussian] {
                let e1 = log_ratio_envelope(x, &p1, regime).unwrap();
                let e2 = log_ratio_envelope(x, &p2, regime).unwrap();
                prop_assert!(e2 <= e1 * (1.0 + 1e-12));
            }
        }
    }
}
