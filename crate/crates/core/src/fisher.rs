//! Expected Fisher information and the conditional-variance adjustment.
//!
//! The inverse information at a preposterior mean approximates the posterior
//! variance of φ. Those raw values are rescaled so that their average matches
//! the law-of-total-variance target for the study size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result};
use crate::pa_data::Likelihood;

/// Lower clamp for probabilities, upper is `1 − PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-6;
/// Lower clamp for Poisson means and exponential rates.
pub const RATE_CLAMP: f64 = 1e-9;

/// Slack for values that leave the domain only through rounding.
const DOMAIN_SLACK: f64 = 1e-12;

/// Clamps `phi` into the interior of the family's parameter space.
pub fn clamp_to_domain(family: Likelihood, phi: f64) -> Result<f64> {
    if !phi.is_finite() {
        return Err(EvsiError::Domain(format!("non-finite {} parameter", family.name())));
    }
    match family {
        Likelihood::Bernoulli | Likelihood::Binomial { .. } => {
            if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&phi) {
                return Err(EvsiError::Domain(format!("probability {phi} outside [0, 1]")));
            }
            Ok(phi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        }
        Likelihood::Poisson | Likelihood::Exponential => {
            if phi < -DOMAIN_SLACK {
                return Err(EvsiError::Domain(format!(
                    "{} parameter {phi} is negative",
                    family.name()
                )));
            }
            Ok(phi.max(RATE_CLAMP))
        }
        Likelihood::Gaussian | Likelihood::Custom => Ok(phi),
    }
}

/// Closed-form expected information of `n` observations at `phi`.
///
/// `sigma2` is only read for the Gaussian family.
pub fn expected_fisher(family: Likelihood, phi: f64, n: u64, sigma2: f64) -> Result<f64> {
    if n == 0 {
        return Err(EvsiError::Domain("information needs at least one observation".into()));
    }
    let nf = n as f64;
    let p = clamp_to_domain(family, phi)?;
    // n times the single-observation information, so additivity in n is exact
    let unit = match family {
        Likelihood::Gaussian => {
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(EvsiError::Domain(format!("sigma2 must be positive, got {sigma2}")));
            }
            1.0 / sigma2
        }
        Likelihood::Bernoulli => 1.0 / (p * (1.0 - p)),
        Likelihood::Binomial { trials } => f64::from(trials) / (p * (1.0 - p)),
        Likelihood::Poisson => 1.0 / p,
        Likelihood::Exponential => 1.0 / (p * p),
        Likelihood::Custom => return Err(EvsiError::UnsupportedFamily(family.name().into())),
    };
    Ok(nf * unit)
}

/// Monte Carlo estimate of `−n·E[∂²/∂φ² log f(X; φ)]` using central differences.
///
/// `sampler` draws one observation at `phi`. Fails when the estimate is not
/// clearly above the floating-point noise of the difference quotient.
pub fn numeric_expected_fisher<L, S>(
    log_density: L,
    sampler: S,
    phi: f64,
    n: u64,
    draws: usize,
    seed: u64,
) -> Result<f64>
where
    L: Fn(f64, f64) -> f64,
    S: Fn(f64, &mut ChaCha8Rng) -> f64,
{
    if draws == 0 {
        return Err(EvsiError::InsufficientData { needed: 1, got: 0 });
    }
    let h = (1e-4 * phi.abs()).max(1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curvature = 0.0;
    let mut magnitude = 0.0;
    for _ in 0..draws {
        let x = sampler(phi, &mut rng);
        let (lo, mid, hi) = (log_density(x, phi - h), log_density(x, phi), log_density(x, phi + h));
        curvature += (hi - 2.0 * mid + lo) / (h * h);
        magnitude += lo.abs() + mid.abs() + hi.abs();
    }
    let d = draws as f64;
    let info = -(n as f64) * curvature / d;
    let noise = 64.0 * f64::EPSILON * (magnitude / (3.0 * d)) / (h * h) * n as f64;
    if !info.is_finite() || info <= noise {
        return Err(EvsiError::NumericInstability(format!(
            "numeric information {info:e} at phi={phi} is not above the noise level {noise:e}"
        )));
    }
    Ok(info)
}

/// How the average conditional variance is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// `σ²/(n0+n)`, the expected posterior variance of the conjugate Gaussian model.
    #[default]
    PosteriorVariance,
    /// `v·σ²/n0`, the variance of the preposterior mean.
    PreposteriorMeanVariance,
}

/// `σ²/(n0+n)`, equal to `(1−v)·σ²/n0`.
pub fn target_conditional_variance(n: u64, n0: f64, sigma2: f64) -> f64 {
    sigma2 / (n0 + n as f64)
}

pub fn target_variance_with(rule: TargetRule, n: u64, n0: f64, sigma2: f64) -> f64 {
    match rule {
        TargetRule::PosteriorVariance => target_conditional_variance(n, n0, sigma2),
        TargetRule::PreposteriorMeanVariance => {
            let nf = n as f64;
            nf / (n0 + nf) * sigma2 / n0
        }
    }
}

/// Per-sample conditional variances of one focal parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalVariances {
    /// Inverse expected information at each preposterior mean.
    pub raw: Vec<f64>,
    pub adjusted: Vec<f64>,
    pub c: f64,
    pub target: f64,
}

impl ConditionalVariances {
    /// Same variance for every row, as when information is constant in φ.
    pub fn constant(value: f64, m: usize) -> Self {
        Self {
            raw: vec![value; m],
            adjusted: vec![value; m],
            c: 1.0,
            target: value,
        }
    }

    /// Raw inverse information used as is.
    pub fn unadjusted(raw: Vec<f64>) -> Result<Self> {
        check_positive(&raw)?;
        let target = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self {
            adjusted: raw.clone(),
            raw,
            c: 1.0,
            target,
        })
    }
}

fn check_positive(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(EvsiError::InsufficientData { needed: 1, got: 0 });
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(EvsiError::Domain(format!(
            "inverse information must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

/// Scales `inv_info` by `C = target / mean(inv_info)`.
pub fn adjust_conditional_variances(inv_info: &[f64], target: f64) -> Result<ConditionalVariances> {
    check_positive(inv_info)?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(EvsiError::Domain(format!("target variance must be positive, got {target}")));
    }
    let mean = inv_info.iter().sum::<f64>() / inv_info.len() as f64;
    let c = target / mean;
    Ok(ConditionalVariances {
        raw: inv_info.to_vec(),
        adjusted: inv_info.iter().map(|x| c * x).collect(),
        c,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn closed_forms() {
        let b = expected_fisher(Likelihood::Bernoulli, 0.25, 20, 0.0).unwrap();
        assert!((b - 20.0 / (0.25 * 0.75)).abs() < 1e-12);
        assert_eq!(expected_fisher(Likelihood::Poisson, 1.0, 10, 0.0).unwrap(), 10.0);
        assert_eq!(expected_fisher(Likelihood::Gaussian, 0.3, 5, 1.0).unwrap(), 5.0);
        let bin = expected_fisher(Likelihood::Binomial { trials: 4 }, 0.5, 3, 0.0).unwrap();
        assert_eq!(bin, 48.0);
        assert_eq!(expected_fisher(Likelihood::Exponential, 2.0, 8, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn clamping_and_domain() {
        let edge = expected_fisher(Likelihood::Bernoulli, 0.0, 1, 0.0).unwrap();
        assert!((edge - 1.0 / (PROB_CLAMP * (1.0 - PROB_CLAMP))).abs() < 1e-3);
        assert!(expected_fisher(Likelihood::Bernoulli, 1.0, 1, 0.0).unwrap().is_finite());
        assert_eq!(expected_fisher(Likelihood::Poisson, 0.0, 1, 0.0).unwrap(), 1.0 / RATE_CLAMP);
        assert!(matches!(
            expected_fisher(Likelihood::Bernoulli, 1.5, 1, 0.0),
            Err(EvsiError::Domain(_))
        ));
        assert!(expected_fisher(Likelihood::Poisson, -0.5, 1, 0.0).is_err());
        assert!(expected_fisher(Likelihood::Gaussian, f64::NAN, 1, 1.0).is_err());
        assert!(expected_fisher(Likelihood::Gaussian, 0.0, 0, 1.0).is_err());
        assert!(matches!(
            expected_fisher(Likelihood::Custom, 0.0, 1, 1.0),
            Err(EvsiError::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn numeric_gaussian() {
        let info = numeric_expected_fisher(
            |x, p| -0.5 * (x - p) * (x - p),
            |p, rng| Normal::new(p, 1.0).unwrap().sample(rng),
            0.0,
            1,
            10_000,
            3,
        )
        .unwrap();
        assert!((info - 1.0).abs() < 0.02);
    }

    #[test]
    fn numeric_bernoulli() {
        let info = numeric_expected_fisher(
            |x, p| x * p.ln() + (1.0 - x) * (1.0 - p).ln(),
            |p, rng| if rng.random::<f64>() < p { 1.0 } else { 0.0 },
            0.5,
            1,
            10_000,
            5,
        )
        .unwrap();
        assert!((info - 4.0).abs() < 0.08, "{info}");
    }

    #[test]
    fn numeric_poisson_scales_with_n() {
        let ld = |x: f64, p: f64| x * p.ln() - p;
        let sm = |p: f64, rng: &mut ChaCha8Rng| Poisson::new(p).unwrap().sample(rng);
        let one = numeric_expected_fisher(ld, sm, 2.0, 1, 1000, 9).unwrap();
        let ten = numeric_expected_fisher(ld, sm, 2.0, 10, 1000, 9).unwrap();
        assert!((ten - 10.0 * one).abs() < 1e-9 * ten);
    }

    #[test]
    fn numeric_zero_curvature_is_instability() {
        let r = numeric_expected_fisher(|x, p| x * p, |_, rng| rng.random::<f64>(), 1.0, 1, 1000, 1);
        assert!(matches!(r, Err(EvsiError::NumericInstability(_))));
        let r = numeric_expected_fisher(|_, _| 3.0, |_, _| 0.0, 1.0, 1, 10, 1);
        assert!(matches!(r, Err(EvsiError::NumericInstability(_))));
    }

    #[test]
    fn numeric_is_deterministic() {
        let ld = |x: f64, p: f64| x * p.ln() + (1.0 - x) * (1.0 - p).ln();
        let sm = |p: f64, rng: &mut ChaCha8Rng| f64::from(u8::from(rng.random::<f64>() < p));
        let a = numeric_expected_fisher(ld, sm, 0.3, 4, 500, 42).unwrap();
        let b = numeric_expected_fisher(ld, sm, 0.3, 4, 500, 42).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn targets() {
        assert!((target_conditional_variance(10, 5.0, 1.0) - 1.0 / 15.0).abs() < 1e-15);
        assert!((target_conditional_variance(0, 5.0, 1.0) - 0.2).abs() < 1e-15);
        assert!(target_conditional_variance(u64::MAX, 5.0, 1.0) < 1e-18);
        let lit = target_variance_with(TargetRule::PreposteriorMeanVariance, 10, 5.0, 1.0);
        assert!((lit - 2.0 / 15.0).abs() < 1e-15);
        // both readings coincide when n = n0
        let a = target_variance_with(TargetRule::PosteriorVariance, 5, 5.0, 1.0);
        let b = target_variance_with(TargetRule::PreposteriorMeanVariance, 5, 5.0, 1.0);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn adjustment_examples() {
        let g = adjust_conditional_variances(&[0.1; 4], 1.0 / 15.0).unwrap();
        assert!((g.c - 2.0 / 3.0).abs() < 1e-15);
        assert!(g.adjusted.iter().all(|a| (a - 1.0 / 15.0).abs() < 1e-15));
        let a = adjust_conditional_variances(&[1.0, 3.0], 1.0).unwrap();
        assert_eq!((a.c, a.adjusted.clone()), (0.5, vec![0.5, 1.5]));
        let f = adjust_conditional_variances(&[1.0, 3.0], 2.0).unwrap();
        assert_eq!(f.c, 1.0);
        assert_eq!(f.adjusted, f.raw);
        assert!(adjust_conditional_variances(&[1.0, 0.0], 1.0).is_err());
        assert!(adjust_conditional_variances(&[1.0, -2.0], 1.0).is_err());
        assert!(adjust_conditional_variances(&[1.0], 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adjusted_mean_hits_target(
                raw in prop::collection::vec(1e-6f64..1e3, 1..200),
                target in 1e-6f64..1e3,
            ) {
                let cv = adjust_conditional_variances(&raw, target).unwrap();
                let mean = cv.adjusted.iter().sum::<f64>() / raw.len() as f64;
                prop_assert!(((mean - target) / target).abs() < 1e-12);
                prop_assert!(cv.adjusted.iter().all(|a| *a > 0.0));
            }

            #[test]
            fn gaussian_adjusts_to_posterior_variance(
                n in 1u64..5000,
                n0 in 0.01f64..500.0,
                sigma2 in 1e-4f64..1e4,
                phis in prop::collection::vec(-50.0f64..50.0, 1..50),
            ) {
                let raw: Vec<f64> = phis
                    .iter()
                    .map(|p| 1.0 / expected_fisher(Likelihood::Gaussian, *p, n, sigma2).unwrap())
                    .collect();
                let target = target_conditional_variance(n, n0, sigma2);
                let cv = adjust_conditional_variances(&raw, target).unwrap();
                for a in &cv.adjusted {
                    prop_assert!((a - target).abs() <= 1e-12 * target);
                }
            }

            #[test]
            fn information_is_additive(
                p in 0.0f64..1.0,
                rate in 0.0f64..100.0,
                n in 1u64..100_000,
                trials in 1u32..50,
            ) {
                for (family, phi) in [
                    (Likelihood::Bernoulli, p),
                    (Likelihood::Binomial { trials }, p),
                    (Likelihood::Poisson, rate),
                    (Likelihood::Exponential, rate),
                    (Likelihood::Gaussian, rate),
                ] {
                    let one = expected_fisher(family, phi, 1, 2.0).unwrap();
                    let many = expected_fisher(family, phi, n, 2.0).unwrap();
                    prop_assert_eq!(many, n as f64 * one);
                }
            }
        }
    }
}
