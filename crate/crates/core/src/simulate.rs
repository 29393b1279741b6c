//! Simulating study data from a likelihood family.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};

use crate::error::{EvsiError, Result};
use crate::fisher::clamp_to_domain;
use crate::pa_data::Likelihood;

/// Sample mean of `n` observations drawn at `phi`, sampled exactly from its
/// distribution rather than observation by observation.
///
/// For the binomial family one observation is the success proportion out of
/// `trials`; for the exponential family it is a waiting time (mean `1/phi`).
pub fn simulate_sample_mean<R: Rng + ?Sized>(
    family: Likelihood,
    phi: f64,
    sigma2: f64,
    n: u64,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(EvsiError::Domain("cannot simulate an empty study".into()));
    }
    let nf = n as f64;
    let bad = |e: &dyn std::fmt::Display| EvsiError::Domain(format!("{} sampler: {e}", family.name()));
    Ok(match family {
        Likelihood::Gaussian => {
            if !(sigma2 > 0.0 && phi.is_finite()) {
                return Err(EvsiError::Domain(format!("invalid gaussian mean {phi} or variance {sigma2}")));
            }
            Normal::new(phi, (sigma2 / nf).sqrt()).map_err(|e| bad(&e))?.sample(rng)
        }
        Likelihood::Bernoulli => {
            let p = clamp_to_domain(family, phi)?;
            Binomial::new(n, p).map_err(|e| bad(&e))?.sample(rng) as f64 / nf
        }
        Likelihood::Binomial { trials } => {
            let p = clamp_to_domain(family, phi)?;
            let total = n * u64::from(trials);
            Binomial::new(total, p).map_err(|e| bad(&e))?.sample(rng) as f64 / total as f64
        }
        Likelihood::Poisson => {
            let lambda = clamp_to_domain(family, phi)? * nf;
            Poisson::new(lambda).map_err(|e| bad(&e))?.sample(rng) / nf
        }
        Likelihood::Exponential => {
            let rate = clamp_to_domain(family, phi)?;
            // sum of n exponential waiting times is Gamma(n, 1/rate)
            Gamma::new(nf, 1.0 / rate).map_err(|e| bad(&e))?.sample(rng) / nf
        }
        Likelihood::Custom => return Err(EvsiError::UnsupportedFamily(family.name().into())),
    })
}
