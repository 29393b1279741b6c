//! Gaussian approximation of preposterior means.
//!
//! Under a conjugate Gaussian model the posterior mean of φ after `n` observations
//! has marginal variance `v·Var[φ]` with `v = n/(n0+n)`. Prior samples are
//! shrunk linearly towards the prior mean to mimic that distribution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result};
use crate::pa_data::{DataCollectionSpec, Likelihood, PaDataset};

/// Share of prior variance resolved by a study of size `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceFraction {
    pub v: f64,
    /// `None` for the perfect-information limit `v = 1`.
    pub n: Option<u64>,
    pub n0: f64,
}

impl VarianceFraction {
    /// The `n → ∞` limit, where preposterior means equal the prior draws.
    pub fn perfect_information(n0: f64) -> Self {
        Self { v: 1.0, n: None, n0 }
    }
}

pub fn variance_fraction(n: u64, n0: f64) -> Result<VarianceFraction> {
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(EvsiError::Domain(format!("n0 must be positive, got {n0}")));
    }
    let nf = n as f64;
    Ok(VarianceFraction {
        v: nf / (n0 + nf),
        n: Some(n),
        n0,
    })
}

/// `√v·φᵢ + (1−√v)·μ₀` for every sample.
pub fn rescale_prior_samples(phi: &[f64], mu0: f64, v: VarianceFraction) -> Vec<f64> {
    if v.v == 0.0 {
        return vec![mu0; phi.len()];
    }
    if v.v == 1.0 {
        return phi.to_vec();
    }
    let r = v.v.sqrt();
    let shift = (1.0 - r) * mu0;
    phi.iter().map(|p| r * p + shift).collect()
}

/// Rescaled samples μ_X, one column per focal parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PreposteriorMeans {
    pub mu_x: DMatrix<f64>,
}

impl PreposteriorMeans {
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let m = cols.first().map_or(0, Vec::len);
        if cols.is_empty() || cols.iter().any(|c| c.len() != m) {
            return Err(EvsiError::Shape("preposterior columns must be nonempty and equal length".into()));
        }
        Ok(Self {
            mu_x: DMatrix::from_vec(m, cols.len(), cols.concat()),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.mu_x.nrows()
    }

    pub fn n_focal(&self) -> usize {
        self.mu_x.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let m = self.n_samples();
        &self.mu_x.as_slice()[j * m..(j + 1) * m]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.mu_x.row(i).iter().copied().collect()
    }

    /// Copies row `i` into `out`, which must have one slot per focal column.
    pub fn fill_row(&self, i: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.mu_x.row(i).iter()) {
            *o = *v;
        }
    }
}

/// Rescales every focal column of `pa` for study size `n`, each with its own `n0`.
pub fn preposterior_means(pa: &PaDataset, spec: &DataCollectionSpec, n: u64) -> Result<PreposteriorMeans> {
    spec.check_against(pa)?;
    let cols = pa
        .focal_columns(&spec.focal_indices)?
        .into_iter()
        .enumerate()
        .map(|(j, phi)| Ok(rescale_prior_samples(phi, spec.mu0[j], variance_fraction(n, spec.n0[j])?)))
        .collect::<Result<Vec<_>>>()?;
    PreposteriorMeans::from_columns(&cols)
}

/// Priors with a closed-form effective sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConjugatePrior {
    /// Normal prior on a Normal mean with known observation variance.
    Gaussian { mean: f64, variance: f64, obs_variance: f64 },
    BetaBernoulli { alpha: f64, beta: f64 },
    BetaBinomial { alpha: f64, beta: f64, trials: u32 },
    /// Gamma(shape α, rate β) prior on a Poisson mean.
    GammaPoisson { alpha: f64, beta: f64 },
    /// Gamma(shape α, rate β) prior on an exponential rate.
    GammaExponential { alpha: f64, beta: f64 },
}

/// Prior effective sample size together with the matching mean and per-observation variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorEss {
    pub n0: f64,
    pub mu0: f64,
    pub sigma2: f64,
}

impl ConjugatePrior {
    pub fn likelihood(&self) -> Likelihood {
        match self {
            ConjugatePrior::Gaussian { .. } => Likelihood::Gaussian,
            ConjugatePrior::BetaBernoulli { .. } => Likelihood::Bernoulli,
            ConjugatePrior::BetaBinomial { trials, .. } => Likelihood::Binomial { trials: *trials },
            ConjugatePrior::GammaPoisson { .. } => Likelihood::Poisson,
            ConjugatePrior::GammaExponential { .. } => Likelihood::Exponential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(EvsiError::Domain(format!("{name} must be positive, got {x}")))
            }
        };
        match *self {
            ConjugatePrior::Gaussian {
                mean,
                variance,
                obs_variance,
            } => {
                if !mean.is_finite() {
                    return Err(EvsiError::Domain("prior mean must be finite".into()));
                }
                positive("prior variance", variance)?;
                positive("observation variance", obs_variance)
            }
            ConjugatePrior::BetaBernoulli { alpha, beta }
            | ConjugatePrior::GammaPoisson { alpha, beta }
            | ConjugatePrior::GammaExponential { alpha, beta } => {
                positive("alpha", alpha)?;
                positive("beta", beta)
            }
            ConjugatePrior::BetaBinomial { alpha, beta, trials } => {
                positive("alpha", alpha)?;
                positive("beta", beta)?;
                if trials == 0 {
                    return Err(EvsiError::Domain("binomial trials must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ConjugatePrior::Gaussian { mean, .. } => mean,
            ConjugatePrior::BetaBernoulli { alpha, beta }
            | ConjugatePrior::BetaBinomial { alpha, beta, .. } => alpha / (alpha + beta),
            ConjugatePrior::GammaPoisson { alpha, beta }
            | ConjugatePrior::GammaExponential { alpha, beta } => alpha / beta,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ConjugatePrior::Gaussian { variance, .. } => variance,
            ConjugatePrior::BetaBernoulli { alpha, beta }
            | ConjugatePrior::BetaBinomial { alpha, beta, .. } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            ConjugatePrior::GammaPoisson { alpha, beta }
            | ConjugatePrior::GammaExponential { alpha, beta } => alpha / (beta * beta),
        }
    }

    pub fn ess(&self) -> Result<PriorEss> {
        self.validate()?;
        let mu0 = self.mean();
        Ok(match *self {
            ConjugatePrior::Gaussian {
                variance,
                obs_variance,
                ..
            } => PriorEss {
                n0: obs_variance / variance,
                mu0,
                sigma2: obs_variance,
            },
            ConjugatePrior::BetaBernoulli { alpha, beta } => PriorEss {
                n0: alpha + beta,
                mu0,
                sigma2: mu0 * (1.0 - mu0),
            },
            // one observation is a proportion out of `trials`
            ConjugatePrior::BetaBinomial { alpha, beta, trials } => {
                let m = f64::from(trials);
                PriorEss {
                    n0: (alpha + beta) / m,
                    mu0,
                    sigma2: mu0 * (1.0 - mu0) / m,
                }
            }
            ConjugatePrior::GammaPoisson { beta, .. } => PriorEss {
                n0: beta,
                mu0,
                sigma2: mu0,
            },
            // inverse information of a rate at the prior mean is μ₀²
            ConjugatePrior::GammaExponential { alpha, .. } => PriorEss {
                n0: alpha,
                mu0,
                sigma2: mu0 * mu0,
            },
        })
    }
}

/// ESS from positional hyperparameters.
///
/// Gaussian takes `[mean, prior variance, observation variance]`; the Beta and
/// Gamma families take `[alpha, beta]`.
pub fn conjugate_prior_ess(family: Likelihood, hyperparams: &[f64]) -> Result<PriorEss> {
    let want = |k: usize| {
        if hyperparams.len() == k {
            Ok(())
        } else {
            Err(EvsiError::Shape(format!(
                "{} prior takes {k} hyperparameters, got {}",
                family.name(),
                hyperparams.len()
            )))
        }
    };
    let h = hyperparams;
    let prior = match family {
        Likelihood::Gaussian => {
            want(3)?;
            ConjugatePrior::Gaussian {
                mean: h[0],
                variance: h[1],
                obs_variance: h[2],
            }
        }
        Likelihood::Bernoulli => {
            want(2)?;
            ConjugatePrior::BetaBernoulli { alpha: h[0], beta: h[1] }
        }
        Likelihood::Binomial { trials } => {
            want(2)?;
            ConjugatePrior::BetaBinomial {
                alpha: h[0],
                beta: h[1],
                trials,
            }
        }
        Likelihood::Poisson => {
            want(2)?;
            ConjugatePrior::GammaPoisson { alpha: h[0], beta: h[1] }
        }
        Likelihood::Exponential => {
            want(2)?;
            ConjugatePrior::GammaExponential { alpha: h[0], beta: h[1] }
        }
        Likelihood::Custom => return Err(EvsiError::UnsupportedFamily(family.name().into())),
    };
    prior.ess()
}
