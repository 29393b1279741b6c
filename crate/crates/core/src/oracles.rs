//! Reference values: conjugate posteriors, closed-form conditional benefits
//! for the stylized scenarios, the linear-Gaussian EVSI formula and nested
//! Monte Carlo with exact posterior sampling.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::case_studies::StylizedScenario;
use crate::error::{EvsiError, Result, StageExt};
use crate::estimators::{evsi_from_conditional_inb, evsi_from_values, EvsiEstimate};
use crate::gaussian::{variance_fraction, ConjugatePrior};
use crate::pa_data::{Likelihood, PaDataset};
use crate::simulate::simulate_sample_mean;

/// Study size and sum of the observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSummary {
    pub n: u64,
    pub sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub variance: f64,
    pub family: Likelihood,
}

impl ConjugatePrior {
    /// Posterior after observing `data`; the result has the same family.
    pub fn update(&self, data: DataSummary) -> Result<ConjugatePrior> {
        self.validate()?;
        if !data.sum.is_finite() {
            return Err(EvsiError::Domain("non-finite data summary".into()));
        }
        let n = data.n as f64;
        Ok(match *self {
            ConjugatePrior::Gaussian {
                mean,
                variance,
                obs_variance,
            } => {
                let n0 = obs_variance / variance;
                ConjugatePrior::Gaussian {
                    mean: (n0 * mean + data.sum) / (n0 + n),
                    variance: obs_variance / (n0 + n),
                    obs_variance,
                }
            }
            ConjugatePrior::BetaBernoulli { alpha, beta } => {
                let s = data.sum.round();
                if s < 0.0 || s > n {
                    return Err(EvsiError::Domain(format!("{s} successes in {n} trials")));
                }
                ConjugatePrior::BetaBernoulli {
                    alpha: alpha + s,
                    beta: beta + n - s,
                }
            }
            ConjugatePrior::BetaBinomial { alpha, beta, trials } => {
                // observations are proportions, so the sum counts successes / trials
                let total = n * f64::from(trials);
                let s = (data.sum * f64::from(trials)).round();
                if s < 0.0 || s > total {
                    return Err(EvsiError::Domain(format!("{s} successes in {total} trials")));
                }
                ConjugatePrior::BetaBinomial {
                    alpha: alpha + s,
                    beta: beta + total - s,
                    trials,
                }
            }
            ConjugatePrior::GammaPoisson { alpha, beta } => {
                let s = data.sum.round();
                if s < 0.0 {
                    return Err(EvsiError::Domain(format!("negative count sum {s}")));
                }
                ConjugatePrior::GammaPoisson {
                    alpha: alpha + s,
                    beta: beta + n,
                }
            }
            ConjugatePrior::GammaExponential { alpha, beta } => {
                if data.sum < 0.0 {
                    return Err(EvsiError::Domain("negative waiting-time sum".into()));
                }
                ConjugatePrior::GammaExponential {
                    alpha: alpha + n,
                    beta: beta + data.sum,
                }
            }
        })
    }

    /// One draw of the parameter.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ConjugatePrior::Gaussian { mean, variance, .. } => {
                Normal::new(mean, variance.sqrt()).expect("valid normal").sample(rng)
            }
            ConjugatePrior::BetaBernoulli { alpha, beta }
            | ConjugatePrior::BetaBinomial { alpha, beta, .. } => {
                Beta::new(alpha, beta).expect("valid beta").sample(rng)
            }
            ConjugatePrior::GammaPoisson { alpha, beta }
            | ConjugatePrior::GammaExponential { alpha, beta } => {
                Gamma::new(alpha, 1.0 / beta).expect("valid gamma").sample(rng)
            }
        }
    }

    /// Per-observation variance used when simulating Gaussian data.
    fn obs_variance(&self) -> f64 {
        match *self {
            ConjugatePrior::Gaussian { obs_variance, .. } => obs_variance,
            _ => 0.0,
        }
    }
}

pub fn conjugate_posterior_moments(prior: &ConjugatePrior, data: DataSummary) -> Result<PosteriorMoments> {
    let post = prior.update(data)?;
    Ok(PosteriorMoments {
        mean: post.mean(),
        variance: post.variance(),
        family: prior.likelihood(),
    })
}

/// `E[INB(θ) | data]` from the Gaussian posterior moments of each focal parameter.
pub fn analytic_conditional_inb(scenario: StylizedScenario, moments: &[PosteriorMoments]) -> Result<f64> {
    if moments.len() != scenario.n_focal() {
        return Err(EvsiError::Shape(format!(
            "scenario {} needs {} posterior moments, got {}",
            scenario.id(),
            scenario.n_focal(),
            moments.len()
        )));
    }
    // raw Gaussian moments: E[θ²] = m² + s², E[θ⁴] = m⁴ + 6m²s² + 3s⁴
    let second = |p: &PosteriorMoments| p.mean * p.mean + p.variance;
    let fourth = |p: &PosteriorMoments| {
        let (m2, s2) = (p.mean * p.mean, p.variance);
        m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2
    };
    let p = &moments[0];
    Ok(match scenario.id() {
        1 => -100.0 + 5000.0 * p.mean,
        2 => -1000.0 + 5000.0 * second(p),
        3 => -500.0 + 5000.0 * fourth(p),
        _ => -1500.0 + 5000.0 * second(p) + 5000.0 * fourth(&moments[1]),
    })
}

/// EVSI of a stylized scenario using exact conditional expectations.
///
/// For each PA row a sample mean is simulated at that row's θ (RNG stream `n`
/// of `seed`), so the θ draws are shared with every other method on `pa`.
pub fn analytic_evsi_stylized(pa: &PaDataset, scenario: StylizedScenario, n: u64, seed: u64) -> Result<EvsiEstimate> {
    let k = scenario.n_focal();
    if pa.n_params() < k {
        return Err(EvsiError::Shape(format!(
            "scenario {} needs {k} parameter columns",
            scenario.id()
        )))
        .during("oracles::analytic_evsi");
    }
    let prior = scenario.prior();
    let m = pa.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    let mut cond = Vec::with_capacity(m);
    let mut moments = Vec::with_capacity(k);
    for i in 0..m {
        moments.clear();
        for j in 0..k {
            let sum = if n == 0 {
                0.0
            } else {
                let theta = pa.param_column(j)[i];
                n as f64 * simulate_sample_mean(Likelihood::Gaussian, theta, prior.obs_variance(), n, &mut rng)?
            };
            moments.push(conjugate_posterior_moments(&prior, DataSummary { n, sum })?);
        }
        cond.push(analytic_conditional_inb(scenario, &moments)?);
    }
    Ok(evsi_from_conditional_inb(&cond))
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(Y, 0)] − max(E[Y], 0)` for `Y ~ N(m, s²)`.
fn normal_loss(m: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    s * normal_pdf(m / s) + m * normal_cdf(m / s) - m.max(0.0)
}

/// EVSI of `INB(θ) = a + bθ` with a conjugate Gaussian prior and data.
pub fn closed_form_linear_gaussian_evsi(a: f64, b: f64, mu0: f64, sigma2: f64, n0: f64, n: u64) -> Result<f64> {
    let v = variance_fraction(n, n0)?.v;
    Ok(linear_gaussian_value(a, b, mu0, sigma2, n0, v))
}

/// The `n → ∞` limit of [`closed_form_linear_gaussian_evsi`].
pub fn closed_form_linear_gaussian_evppi(a: f64, b: f64, mu0: f64, sigma2: f64, n0: f64) -> Result<f64> {
    variance_fraction(0, n0)?;
    Ok(linear_gaussian_value(a, b, mu0, sigma2, n0, 1.0))
}

fn linear_gaussian_value(a: f64, b: f64, mu0: f64, sigma2: f64, n0: f64, v: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let m = a + b * mu0;
    let s = b.abs() * (v * sigma2 / n0).sqrt();
    normal_loss(m, s)
}

pub type BenefitFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;
pub type PriorDrawFn = dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync;

/// A decision model whose focal parameters have conjugate priors.
///
/// Non-focal parameters are redrawn from their prior in the inner loop, which
/// assumes they are independent of the focal ones a priori.
pub struct NestedMcProblem<'a> {
    pub benefit: &'a BenefitFn,
    pub prior_draw: &'a PriorDrawFn,
    /// Focal parameter positions in θ and their priors.
    pub focal: Vec<(usize, ConjugatePrior)>,
}

/// Two-level Monte Carlo EVSI. Outer iteration `k` uses RNG stream `k` of `seed`.
pub fn nested_mc_evsi(problem: &NestedMcProblem<'_>, n: u64, outer: usize, inner: usize, seed: u64) -> Result<EvsiEstimate> {
    if outer < 2 || inner < 1 {
        return Err(EvsiError::InsufficientData {
            needed: 2,
            got: outer.min(inner),
        })
        .during("oracles::nested_mc");
    }
    if problem.focal.is_empty() {
        return Err(EvsiError::Config("no focal parameters".into())).during("oracles::nested_mc");
    }
    for (_, prior) in &problem.focal {
        prior.validate().during("oracles::nested_mc")?;
    }
    let rows = (0..outer)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let theta = (problem.prior_draw)(&mut rng);
            let posteriors = problem
                .focal
                .iter()
                .map(|&(idx, prior)| {
                    let phi = *theta.get(idx).ok_or(EvsiError::Index { index: idx, len: theta.len() })?;
                    if n == 0 {
                        return Ok(prior);
                    }
                    let xbar = simulate_sample_mean(prior.likelihood(), phi, prior.obs_variance(), n, &mut rng)?;
                    prior.update(DataSummary { n, sum: xbar * n as f64 })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut acc: Vec<f64> = Vec::new();
            for _ in 0..inner {
                let mut draw = (problem.prior_draw)(&mut rng);
                for (&(idx, _), post) in problem.focal.iter().zip(&posteriors) {
                    draw[idx] = post.sample(&mut rng);
                }
                let nb = (problem.benefit)(&draw)?;
                if acc.is_empty() {
                    acc = vec![0.0; nb.len()];
                }
                for (a, b) in acc.iter_mut().zip(&nb) {
                    *a += b;
                }
            }
            Ok(acc.into_iter().map(|a| a / inner as f64).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()
        .during("oracles::nested_mc")?;
    let d = rows[0].len();
    let values = DMatrix::from_fn(outer, d, |i, j| rows[i][j]);
    Ok(evsi_from_values(&values))
}
