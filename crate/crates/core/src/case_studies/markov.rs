//! Three-state Markov cohort model with four uncertain parameters.
//!
//! Each intervention keeps the cohort on treatment until it fails or the
//! patient dies. Failure moves survivors to a permanent disability state.
//! Rewards accrue on the occupancy at the start of each cycle and are
//! discounted as if paid at the end of that cycle.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result, StageExt};
use crate::gaussian::ConjugatePrior;
use crate::pa_data::{DataCollectionSpec, PaDataset};

pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../data/markov_default.toml");

/// Names of the uncertain parameters, in PA column order.
pub const PARAM_NAMES: [&str; 4] = ["mu_a", "mu_b", "p_a", "p_b"];

const ON: usize = 0;
const DISABLED: usize = 1;
const DEAD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainParam {
    MuA,
    MuB,
    PA,
    PB,
}

impl UncertainParam {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A fixed value or a reference to one of the uncertain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Fixed(f64),
    Param(UncertainParam),
}

impl Quantity {
    fn resolve(self, theta: &[f64; 4]) -> f64 {
        match self {
            Quantity::Fixed(v) => v,
            Quantity::Param(p) => theta[p.index()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionConfig {
    pub name: String,
    /// Drug cost per cycle on treatment.
    pub drug_cost: f64,
    /// Per-cycle failure probability among survivors on treatment.
    pub failure: Quantity,
    /// Mean hospital visits per cycle on treatment.
    pub visits: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovModelConfig {
    pub states: [String; 3],
    pub horizon: usize,
    pub discount_rate: f64,
    pub wtp: f64,
    pub cost_per_visit: f64,
    pub mortality_on_treatment: f64,
    pub mortality_disabled: f64,
    pub utility: [f64; 3],
    pub cycle_cost: [f64; 3],
    pub interventions: Vec<InterventionConfig>,
}

impl Default for MarkovModelConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG_TOML).expect("shipped Markov config parses")
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(EvsiError::Domain(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl MarkovModelConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| EvsiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(EvsiError::Config("horizon must be at least one cycle".into()));
        }
        if !(self.wtp > 0.0 && self.wtp.is_finite()) {
            return Err(EvsiError::Config(format!("wtp must be positive, got {}", self.wtp)));
        }
        if !(self.discount_rate > -1.0 && self.discount_rate.is_finite()) {
            return Err(EvsiError::Config(format!(
                "discount rate must exceed -1, got {}",
                self.discount_rate
            )));
        }
        probability("mortality_on_treatment", self.mortality_on_treatment)?;
        probability("mortality_disabled", self.mortality_disabled)?;
        if self.interventions.len() < 2 {
            return Err(EvsiError::Config("at least two interventions required".into()));
        }
        for (i, iv) in self.interventions.iter().enumerate() {
            if self.interventions[..i].iter().any(|o| o.name == iv.name) {
                return Err(EvsiError::Config(format!("intervention `{}` listed twice", iv.name)));
            }
            if let Quantity::Fixed(p) = iv.failure {
                probability("failure", p)?;
            }
            if let Quantity::Fixed(v) = iv.visits {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(EvsiError::Config(format!("visits must be nonnegative, got {v}")));
                }
            }
        }
        let finite = self.utility.iter().chain(&self.cycle_cost).all(|v| v.is_finite());
        if !finite || !self.cost_per_visit.is_finite() {
            return Err(EvsiError::Config("utilities and costs must be finite".into()));
        }
        Ok(())
    }

    pub fn decision_names(&self) -> Vec<String> {
        self.interventions.iter().map(|i| i.name.clone()).collect()
    }

    /// Row-stochastic transition matrix of one intervention at `theta`.
    pub fn transition_matrix(&self, intervention: usize, theta: &[f64; 4]) -> Result<[[f64; 3]; 3]> {
        let p = self.interventions[intervention].failure.resolve(theta);
        probability("failure probability", p)?;
        let (m_on, m_dis) = (self.mortality_on_treatment, self.mortality_disabled);
        let survive = 1.0 - m_on;
        let stay = survive - survive * p;
        Ok([
            [stay, survive - stay, m_on],
            [0.0, 1.0 - m_dis, m_dis],
            [0.0, 0.0, 1.0],
        ])
    }
}

/// Discounted totals of one intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTrace {
    /// Occupancy at the start of each cycle.
    pub occupancy: Vec<[f64; 3]>,
    pub qalys: f64,
    pub costs: f64,
    /// Discounted cycles on treatment, the multiplier of visit costs.
    pub treatment_cycles: f64,
    pub net_benefit: f64,
}

fn check_theta(theta: &[f64; 4]) -> Result<()> {
    for (name, &v) in PARAM_NAMES.iter().zip(theta.iter()) {
        if !v.is_finite() {
            return Err(EvsiError::Domain(format!("{name} is not finite")));
        }
    }
    if theta[0] < 0.0 || theta[1] < 0.0 {
        return Err(EvsiError::Domain("mean visits must be nonnegative".into()));
    }
    probability("p_a", theta[2])?;
    probability("p_b", theta[3])
}

pub fn markov_cohort_trace(config: &MarkovModelConfig, intervention: usize, theta: &[f64; 4]) -> Result<CohortTrace> {
    check_theta(theta)?;
    let iv = config
        .interventions
        .get(intervention)
        .ok_or(EvsiError::Index {
            index: intervention,
            len: config.interventions.len(),
        })?;
    let t = config.transition_matrix(intervention, theta)?;
    let visits = iv.visits.resolve(theta);
    if visits < 0.0 {
        return Err(EvsiError::Domain(format!("visits must be nonnegative, got {visits}")));
    }
    let on_cost = config.cycle_cost[ON] + iv.drug_cost + visits * config.cost_per_visit;
    let cost = [on_cost, config.cycle_cost[DISABLED], config.cycle_cost[DEAD]];

    let discount = 1.0 / (1.0 + config.discount_rate);
    let mut df = 1.0;
    let mut state = [1.0, 0.0, 0.0];
    let mut occupancy = Vec::with_capacity(config.horizon);
    let (mut qalys, mut costs, mut treatment_cycles) = (0.0, 0.0, 0.0);
    for _ in 0..config.horizon {
        df *= discount;
        occupancy.push(state);
        for s in 0..3 {
            qalys += df * state[s] * config.utility[s];
            costs += df * state[s] * cost[s];
        }
        treatment_cycles += df * state[ON];
        let mut next = [0.0; 3];
        for (from, row) in t.iter().enumerate() {
            for (to, p) in row.iter().enumerate() {
                next[to] += state[from] * p;
            }
        }
        state = next;
    }
    Ok(CohortTrace {
        occupancy,
        qalys,
        costs,
        treatment_cycles,
        net_benefit: config.wtp * qalys - costs,
    })
}

/// Net benefit of every intervention at `theta = (μ_A, μ_B, P_A, P_B)`.
pub fn markov_cohort_run(config: &MarkovModelConfig, theta: &[f64; 4]) -> Result<Vec<f64>> {
    (0..config.interventions.len())
        .map(|d| markov_cohort_trace(config, d, theta).map(|t| t.net_benefit))
        .collect()
}

/// Priors of `(μ_A, μ_B, P_A, P_B)`.
pub fn case2_priors() -> [ConjugatePrior; 4] {
    [
        ConjugatePrior::GammaPoisson { alpha: 10.0, beta: 10.0 },
        ConjugatePrior::GammaPoisson { alpha: 20.0, beta: 10.0 },
        ConjugatePrior::BetaBernoulli { alpha: 2.0, beta: 8.0 },
        ConjugatePrior::BetaBernoulli { alpha: 3.0, beta: 7.0 },
    ]
}

/// One joint draw from [`case2_priors`].
pub fn draw_case2_theta(rng: &mut ChaCha8Rng) -> [f64; 4] {
    // Gamma in rand_distr takes a scale, the inverse of the rate
    let mu_a = Gamma::new(10.0, 0.1).expect("valid gamma").sample(rng);
    let mu_b = Gamma::new(20.0, 0.1).expect("valid gamma").sample(rng);
    let p_a = Beta::new(2.0, 8.0).expect("valid beta").sample(rng);
    let p_b = Beta::new(3.0, 7.0).expect("valid beta").sample(rng);
    [mu_a, mu_b, p_a, p_b]
}

/// PA dataset of the Markov model; row `i` uses RNG stream `i` of `seed`.
pub fn generate_case2_pa(config: &MarkovModelConfig, m: usize, seed: u64) -> Result<PaDataset> {
    config.validate().during("case_studies::generate_case2_pa")?;
    if m < 2 {
        return Err(EvsiError::InsufficientData { needed: 2, got: m });
    }
    let rows = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let theta = draw_case2_theta(&mut rng);
            markov_cohort_run(config, &theta).map(|nb| (theta, nb))
        })
        .collect::<Result<Vec<_>>>()
        .during("case_studies::generate_case2_pa")?;
    let theta_cols = (0..4).map(|j| rows.iter().map(|r| r.0[j]).collect()).collect();
    let d = config.interventions.len();
    let nb_cols = (0..d).map(|k| rows.iter().map(|r| r.1[k]).collect()).collect();
    PaDataset::from_columns(
        PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        theta_cols,
        config.decision_names(),
        nb_cols,
    )
}

/// Data-collection exercise `k` (1–4) informing one parameter, with its prior.
pub fn case2_exercise(k: usize) -> Result<(DataCollectionSpec, ConjugatePrior)> {
    if !(1..=4).contains(&k) {
        return Err(EvsiError::Config(format!("case 2 exercises are numbered 1-4, got {k}")));
    }
    let prior = case2_priors()[k - 1];
    let ess = prior.ess()?;
    let spec = DataCollectionSpec::single(k - 1, prior.likelihood(), ess.mu0, ess.sigma2, ess.n0)?;
    Ok((spec, prior))
}
