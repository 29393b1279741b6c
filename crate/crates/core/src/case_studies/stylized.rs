//! Four stylized incremental-benefit functions with Gaussian priors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result};
use crate::gaussian::ConjugatePrior;
use crate::pa_data::{DataCollectionSpec, Likelihood, PaDataset};

/// Prior mean, per-observation variance and prior ESS of every focal parameter.
pub const MU0: f64 = 0.0;
pub const SIGMA2: f64 = 1.0;
pub const N0: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct StylizedScenario(u8);

impl TryFrom<u8> for StylizedScenario {
    type Error = EvsiError;

    fn try_from(id: u8) -> Result<Self> {
        StylizedScenario::new(id)
    }
}

impl From<StylizedScenario> for u8 {
    fn from(s: StylizedScenario) -> u8 {
        s.0
    }
}

impl StylizedScenario {
    pub const ALL: [StylizedScenario; 4] = [
        StylizedScenario(1),
        StylizedScenario(2),
        StylizedScenario(3),
        StylizedScenario(4),
    ];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=4).contains(&id) {
            Ok(Self(id))
        } else {
            Err(EvsiError::Config(format!("stylized scenarios are numbered 1-4, got {id}")))
        }
    }

    pub fn id(&self) -> u8 {
        self.0
    }

    pub fn n_focal(&self) -> usize {
        if self.0 == 4 {
            2
        } else {
            1
        }
    }

    pub fn prior(&self) -> ConjugatePrior {
        ConjugatePrior::Gaussian {
            mean: MU0,
            variance: SIGMA2 / N0,
            obs_variance: SIGMA2,
        }
    }

    /// Incremental net benefit at `theta`.
    pub fn inb(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.n_focal() {
            return Err(EvsiError::Shape(format!(
                "scenario {} takes {} parameters, got {}",
                self.0,
                self.n_focal(),
                theta.len()
            )));
        }
        let t = theta[0];
        Ok(match self.0 {
            1 => -100.0 + 5000.0 * t,
            2 => -1000.0 + 5000.0 * t * t,
            3 => -500.0 + 5000.0 * t.powi(4),
            _ => -1500.0 + 5000.0 * t * t + 5000.0 * theta[1].powi(4),
        })
    }
}

pub fn stylized_inb(scenario: StylizedScenario, theta: &[f64]) -> Result<f64> {
    scenario.inb(theta)
}

/// Draws θ from the prior and records `nb.reference ≡ 0` and `nb.new = INB(θ)`.
pub fn generate_case1_pa(scenario: StylizedScenario, m: usize, seed: u64) -> Result<PaDataset> {
    if m < 2 {
        return Err(EvsiError::InsufficientData { needed: 2, got: m });
    }
    let k = scenario.n_focal();
    let normal = Normal::new(MU0, (SIGMA2 / N0).sqrt()).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![Vec::with_capacity(m); k];
    let mut inb = Vec::with_capacity(m);
    let mut point = vec![0.0; k];
    for _ in 0..m {
        for (j, col) in theta.iter_mut().enumerate() {
            point[j] = normal.sample(&mut rng);
            col.push(point[j]);
        }
        inb.push(scenario.inb(&point)?);
    }
    let names = (1..=k).map(|j| format!("theta{j}")).collect();
    PaDataset::from_columns(
        names,
        theta,
        vec!["reference".into(), "new".into()],
        vec![vec![0.0; m], inb],
    )
}

/// Gaussian data on every focal parameter with `μ₀ = 0`, `σ² = 1`, `n₀ = 5`.
pub fn case1_spec(scenario: StylizedScenario) -> DataCollectionSpec {
    let k = scenario.n_focal();
    DataCollectionSpec::new(
        (0..k).collect(),
        Likelihood::Gaussian,
        vec![MU0; k],
        vec![SIGMA2; k],
        vec![N0; k],
    )
    .expect("stylized spec is valid")
}
