//! Validation suites: stylized incremental-benefit scenarios and a Markov
//! cohort model with four single-parameter data-collection exercises.

pub mod markov;
pub mod stylized;

pub use markov::{
    case2_exercise, case2_priors, generate_case2_pa, markov_cohort_run, markov_cohort_trace,
    MarkovModelConfig,
};
pub use stylized::{case1_spec, generate_case1_pa, stylized_inb, StylizedScenario};
