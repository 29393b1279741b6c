//! EVSI and EVPPI estimators built on one probabilistic-analysis dataset.
//!
//! Every estimator produces conditional expected benefits per PA row and feeds
//! them to [`evsi_from_conditional`]:
//!
//! `EVSI = mean_i max_d values[i][d] − max_d mean_i values[i][d]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result, StageExt};
use crate::fisher::{
    adjust_conditional_variances, expected_fisher, target_variance_with, ConditionalVariances,
    TargetRule,
};
use crate::gaussian::{rescale_prior_samples, variance_fraction, PreposteriorMeans};
use crate::pa_data::{DataCollectionSpec, Likelihood, PaDataset};
use crate::simulate::simulate_sample_mean;
use crate::spline::{
    fit_additive_splines, fit_regression_splines, fitted_values, BasisConfig, ModelSet, SplineModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Meta-model plus second-order curvature correction.
    Tga,
    /// Linear meta-model on rescaled prior samples.
    Ga,
    /// Regression of benefits on simulated sample means.
    Npreg,
    NestedMc,
    /// Closed-form conditional expectations (stylized scenarios only).
    Analytic,
    /// Perfect-information upper bound, constant in `n`.
    Evppi,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Tga,
        Method::Ga,
        Method::Npreg,
        Method::NestedMc,
        Method::Analytic,
        Method::Evppi,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Tga => "tga",
            Method::Ga => "ga",
            Method::Npreg => "npreg",
            Method::NestedMc => "nested-mc",
            Method::Analytic => "analytic",
            Method::Evppi => "evppi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvsiError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EvsiError::Config(format!("unknown method `{s}`")))
    }
}

/// Estimated `E[NB_d | X_n^i]`, one row per PA sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalBenefitSamples {
    pub values: DMatrix<f64>,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvsiEstimate {
    pub evsi: f64,
    /// Standard error of the mean-of-max term.
    pub mc_se: f64,
}

impl EvsiEstimate {
    pub const ZERO: EvsiEstimate = EvsiEstimate { evsi: 0.0, mc_se: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvsiPoint {
    pub n: u64,
    pub evsi: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvsiCurve {
    pub method: Method,
    /// Ordered by strictly increasing `n`.
    pub points: Vec<EvsiPoint>,
    /// Human-readable summary of the data-collection spec behind the curve.
    pub spec_digest: String,
}

impl EvsiCurve {
    pub fn point(&self, n: u64) -> Option<&EvsiPoint> {
        self.points.iter().find(|p| p.n == n)
    }
}

pub fn spec_digest(spec: &DataCollectionSpec) -> String {
    format!(
        "family={};focal={:?};mu0={:?};sigma2={:?};n0={:?}",
        spec.family.name(),
        spec.focal_indices,
        spec.mu0,
        spec.sigma2,
        spec.n0
    )
}

/// Rejects empty or non-increasing grids.
pub fn check_grid(grid: &[u64]) -> Result<()> {
    if grid.is_empty() {
        return Err(EvsiError::Config("sample-size grid is empty".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(EvsiError::Config(format!(
            "sample-size grid must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// The combiner on a matrix of conditional benefits (rows are samples).
pub fn evsi_from_values(values: &DMatrix<f64>) -> EvsiEstimate {
    let (m, d) = values.shape();
    assert!(m >= 1 && d >= 1, "empty conditional benefit matrix");
    let row_max: Vec<f64> = (0..m)
        .map(|i| (1..d).fold(values[(i, 0)], |best, j| best.max(values[(i, j)])))
        .collect();
    let mf = m as f64;
    let sum_of_max = row_max.iter().sum::<f64>();
    // each column is summed in the same order as row_max, so the rounded
    // column sums can never exceed the rounded sum of row maxima
    let max_of_sums = (0..d)
        .map(|j| values.column(j).iter().sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    EvsiEstimate {
        evsi: (sum_of_max - max_of_sums) / mf,
        mc_se: standard_error(&row_max, sum_of_max / mf),
    }
}

pub fn evsi_from_conditional(cond: &ConditionalBenefitSamples) -> EvsiEstimate {
    evsi_from_values(&cond.values)
}

/// Two-decision shortcut on incremental benefits relative to the comparator.
pub fn evsi_from_conditional_inb(cond_inb: &[f64]) -> EvsiEstimate {
    assert!(!cond_inb.is_empty(), "empty conditional INB vector");
    let mf = cond_inb.len() as f64;
    let pos: Vec<f64> = cond_inb.iter().map(|c| c.max(0.0)).collect();
    let sum_pos = pos.iter().sum::<f64>();
    let sum = cond_inb.iter().sum::<f64>();
    EvsiEstimate {
        evsi: (sum_pos - sum.max(0.0)) / mf,
        mc_se: standard_error(&pos, sum_pos / mf),
    }
}

fn standard_error(xs: &[f64], mean: f64) -> f64 {
    let m = xs.len();
    if m < 2 {
        return 0.0;
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (m - 1) as f64 / m as f64).sqrt()
}

fn check_models(models: &[SplineModel], mu_x: &PreposteriorMeans) -> Result<()> {
    if models.is_empty() {
        return Err(EvsiError::Shape("no benefit models".into()));
    }
    if let Some(bad) = models.iter().find(|m| m.n_predictors() != mu_x.n_focal()) {
        return Err(EvsiError::Shape(format!(
            "model has {} predictors but {} focal columns were given",
            bad.n_predictors(),
            mu_x.n_focal()
        )));
    }
    Ok(())
}

/// `ĝ_d(μ_X^i)` for every row and decision.
pub fn conditional_nb_ga(models: &[SplineModel], mu_x: &PreposteriorMeans) -> Result<ConditionalBenefitSamples> {
    check_models(models, mu_x)?;
    let m = mu_x.n_samples();
    let set = ModelSet::new(models);
    let mut values = DMatrix::zeros(m, models.len());
    let mut point = vec![0.0; mu_x.n_focal()];
    let (mut g, mut curv) = (vec![0.0; set.len()], vec![0.0; set.len() * point.len()]);
    for i in 0..m {
        mu_x.fill_row(i, &mut point);
        set.eval_with_curvature(&point, &mut g, &mut curv);
        for (d, &v) in g.iter().enumerate() {
            values[(i, d)] = v;
        }
    }
    Ok(ConditionalBenefitSamples {
        values,
        method: Method::Ga,
    })
}

/// `ĝ_d(μ_X^i) + ½ Σ_j var_j[i]·∂²ĝ_d/∂φ_j²(μ_X^i)`.
pub fn conditional_nb_tga(
    models: &[SplineModel],
    mu_x: &PreposteriorMeans,
    variances: &[ConditionalVariances],
) -> Result<ConditionalBenefitSamples> {
    check_models(models, mu_x)?;
    let m = mu_x.n_samples();
    if variances.len() != mu_x.n_focal() || variances.iter().any(|v| v.adjusted.len() != m) {
        return Err(EvsiError::Shape(format!(
            "need {} variance vectors of length {m}",
            mu_x.n_focal()
        )));
    }
    let set = ModelSet::new(models);
    let n_focal = mu_x.n_focal();
    let mut values = DMatrix::zeros(m, models.len());
    let mut point = vec![0.0; n_focal];
    let (mut g, mut curv) = (vec![0.0; set.len()], vec![0.0; set.len() * n_focal]);
    for i in 0..m {
        mu_x.fill_row(i, &mut point);
        set.eval_with_curvature(&point, &mut g, &mut curv);
        for (d, &gd) in g.iter().enumerate() {
            let correction: f64 = curv[d * n_focal..(d + 1) * n_focal]
                .iter()
                .zip(variances)
                .map(|(c, v)| v.adjusted[i] * c)
                .sum();
            values[(i, d)] = gd + 0.5 * correction;
        }
    }
    Ok(ConditionalBenefitSamples {
        values,
        method: Method::Tga,
    })
}

/// Expected information of `n` observations at `phi` for focal parameter `j`.
pub type InformationFn = Arc<dyn Fn(usize, f64, u64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct TgaOptions {
    pub basis: BasisConfig,
    /// Rescale inverse information to the target mean variance.
    pub variance_adjustment: bool,
    pub target_rule: TargetRule,
    /// Overrides the closed-form information; required for the custom family.
    pub information: Option<InformationFn>,
}

impl Default for TgaOptions {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            variance_adjustment: true,
            target_rule: TargetRule::default(),
            information: None,
        }
    }
}

impl fmt::Debug for TgaOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TgaOptions")
            .field("basis", &self.basis)
            .field("variance_adjustment", &self.variance_adjustment)
            .field("target_rule", &self.target_rule)
            .field("information", &self.information.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

/// Benefit splines fitted once on the focal columns, reused for every `n`.
#[derive(Debug, Clone)]
pub struct TgaEstimator {
    models: Vec<SplineModel>,
    focal: Vec<Vec<f64>>,
    spec: DataCollectionSpec,
    options: TgaOptions,
}

impl TgaEstimator {
    pub fn fit(pa: &PaDataset, spec: &DataCollectionSpec, options: TgaOptions) -> Result<Self> {
        spec.check_against(pa).during("estimators::tga_fit")?;
        if spec.family == Likelihood::Custom && options.information.is_none() {
            return Err(EvsiError::UnsupportedFamily(spec.family.name().into())).during("estimators::tga_fit");
        }
        let focal = pa.focal_columns(&spec.focal_indices)?;
        let models = fit_additive_splines(&focal, &pa.nb_columns(), &options.basis).during("estimators::tga_fit")?;
        Ok(Self {
            models,
            focal: focal.into_iter().map(<[f64]>::to_vec).collect(),
            spec: spec.clone(),
            options,
        })
    }

    pub fn models(&self) -> &[SplineModel] {
        &self.models
    }

    pub fn spec(&self) -> &DataCollectionSpec {
        &self.spec
    }

    pub fn preposterior(&self, n: u64) -> Result<PreposteriorMeans> {
        let cols = self
            .focal
            .iter()
            .enumerate()
            .map(|(j, phi)| {
                let v = variance_fraction(n, self.spec.n0[j])?;
                Ok(rescale_prior_samples(phi, self.spec.mu0[j], v))
            })
            .collect::<Result<Vec<_>>>()?;
        PreposteriorMeans::from_columns(&cols)
    }

    /// Conditional variances of every focal parameter at study size `n`.
    pub fn conditional_variances(&self, n: u64, mu_x: &PreposteriorMeans) -> Result<Vec<ConditionalVariances>> {
        let m = mu_x.n_samples();
        (0..self.spec.n_focal())
            .map(|j| {
                let (n0, sigma2) = (self.spec.n0[j], self.spec.sigma2[j]);
                let target = target_variance_with(self.options.target_rule, n, n0, sigma2);
                if n == 0 {
                    return Ok(ConditionalVariances::constant(target, m));
                }
                let raw = mu_x
                    .column(j)
                    .iter()
                    .map(|&phi| {
                        let info = match &self.options.information {
                            Some(f) => f(j, phi, n),
                            None => expected_fisher(self.spec.family, phi, n, sigma2)?,
                        };
                        Ok(1.0 / info)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if self.options.variance_adjustment {
                    adjust_conditional_variances(&raw, target)
                } else {
                    ConditionalVariances::unadjusted(raw)
                }
            })
            .collect()
    }

    pub fn conditional(&self, method: Method, n: u64) -> Result<ConditionalBenefitSamples> {
        let mu_x = self.preposterior(n)?;
        match method {
            Method::Ga => conditional_nb_ga(&self.models, &mu_x),
            Method::Tga => {
                let vars = self.conditional_variances(n, &mu_x)?;
                conditional_nb_tga(&self.models, &mu_x, &vars)
            }
            other => Err(EvsiError::Config(format!("{other} is not a meta-model method"))),
        }
    }

    pub fn evaluate(&self, method: Method, n: u64) -> Result<EvsiEstimate> {
        let stage = if method == Method::Ga { "estimators::ga_evaluate" } else { "estimators::tga_evaluate" };
        Ok(evsi_from_conditional(&self.conditional(method, n).during(stage)?))
    }

    /// Evaluates every grid point in parallel; output order follows `grid`.
    pub fn curve(&self, method: Method, grid: &[u64]) -> Result<EvsiCurve> {
        check_grid(grid)?;
        let points = grid
            .par_iter()
            .map(|&n| {
                self.evaluate(method, n).map(|e| EvsiPoint {
                    n,
                    evsi: e.evsi,
                    mc_se: e.mc_se,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvsiCurve {
            method,
            points,
            spec_digest: spec_digest(&self.spec),
        })
    }
}

pub fn evsi_curve_tga(
    pa: &PaDataset,
    spec: &DataCollectionSpec,
    grid: &[u64],
    options: TgaOptions,
) -> Result<EvsiCurve> {
    TgaEstimator::fit(pa, spec, options)?.curve(Method::Tga, grid)
}

pub fn evsi_curve_ga(
    pa: &PaDataset,
    spec: &DataCollectionSpec,
    grid: &[u64],
    basis: BasisConfig,
) -> Result<EvsiCurve> {
    let options = TgaOptions {
        basis,
        ..TgaOptions::default()
    };
    // the GA path never reads information, so the custom family is allowed
    let options = if spec.family == Likelihood::Custom {
        TgaOptions {
            information: Some(Arc::new(|_, _, _| f64::NAN)),
            ..options
        }
    } else {
        options
    };
    TgaEstimator::fit(pa, spec, options)?.curve(Method::Ga, grid)
}

/// Basis for a value-only regression on `x`, shrunk when `x` has few distinct values.
fn regression_basis(x: &[f64], basis: &BasisConfig) -> BasisConfig {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let distinct = sorted.len();
    let mut cfg = *basis;
    if distinct <= cfg.degree {
        cfg.degree = distinct.saturating_sub(1).max(1);
        cfg.interior_knots = 0;
    } else {
        cfg.interior_knots = cfg.interior_knots.min(distinct - cfg.degree - 1);
    }
    cfg
}

/// Fitted values of every benefit column regressed on the predictor columns.
fn regress_benefits(pa: &PaDataset, x: &[&[f64]], basis: &BasisConfig) -> Result<DMatrix<f64>> {
    let configs: Vec<BasisConfig> = x.iter().map(|c| regression_basis(c, basis)).collect();
    let models = fit_regression_splines(x, &pa.nb_columns(), &configs)?;
    let m = pa.n_samples();
    let cols: Vec<f64> = models.iter().flat_map(|mdl| fitted_values(mdl, x)).collect();
    Ok(DMatrix::from_vec(m, models.len(), cols))
}

/// Regression of benefits on simulated per-focal sample means.
///
/// Row `i` draws its data at `φ^i` from the RNG stream `n` of `seed`, so the
/// result is reproducible for each `n` independently of any grid.
pub fn evsi_nonparametric(
    pa: &PaDataset,
    spec: &DataCollectionSpec,
    n: u64,
    seed: u64,
    basis: &BasisConfig,
) -> Result<EvsiEstimate> {
    spec.check_against(pa).during("estimators::npreg")?;
    if spec.family == Likelihood::Custom {
        return Err(EvsiError::UnsupportedFamily(spec.family.name().into())).during("estimators::npreg");
    }
    if n == 0 {
        return Ok(EvsiEstimate::ZERO);
    }
    let focal = pa.focal_columns(&spec.focal_indices)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    let m = pa.n_samples();
    let mut xbar = vec![Vec::with_capacity(m); focal.len()];
    for i in 0..m {
        for (j, col) in focal.iter().enumerate() {
            xbar[j].push(simulate_sample_mean(spec.family, col[i], spec.sigma2[j], n, &mut rng)?);
        }
    }
    // a predictor with a single simulated value carries no information
    let informative: Vec<&[f64]> = xbar
        .iter()
        .filter(|c| c.iter().any(|v| *v != c[0]))
        .map(Vec::as_slice)
        .collect();
    if informative.is_empty() {
        return Ok(EvsiEstimate::ZERO);
    }
    let fitted = regress_benefits(pa, &informative, basis).during("estimators::npreg")?;
    Ok(evsi_from_values(&fitted))
}

pub fn evsi_curve_npreg(
    pa: &PaDataset,
    spec: &DataCollectionSpec,
    grid: &[u64],
    seed: u64,
    basis: &BasisConfig,
) -> Result<EvsiCurve> {
    check_grid(grid)?;
    let points = grid
        .par_iter()
        .map(|&n| {
            evsi_nonparametric(pa, spec, n, seed, basis).map(|e| EvsiPoint {
                n,
                evsi: e.evsi,
                mc_se: e.mc_se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvsiCurve {
        method: Method::Npreg,
        points,
        spec_digest: spec_digest(spec),
    })
}

/// Regression-based EVPPI of the focal parameters.
pub fn evppi(pa: &PaDataset, focal_indices: &[usize], basis: &BasisConfig) -> Result<EvsiEstimate> {
    let focal = pa.focal_columns(focal_indices).during("estimators::evppi")?;
    if focal.is_empty() {
        return Err(EvsiError::Config("no focal parameters".into())).during("estimators::evppi");
    }
    let fitted = regress_benefits(pa, &focal, basis).during("estimators::evppi")?;
    Ok(evsi_from_values(&fitted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::target_conditional_variance;
    use crate::spline::fit_additive_spline;

    fn matrix(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn combiner_examples() {
        let same = matrix(&[&[1.0, 1.0], &[5.0, 5.0], &[-2.0, -2.0]]);
        assert_eq!(evsi_from_values(&same).evsi, 0.0);
        let dominated = matrix(&[&[3.0, 1.0], &[7.0, 5.0], &[0.0, -2.0]]);
        assert_eq!(evsi_from_values(&dominated).evsi, 0.0);
        let inb = evsi_from_conditional_inb(&[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(inb.evsi, 0.5);
        assert_eq!(evsi_from_conditional_inb(&[-2.0, 4.0]).evsi, 1.0);
        assert_eq!(evsi_from_conditional_inb(&[1.0, 3.0, 0.5]).evsi, 0.0);
        assert_eq!(evsi_from_conditional_inb(&[-1.0, -3.0]).evsi, 0.0);
    }

    #[test]
    fn combiner_standard_error() {
        let v = matrix(&[&[0.0, 1.0], &[0.0, 3.0], &[2.0, 0.0], &[0.0, 0.0]]);
        let e = evsi_from_values(&v);
        // row maxima 1,3,2,0: mean 1.5, sample variance 5/3
        assert!((e.mc_se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!((e.evsi - 0.5).abs() < 1e-15);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[5, 5]).is_err());
        assert!(check_grid(&[0, 10, 20]).is_ok());
    }

    fn quadratic_model() -> SplineModel {
        let x = grid(-2.0, 2.0, 400);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        fit_additive_spline(&[&x], &y, &BasisConfig::default()).unwrap()
    }

    #[test]
    fn ga_has_no_variance_term() {
        let model = quadratic_model();
        let mu = PreposteriorMeans::from_columns(&[vec![0.5, 0.5]]).unwrap();
        let ga = conditional_nb_ga(&[model], &mu).unwrap();
        assert!((ga.values[(0, 0)] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn tga_adds_half_variance_times_curvature() {
        let model = quadratic_model();
        let mu = PreposteriorMeans::from_columns(&[vec![0.5, 0.5]]).unwrap();
        let vars = ConditionalVariances::constant(1.0 / 15.0, 2);
        let tga = conditional_nb_tga(&[model], &mu, &[vars]).unwrap();
        assert!((tga.values[(1, 0)] - (0.25 + 1.0 / 15.0)).abs() < 1e-6);
    }

    #[test]
    fn tga_two_focal_correction_sums() {
        let a = grid(-1.0, 1.0, 60);
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        for &u in &a {
            for &w in &a {
                x1.push(u);
                x2.push(w);
            }
        }
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(u, w)| u * u + w * w).collect();
        let model = fit_additive_spline(&[&x1, &x2], &y, &BasisConfig::default()).unwrap();
        let mu = PreposteriorMeans::from_columns(&[vec![0.0], vec![0.0]]).unwrap();
        let (va, vb) = (0.03, 0.11);
        let vars = [ConditionalVariances::constant(va, 1), ConditionalVariances::constant(vb, 1)];
        let tga = conditional_nb_tga(&[model.clone()], &mu, &vars).unwrap();
        let ga = conditional_nb_ga(&[model], &mu).unwrap();
        assert!((tga.values[(0, 0)] - ga.values[(0, 0)] - (va + vb)).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        let model = quadratic_model();
        let mu = PreposteriorMeans::from_columns(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(conditional_nb_ga(&[model.clone()], &mu), Err(EvsiError::Shape(_))));
        let mu1 = PreposteriorMeans::from_columns(&[vec![0.0, 1.0]]).unwrap();
        let short = ConditionalVariances::constant(1.0, 1);
        assert!(matches!(
            conditional_nb_tga(&[model], &mu1, &[short]),
            Err(EvsiError::Shape(_))
        ));
    }

    fn linear_pa() -> (PaDataset, DataCollectionSpec) {
        let theta: Vec<f64> = grid(-1.5, 1.5, 2001);
        let nb: Vec<f64> = theta.iter().map(|t| -100.0 + 5000.0 * t).collect();
        let pa = PaDataset::from_columns(
            vec!["theta".into()],
            vec![theta.clone()],
            vec!["old".into(), "new".into()],
            vec![vec![0.0; theta.len()], nb],
        )
        .unwrap();
        let spec = DataCollectionSpec::single(0, Likelihood::Gaussian, 0.0, 1.0, 5.0).unwrap();
        (pa, spec)
    }

    #[test]
    fn zero_sample_size_gives_zero() {
        let (pa, spec) = linear_pa();
        let est = TgaEstimator::fit(&pa, &spec, TgaOptions::default()).unwrap();
        assert_eq!(est.evaluate(Method::Tga, 0).unwrap().evsi, 0.0);
        assert_eq!(est.evaluate(Method::Ga, 0).unwrap().evsi, 0.0);
    }

    #[test]
    fn gaussian_variances_are_posterior_variance() {
        let (pa, spec) = linear_pa();
        let est = TgaEstimator::fit(&pa, &spec, TgaOptions::default()).unwrap();
        let mu = est.preposterior(10).unwrap();
        let vars = est.conditional_variances(10, &mu).unwrap();
        let t = target_conditional_variance(10, 5.0, 1.0);
        assert!(vars[0].adjusted.iter().all(|v| (v - t).abs() < 1e-12 * t));
    }

    #[test]
    fn curve_is_ordered_and_reproducible() {
        let (pa, spec) = linear_pa();
        let grid = [0, 5, 10, 40, 100];
        let a = evsi_curve_tga(&pa, &spec, &grid, TgaOptions::default()).unwrap();
        let b = evsi_curve_tga(&pa, &spec, &grid, TgaOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.iter().map(|p| p.n).collect::<Vec<_>>(), grid.to_vec());
        assert!(evsi_curve_tga(&pa, &spec, &[10, 5], TgaOptions::default()).is_err());
    }

    #[test]
    fn custom_family_needs_information() {
        let (pa, mut spec) = linear_pa();
        spec.family = Likelihood::Custom;
        assert!(matches!(
            TgaEstimator::fit(&pa, &spec, TgaOptions::default()).map_err(|e| e.root().to_string()),
            Err(s) if s.contains("custom")
        ));
        let info: InformationFn = Arc::new(|_, _, n| n as f64);
        let opts = TgaOptions {
            information: Some(info),
            ..TgaOptions::default()
        };
        let est = TgaEstimator::fit(&pa, &spec, opts).unwrap();
        assert!(est.evaluate(Method::Tga, 20).unwrap().evsi > 0.0);
        assert!(evsi_curve_ga(&pa, &spec, &[10], BasisConfig::default()).is_ok());
    }

    #[test]
    fn nonparametric_basics() {
        let (pa, spec) = linear_pa();
        let b = BasisConfig::default();
        assert_eq!(evsi_nonparametric(&pa, &spec, 0, 1, &b).unwrap(), EvsiEstimate::ZERO);
        let a1 = evsi_nonparametric(&pa, &spec, 30, 1, &b).unwrap();
        let a2 = evsi_nonparametric(&pa, &spec, 30, 1, &b).unwrap();
        assert_eq!(a1, a2);
        assert!(a1.evsi > 0.0);
        let mut custom = spec.clone();
        custom.family = Likelihood::Custom;
        assert!(evsi_nonparametric(&pa, &custom, 3, 1, &b).is_err());
    }

    #[test]
    fn nonparametric_bernoulli_single_observation() {
        let p: Vec<f64> = grid(0.05, 0.95, 3000);
        let nb: Vec<f64> = p.iter().map(|v| 1000.0 * (v - 0.45)).collect();
        let pa = PaDataset::from_columns(
            vec!["p".into()],
            vec![p.clone()],
            vec!["a".into(), "b".into()],
            vec![vec![0.0; p.len()], nb],
        )
        .unwrap();
        let spec = DataCollectionSpec::single(0, Likelihood::Bernoulli, 0.5, 0.25, 2.0).unwrap();
        let e = evsi_nonparametric(&pa, &spec, 1, 7, &BasisConfig::default()).unwrap();
        assert!(e.evsi.is_finite() && e.evsi >= 0.0);
    }

    #[test]
    fn identical_benefits_give_zero() {
        let theta = grid(0.0, 1.0, 500);
        let nb: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let pa = PaDataset::from_columns(
            vec!["t".into()],
            vec![theta],
            vec!["a".into(), "b".into()],
            vec![nb.clone(), nb],
        )
        .unwrap();
        let spec = DataCollectionSpec::single(0, Likelihood::Gaussian, 0.5, 1.0, 3.0).unwrap();
        let b = BasisConfig::default();
        assert_eq!(evsi_nonparametric(&pa, &spec, 10, 3, &b).unwrap().evsi, 0.0);
        assert_eq!(evppi(&pa, &[0], &b).unwrap().evsi, 0.0);
    }

    #[test]
    fn evppi_examples() {
        let theta = grid(0.0, 1.0, 500);
        let constant = PaDataset::from_columns(
            vec!["t".into()],
            vec![theta.clone()],
            vec!["a".into(), "b".into()],
            vec![vec![1.0; 500], vec![2.0; 500]],
        )
        .unwrap();
        assert!(evppi(&constant, &[0], &BasisConfig::default()).unwrap().evsi.abs() < 1e-9);
        // INB = ±c with equal probability and the comparator at zero
        let sign: Vec<f64> = (0..500).map(|i| if i < 250 { -1.0 } else { 1.0 }).collect();
        let c = 40.0;
        let pa = PaDataset::from_columns(
            vec!["s".into()],
            vec![sign.clone()],
            vec!["a".into(), "b".into()],
            vec![vec![0.0; 500], sign.iter().map(|s| c * s).collect()],
        )
        .unwrap();
        let e = evppi(&pa, &[0], &BasisConfig::default()).unwrap();
        assert!((e.evsi - c / 2.0).abs() < 1e-6, "{}", e.evsi);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn combiner_is_nonnegative(
                rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 2..60)
            ) {
                let m = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
                prop_assert!(evsi_from_values(&m).evsi >= 0.0);
            }

            #[test]
            fn nb_and_inb_combiners_agree(
                rows in prop::collection::vec((-1_000_000i32..1_000_000, -1_000_000i32..1_000_000), 2..60)
            ) {
                // integer benefits keep every sum exact, so the identity holds bit for bit
                let a: Vec<f64> = rows.iter().map(|r| f64::from(r.0)).collect();
                let b: Vec<f64> = rows.iter().map(|r| f64::from(r.1)).collect();
                let m = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { a[i] } else { b[i] });
                let inb: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                prop_assert_eq!(evsi_from_values(&m).evsi, evsi_from_conditional_inb(&inb).evsi);
            }

            #[test]
            fn reference_zero_columns_match_inb_exactly(
                inb in prop::collection::vec(-1e5f64..1e5, 2..80)
            ) {
                let m = DMatrix::from_fn(inb.len(), 2, |i, j| if j == 0 { 0.0 } else { inb[i] });
                let a = evsi_from_values(&m);
                let b = evsi_from_conditional_inb(&inb);
                prop_assert_eq!(a.evsi, b.evsi);
                prop_assert_eq!(a.mc_se, b.mc_se);
            }
        }
    }
}
