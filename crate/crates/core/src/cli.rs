//! Batch runs driven by a TOML document, with command-line overrides.
//!
//! A run loads or generates one PA dataset, evaluates every requested method
//! on the same rows and seed, and writes `evsi_<method>.csv`, `evppi.csv` and
//! optionally `curves.svg` into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::case_studies::markov::draw_case2_theta;
use crate::case_studies::stylized;
use crate::case_studies::{
    case1_spec, case2_exercise, generate_case1_pa, generate_case2_pa, markov_cohort_run,
    MarkovModelConfig, StylizedScenario,
};
use crate::error::{EvsiError, Result, StageExt};
use crate::estimators::{
    check_grid, evppi, evsi_curve_npreg, spec_digest, EvsiCurve, EvsiEstimate, EvsiPoint, Method,
    TgaEstimator, TgaOptions,
};
use crate::fisher::TargetRule;
use crate::gaussian::ConjugatePrior;
use crate::oracles::{analytic_evsi_stylized, nested_mc_evsi, BenefitFn, NestedMcProblem, PriorDrawFn};
use crate::pa_data::{load_pa_dataset, DataCollectionSpec, Likelihood, PaDataset};
use crate::spline::BasisConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinCase {
    /// Four stylized INB functions; pick one with `scenario`.
    Stylized,
    /// Markov cohort model; pick a data-collection exercise with `exercise`.
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub builtin: Option<BuiltinCase>,
    pub scenario: Option<u8>,
    pub exercise: Option<usize>,
    /// PA rows to generate for a builtin case.
    pub samples: Option<usize>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            builtin: Some(BuiltinCase::Stylized),
            scenario: Some(1),
            exercise: None,
            samples: Some(100_000),
        }
    }
}

/// Study description for a dataset read from disk.
///
/// Give either one conjugate `prior` per focal parameter, or `family` with
/// explicit `mu0`, `sigma2` and `n0` vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    /// Parameter names without the `param.` prefix.
    pub focal: Vec<String>,
    pub family: Option<Likelihood>,
    pub mu0: Option<Vec<f64>>,
    pub sigma2: Option<Vec<f64>>,
    pub n0: Option<Vec<f64>>,
    pub prior: Option<Vec<ConjugatePrior>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_min: u64,
    pub n_max: u64,
    pub n_step: u64,
    /// Explicit sample sizes; replaces the range when present.
    pub values: Option<Vec<u64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_min: 10,
            n_max: 300,
            n_step: 10,
            values: None,
        }
    }
}

impl GridConfig {
    pub fn points(&self) -> Result<Vec<u64>> {
        let grid = match &self.values {
            Some(v) => v.clone(),
            None => {
                if self.n_step == 0 {
                    return Err(EvsiError::Config("grid n_step must be positive".into()));
                }
                if self.n_min > self.n_max {
                    return Err(EvsiError::Config(format!(
                        "grid n_min {} exceeds n_max {}",
                        self.n_min, self.n_max
                    )));
                }
                (self.n_min..=self.n_max).step_by(self.n_step as usize).collect()
            }
        };
        check_grid(&grid)?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("evsi_out"),
            plot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub variance_adjustment: bool,
    pub target_rule: TargetRule,
    pub nested_outer: usize,
    pub nested_inner: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            variance_adjustment: true,
            target_rule: TargetRule::default(),
            nested_outer: 2_000,
            nested_inner: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub input: InputConfig,
    pub spec: Option<SpecConfig>,
    pub grid: GridConfig,
    pub methods: Vec<Method>,
    pub output: OutputConfig,
    pub options: RunOptions,
    pub spline: BasisConfig,
    /// Replaces the shipped Markov model.
    pub markov: Option<MarkovModelConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            input: InputConfig::default(),
            spec: None,
            grid: GridConfig::default(),
            methods: vec![Method::Tga],
            output: OutputConfig::default(),
            options: RunOptions::default(),
            spline: BasisConfig::default(),
            markov: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.points()?;
        if self.methods.is_empty() {
            return Err(EvsiError::Config("no methods requested".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(EvsiError::Config(format!("method `{m}` listed twice")));
            }
        }
        self.spline.validate()?;
        if self.options.nested_outer < 2 || self.options.nested_inner < 1 {
            return Err(EvsiError::Config("nested_outer must be at least 2 and nested_inner at least 1".into()));
        }
        let input = &self.input;
        match (&input.path, input.builtin) {
            (Some(_), Some(_)) => {
                return Err(EvsiError::Config("input takes either `path` or `builtin`, not both".into()))
            }
            (None, None) => return Err(EvsiError::Config("input needs `path` or `builtin`".into())),
            (Some(_), None) => {
                if self.spec.is_none() {
                    return Err(EvsiError::Config("a dataset read from `path` needs a [spec] table".into()));
                }
                if input.scenario.is_some() || input.exercise.is_some() || input.samples.is_some() {
                    return Err(EvsiError::Config(
                        "`scenario`, `exercise` and `samples` apply to builtin inputs only".into(),
                    ));
                }
            }
            (None, Some(case)) => {
                if input.samples.is_some_and(|m| m < 2) {
                    return Err(EvsiError::InsufficientData {
                        needed: 2,
                        got: input.samples.unwrap_or(0),
                    });
                }
                match case {
                    BuiltinCase::Stylized => {
                        StylizedScenario::new(input.scenario.unwrap_or(1))?;
                        if input.exercise.is_some() {
                            return Err(EvsiError::Config("`exercise` applies to the markov case".into()));
                        }
                    }
                    BuiltinCase::Markov => {
                        case2_exercise(input.exercise.unwrap_or(1))?;
                        if input.scenario.is_some() {
                            return Err(EvsiError::Config("`scenario` applies to the stylized case".into()));
                        }
                    }
                }
            }
        }
        if let Some(markov) = &self.markov {
            markov.validate()?;
        }
        Ok(())
    }
}

/// Parses and validates a run document. Missing keys take their defaults.
pub fn parse_config(document: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(document).map_err(|e| EvsiError::Schema(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Default, Parser)]
#[command(name = "evsi", version, about = "Expected value of sample information across study sizes")]
pub struct CliArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Estimator to run (repeatable): tga, ga, npreg, nested-mc, analytic, evppi.
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub n_min: Option<u64>,
    #[arg(long)]
    pub n_max: Option<u64>,
    #[arg(long)]
    pub n_step: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write curves.svg.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub no_variance_adjustment: bool,
}

impl CliArgs {
    /// Loads the config (or defaults) and applies the flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                parse_config(&text)?
            }
            None => RunConfig::default(),
        };
        if !self.methods.is_empty() {
            config.methods = self.methods.clone();
        }
        let range_flag = self.n_min.is_some() || self.n_max.is_some() || self.n_step.is_some();
        if range_flag {
            config.grid.values = None;
        }
        if let Some(v) = self.n_min {
            config.grid.n_min = v;
        }
        if let Some(v) = self.n_max {
            config.grid.n_max = v;
        }
        if let Some(v) = self.n_step {
            config.grid.n_step = v;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if self.plot {
            config.output.plot = true;
        }
        if self.no_variance_adjustment {
            config.options.variance_adjustment = false;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Curves of one run plus the EVPPI of the focal parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub curves: Vec<EvsiCurve>,
    pub evppi: EvsiEstimate,
}

enum Source {
    Stylized(StylizedScenario),
    Markov(MarkovModelConfig),
    File,
}

struct Prepared {
    pa: PaDataset,
    spec: DataCollectionSpec,
    source: Source,
    /// Conjugate prior per focal parameter, when known.
    priors: Option<Vec<ConjugatePrior>>,
}

fn spec_from_config(cfg: &SpecConfig, pa: &PaDataset) -> Result<(DataCollectionSpec, Option<Vec<ConjugatePrior>>)> {
    let focal = cfg
        .focal
        .iter()
        .map(|name| {
            pa.param_index(name)
                .ok_or_else(|| EvsiError::Config(format!("unknown focal parameter `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    match (&cfg.prior, cfg.family) {
        (Some(priors), None) if cfg.mu0.is_none() && cfg.sigma2.is_none() && cfg.n0.is_none() => {
            if priors.len() != focal.len() {
                return Err(EvsiError::Shape(format!(
                    "{} focal parameters but {} priors",
                    focal.len(),
                    priors.len()
                )));
            }
            let family = priors[0].likelihood();
            if priors.iter().any(|p| p.likelihood() != family) {
                return Err(EvsiError::Config("all focal priors must share one likelihood".into()));
            }
            let ess = priors.iter().map(ConjugatePrior::ess).collect::<Result<Vec<_>>>()?;
            let spec = DataCollectionSpec::new(
                focal,
                family,
                ess.iter().map(|e| e.mu0).collect(),
                ess.iter().map(|e| e.sigma2).collect(),
                ess.iter().map(|e| e.n0).collect(),
            )?;
            Ok((spec, Some(priors.clone())))
        }
        (None, Some(family)) => {
            let take = |v: &Option<Vec<f64>>, key: &str| {
                v.clone().ok_or_else(|| EvsiError::Config(format!("spec with `family` needs `{key}`")))
            };
            let spec = DataCollectionSpec::new(focal, family, take(&cfg.mu0, "mu0")?, take(&cfg.sigma2, "sigma2")?, take(&cfg.n0, "n0")?)?;
            Ok((spec, None))
        }
        _ => Err(EvsiError::Config(
            "spec takes either `prior` or `family` with `mu0`, `sigma2` and `n0`".into(),
        )),
    }
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let input = &config.input;
    let (pa, spec, source, priors) = match (&input.path, input.builtin) {
        (Some(path), _) => {
            let pa = load_pa_dataset(path)?;
            let spec_cfg = config.spec.as_ref().ok_or_else(|| EvsiError::Config("missing [spec]".into()))?;
            let (spec, priors) = spec_from_config(spec_cfg, &pa)?;
            (pa, spec, Source::File, priors)
        }
        (None, Some(BuiltinCase::Stylized)) => {
            let scenario = StylizedScenario::new(input.scenario.unwrap_or(1))?;
            let pa = generate_case1_pa(scenario, input.samples.unwrap_or(100_000), config.seed)?;
            let priors = vec![scenario.prior(); scenario.n_focal()];
            (pa, case1_spec(scenario), Source::Stylized(scenario), Some(priors))
        }
        (None, Some(BuiltinCase::Markov)) => {
            let model = config.markov.clone().unwrap_or_default();
            let (spec, prior) = case2_exercise(input.exercise.unwrap_or(1))?;
            let pa = generate_case2_pa(&model, input.samples.unwrap_or(10_000), config.seed)?;
            (pa, spec, Source::Markov(model), Some(vec![prior]))
        }
        (None, None) => return Err(EvsiError::Config("input needs `path` or `builtin`".into())),
    };
    // an explicit [spec] overrides a builtin one
    let (spec, priors) = match (&config.spec, &source) {
        (Some(cfg), Source::Stylized(_) | Source::Markov(_)) => spec_from_config(cfg, &pa)?,
        _ => (spec, priors),
    };
    spec.check_against(&pa)?;
    Ok(Prepared { pa, spec, source, priors })
}

fn flat_curve(method: Method, grid: &[u64], value: EvsiEstimate, spec: &DataCollectionSpec) -> EvsiCurve {
    EvsiCurve {
        method,
        points: grid
            .iter()
            .map(|&n| EvsiPoint {
                n,
                evsi: value.evsi,
                mc_se: value.mc_se,
            })
            .collect(),
        spec_digest: spec_digest(spec),
    }
}

fn nested_curve(prep: &Prepared, grid: &[u64], config: &RunConfig) -> Result<EvsiCurve> {
    let priors = prep
        .priors
        .as_ref()
        .ok_or_else(|| EvsiError::UnsupportedFamily("nested Monte Carlo needs conjugate priors".into()))?;
    let focal: Vec<(usize, ConjugatePrior)> = prep.spec.focal_indices.iter().copied().zip(priors.iter().copied()).collect();
    let (benefit, draw): (Box<BenefitFn>, Box<PriorDrawFn>) = match &prep.source {
        Source::Stylized(s) => {
            let s = *s;
            let normal = Normal::new(stylized::MU0, (stylized::SIGMA2 / stylized::N0).sqrt()).expect("valid normal");
            (
                Box::new(move |theta: &[f64]| Ok(vec![0.0, s.inb(theta)?])),
                Box::new(move |rng: &mut ChaCha8Rng| (0..s.n_focal()).map(|_| normal.sample(rng)).collect()),
            )
        }
        Source::Markov(model) => {
            let model = model.clone();
            (
                Box::new(move |t: &[f64]| markov_cohort_run(&model, &[t[0], t[1], t[2], t[3]])),
                Box::new(|rng: &mut ChaCha8Rng| draw_case2_theta(rng).to_vec()),
            )
        }
        Source::File => {
            return Err(EvsiError::Config(
                "nested-mc needs a model to evaluate and runs on builtin inputs only".into(),
            ))
        }
    };
    let problem = NestedMcProblem {
        benefit: benefit.as_ref(),
        prior_draw: draw.as_ref(),
        focal,
    };
    let points = grid
        .iter()
        .map(|&n| {
            let e = nested_mc_evsi(&problem, n, config.options.nested_outer, config.options.nested_inner, config.seed)?;
            Ok(EvsiPoint { n, evsi: e.evsi, mc_se: e.mc_se })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvsiCurve {
        method: Method::NestedMc,
        points,
        spec_digest: spec_digest(&prep.spec),
    })
}

/// Runs every requested method on one shared PA dataset.
pub fn run_analysis(config: &RunConfig) -> Result<AnalysisOutput> {
    config.validate().during("cli::parse_config")?;
    let grid = config.grid.points().during("cli::parse_config")?;
    let prep = prepare(config).during("cli::load_input")?;
    let evppi_value = evppi(&prep.pa, &prep.spec.focal_indices, &config.spline).during("cli::run_analysis")?;

    let needs_fit = config.methods.iter().any(|m| matches!(m, Method::Tga | Method::Ga));
    let estimator = if needs_fit {
        let options = TgaOptions {
            basis: config.spline,
            variance_adjustment: config.options.variance_adjustment,
            target_rule: config.options.target_rule,
            information: None,
        };
        Some(TgaEstimator::fit(&prep.pa, &prep.spec, options).during("cli::run_analysis")?)
    } else {
        None
    };

    let mut curves = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let curve = match method {
            Method::Tga | Method::Ga => estimator
                .as_ref()
                .expect("fitted when tga or ga is requested")
                .curve(method, &grid)
                .during("estimators::evsi_curve"),
            Method::Npreg => evsi_curve_npreg(&prep.pa, &prep.spec, &grid, config.seed, &config.spline),
            Method::Analytic => match prep.source {
                Source::Stylized(s) => grid
                    .iter()
                    .map(|&n| {
                        analytic_evsi_stylized(&prep.pa, s, n, config.seed).map(|e| EvsiPoint {
                            n,
                            evsi: e.evsi,
                            mc_se: e.mc_se,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|points| EvsiCurve {
                        method,
                        points,
                        spec_digest: spec_digest(&prep.spec),
                    }),
                _ => Err(EvsiError::Config("the analytic method covers the stylized scenarios only".into()))
                    .during("oracles::analytic_evsi"),
            },
            Method::NestedMc => nested_curve(&prep, &grid, config).during("oracles::nested_mc"),
            Method::Evppi => Ok(flat_curve(method, &grid, evppi_value, &prep.spec)),
        }
        .during("cli::run_analysis")?;
        eprintln!("{method}: {} grid points", curve.points.len());
        curves.push(curve);
    }
    Ok(AnalysisOutput {
        curves,
        evppi: evppi_value,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvsiError::Io(e.into()))?;
    let io = |e: csv::Error| EvsiError::Io(e.into());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV per curve, `evppi.csv` and, when `plot` is set, `curves.svg`.
pub fn emit_curves(output: &AnalysisOutput, dir: &Path, plot: bool) -> Result<Vec<PathBuf>> {
    if output.curves.is_empty() {
        return Err(EvsiError::Config("no curves to write".into())).during("cli::emit_curve");
    }
    let inner = || -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for curve in &output.curves {
            let path = dir.join(format!("evsi_{}.csv", curve.method));
            let rows = curve
                .points
                .iter()
                .map(|p| vec![curve.method.to_string(), p.n.to_string(), p.evsi.to_string(), p.mc_se.to_string()]);
            write_csv(&path, &["method", "n", "evsi", "mc_se"], rows)?;
            written.push(path);
        }
        let path = dir.join("evppi.csv");
        let row = vec![output.evppi.evsi.to_string(), output.evppi.mc_se.to_string()];
        write_csv(&path, &["evppi", "mc_se"], [row])?;
        written.push(path);
        if plot {
            let path = dir.join("curves.svg");
            fs::write(&path, render_svg(output))?;
            written.push(path);
        }
        Ok(written)
    };
    inner().during("cli::emit_curve")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of every curve with a dashed EVPPI level.
pub fn render_svg(output: &AnalysisOutput) -> String {
    let (w, h, pad) = (720.0, 440.0, 60.0);
    let points = output.curves.iter().flat_map(|c| c.points.iter());
    let n_max = points.clone().map(|p| p.n).max().unwrap_or(1).max(1) as f64;
    let n_min = points.clone().map(|p| p.n).min().unwrap_or(0) as f64;
    let y_max = points
        .map(|p| p.evsi)
        .chain([output.evppi.evsi])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;
    let span = (n_max - n_min).max(1.0);
    let sx = |n: f64| pad + (n - n_min) / span * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - v / y_max * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {top} V{bottom} H{right}" fill="none" stroke="black"/>"#,
        top = pad,
        bottom = h - pad,
        right = w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">sample size n</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{n_min}</text>"#, sx(n_min), h - pad + 16.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{n_max}</text>"#, sx(n_max), h - pad + 16.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.0}</text>"#, pad - 4.0, pad + 4.0, y_max);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">0</text>"#, pad - 4.0, h - pad + 4.0);
    let ey = sy(output.evppi.evsi);
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{ey:.2}" x2="{}" y2="{ey:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
        w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" font-size="11" fill="gray" text-anchor="end">EVPPI</text>"#, w - pad, ey - 4.0);
    for (k, curve) in output.curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.n as f64), sy(p.evsi)))
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, path.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{colour}">{}</text>"#,
            pad + 10.0,
            pad + 16.0 * (k as f64 + 1.0),
            curve.method
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Entry point shared by the binary: resolve, run, write.
pub fn run(args: &CliArgs) -> Result<Vec<PathBuf>> {
    let config = args.resolve().during("cli::parse_config")?;
    let output = run_analysis(&config)?;
    emit_curves(&output, &config.output.dir, config.output.plot)
}
