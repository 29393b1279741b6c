//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero when any fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use tempfile::TempDir;

use evsi::case_studies::markov::draw_case2_theta;
use evsi::case_studies::{
    case1_spec, case2_exercise, generate_case1_pa, generate_case2_pa, markov_cohort_run, MarkovModelConfig,
    StylizedScenario,
};
use evsi::cli::{emit_curves, parse_config, run_analysis};
use evsi::estimators::{
    evppi, evsi_curve_npreg, evsi_from_conditional, evsi_from_conditional_inb, ConditionalBenefitSamples, EvsiCurve,
    EvsiEstimate, Method, TgaEstimator, TgaOptions,
};
use evsi::fisher::{adjust_conditional_variances, expected_fisher, numeric_expected_fisher, target_conditional_variance};
use evsi::oracles::{
    analytic_evsi_stylized, closed_form_linear_gaussian_evsi, nested_mc_evsi, BenefitFn, NestedMcProblem, PriorDrawFn,
};
use evsi::pa_data::{Likelihood, PaDataset};
use evsi::spline::{fit_additive_spline, BasisConfig, SplineModel};

const SEED: u64 = 2024;
const CASE1_M: usize = 100_000;
const CASE2_M: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn case1_grid() -> Vec<u64> {
    (1..=30).map(|k| 10 * k).collect()
}

/// Everything computed on the four stylized PA datasets, shared by several criteria.
struct Case1 {
    scenario: StylizedScenario,
    pa: PaDataset,
    tga: EvsiCurve,
    ga: EvsiCurve,
    npreg: Option<EvsiCurve>,
    analytic: Vec<EvsiEstimate>,
    evppi: EvsiEstimate,
    zero: (f64, f64),
}

fn case1(scenario: StylizedScenario) -> Case1 {
    let grid = case1_grid();
    let pa = generate_case1_pa(scenario, CASE1_M, SEED).unwrap();
    let spec = case1_spec(scenario);
    let est = TgaEstimator::fit(&pa, &spec, TgaOptions::default()).unwrap();
    let tga = est.curve(Method::Tga, &grid).unwrap();
    let ga = est.curve(Method::Ga, &grid).unwrap();
    let zero = (est.evaluate(Method::Tga, 0).unwrap().evsi, est.evaluate(Method::Ga, 0).unwrap().evsi);
    let npreg = (scenario.id() == 1).then(|| evsi_curve_npreg(&pa, &spec, &grid, SEED, &BasisConfig::default()).unwrap());
    let analytic = grid
        .iter()
        .map(|&n| analytic_evsi_stylized(&pa, scenario, n, SEED).unwrap())
        .collect();
    let evppi = evppi(&pa, &spec.focal_indices, &BasisConfig::default()).unwrap();
    Case1 {
        scenario,
        pa,
        tga,
        ga,
        npreg,
        analytic,
        evppi,
        zero,
    }
}

fn criterion_1(s1: &Case1) -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut fails = 0;
    for curve in [Some(&s1.tga), Some(&s1.ga), s1.npreg.as_ref()].into_iter().flatten() {
        for p in &curve.points {
            let exact = closed_form_linear_gaussian_evsi(-100.0, 5000.0, 0.0, 1.0, 5.0, p.n).unwrap();
            let tol = (0.02 * exact).max(3.0 * p.mc_se);
            let ratio = (p.evsi - exact).abs() / tol;
            if ratio > 1.0 {
                fails += 1;
            }
            if ratio > worst.0 {
                worst = (ratio, format!("{} n={} est {:.2} exact {:.2}", curve.method, p.n, p.evsi, exact));
            }
        }
    }
    Outcome::new(fails == 0, format!("{fails} of 90 points outside; worst |err|/tol {:.2} at {}", worst.0, worst.1))
}

fn criterion_2(cases: &[Case1]) -> Outcome {
    let mut fails = Vec::new();
    let mut worst = 0.0f64;
    for c in cases.iter().filter(|c| c.scenario.id() >= 2) {
        for (p, a) in c.tga.points.iter().zip(&c.analytic) {
            if p.n < 20 {
                continue;
            }
            let tol = (0.05 * a.evsi.abs()).max(3.0 * p.mc_se);
            let ratio = (p.evsi - a.evsi).abs() / tol;
            worst = worst.max(ratio);
            if ratio > 1.0 {
                fails.push(format!("s{} n={} tga {:.1} analytic {:.1}", c.scenario.id(), p.n, p.evsi, a.evsi));
            }
        }
    }
    Outcome::new(
        fails.is_empty(),
        format!("{} failing points, worst |err|/tol {worst:.2} {}", fails.len(), fails.first().cloned().unwrap_or_default()),
    )
}

fn criterion_3(cases: &[Case1]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in cases.iter().filter(|c| matches!(c.scenario.id(), 2 | 3)) {
        let (mut total, mut above) = (0, 0);
        for (p, a) in c.ga.points.iter().zip(&c.analytic) {
            if p.n < 50 {
                continue;
            }
            total += 1;
            if p.evsi - a.evsi > 3.0 * p.mc_se {
                above += 1;
            }
        }
        let share = above as f64 / total as f64;
        pass &= share >= 0.8;
        let at300 = (c.ga.points.last().unwrap().evsi, c.analytic.last().unwrap().evsi);
        parts.push(format!(
            "s{}: GA above analytic by >3se at {above}/{total} points (n=300: ga {:.1}, analytic {:.1})",
            c.scenario.id(),
            at300.0,
            at300.1
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(1..2000);
        let inv: Vec<f64> = (0..len).map(|_| 10f64.powf(rng.random_range(-6.0..6.0))).collect();
        let target = 10f64.powf(rng.random_range(-4.0..4.0));
        let adj = adjust_conditional_variances(&inv, target).unwrap();
        let mean = adj.adjusted.iter().sum::<f64>() / len as f64;
        worst = worst.max((mean - target).abs() / target);
    }
    Outcome::new(worst <= 1e-12, format!("max relative deviation {worst:.2e} over 100 vectors"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..5000u64);
        let n0 = 10f64.powf(rng.random_range(-2.0..3.0));
        let sigma2 = 10f64.powf(rng.random_range(-3.0..3.0));
        let phi: Vec<f64> = (0..500).map(|_| rng.random_range(-50.0..50.0)).collect();
        let inv: Vec<f64> = phi
            .iter()
            .map(|&p| 1.0 / expected_fisher(Likelihood::Gaussian, p, n, sigma2).unwrap())
            .collect();
        let target = target_conditional_variance(n, n0, sigma2);
        let adj = adjust_conditional_variances(&inv, target).unwrap();
        let expected = sigma2 / (n0 + n as f64);
        for a in &adj.adjusted {
            worst = worst.max((a - expected).abs() / expected);
        }
    }
    Outcome::new(worst <= 1e-12, format!("max relative deviation {worst:.2e} over 20 triples"))
}

fn criterion_6() -> Outcome {
    const DRAWS: usize = 100_000;
    let n = 10;
    let mut worst = (0.0f64, String::new());
    let mut check = |family: Likelihood, phi: f64, numeric: f64, sigma2: f64| {
        let exact = expected_fisher(family, phi, n, sigma2).unwrap();
        let rel = (numeric - exact).abs() / exact;
        if rel > worst.0 {
            worst = (rel, format!("{} phi={phi}", family.name()));
        }
    };
    let sigma2: f64 = 2.0;
    for (k, phi) in [-3.0, -0.5, 0.0, 1.0, 4.0].into_iter().enumerate() {
        let sd = sigma2.sqrt();
        let v = numeric_expected_fisher(
            |x, m| -0.5 * ((x - m) / sd).powi(2) - sd.ln(),
            |m, rng| Normal::new(m, sd).unwrap().sample(rng),
            phi,
            n,
            DRAWS,
            k as u64,
        )
        .unwrap();
        check(Likelihood::Gaussian, phi, v, sigma2);
    }
    for (k, phi) in [0.3, 0.4, 0.5, 0.6, 0.7].into_iter().enumerate() {
        let v = numeric_expected_fisher(
            |x, p: f64| x * p.ln() + (1.0 - x) * (1.0 - p).ln(),
            |p, rng| f64::from(u8::from(Bernoulli::new(p).unwrap().sample(rng))),
            phi,
            n,
            DRAWS,
            10 + k as u64,
        )
        .unwrap();
        check(Likelihood::Bernoulli, phi, v, 0.0);
    }
    for (k, phi) in [1.5, 2.0, 3.0, 5.0, 10.0].into_iter().enumerate() {
        let v = numeric_expected_fisher(
            |x, l: f64| x * l.ln() - l,
            |l, rng| Poisson::new(l).unwrap().sample(rng),
            phi,
            n,
            DRAWS,
            20 + k as u64,
        )
        .unwrap();
        check(Likelihood::Poisson, phi, v, 0.0);
    }
    Outcome::new(worst.0 < 0.01, format!("max relative error {:.3}% at {}", 100.0 * worst.0, worst.1))
}

fn fd_check(model: &SplineModel, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-4 * (hi - lo);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = rng.random_range(lo + 0.02 * (hi - lo)..hi - 0.02 * (hi - lo));
        let fd = (model.eval_mean(&[x + h]) - 2.0 * model.eval_mean(&[x]) + model.eval_mean(&[x - h])) / (h * h);
        let an = model.eval_second_partials(&[x])[0];
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()));
    }
    worst
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let (lo, hi) = (0.5, 2.5);
    let x: Vec<f64> = (0..2000).map(|_| rng.random_range(lo..hi)).collect();
    let fits: [(&str, fn(f64) -> f64); 3] = [("x^2", |v| v * v), ("x^3", |v| v * v * v), ("sin", |v| (2.0 * v).sin())];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, f) in fits {
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let model = fit_additive_spline(&[&x], &y, &BasisConfig::default()).unwrap();
        let worst = fd_check(&model, lo, hi, &mut rng);
        pass &= worst < 1e-5;
        parts.push(format!("{name} {worst:.1e}"));
    }
    Outcome::new(pass, format!("max relative error: {}", parts.join(", ")))
}

fn nested_stylized(scenario: StylizedScenario, n: u64) -> EvsiEstimate {
    let benefit: Box<BenefitFn> = Box::new(move |t: &[f64]| Ok(vec![0.0, scenario.inb(t)?]));
    let k = scenario.n_focal();
    let draw: Box<PriorDrawFn> =
        Box::new(move |rng: &mut ChaCha8Rng| (0..k).map(|_| Normal::new(0.0, 0.2f64.sqrt()).unwrap().sample(rng)).collect());
    let problem = NestedMcProblem {
        benefit: benefit.as_ref(),
        prior_draw: draw.as_ref(),
        focal: (0..k).map(|j| (j, scenario.prior())).collect(),
    };
    nested_mc_evsi(&problem, n, 4_000, 400, SEED).unwrap()
}

fn criterion_8(cases: &[Case1]) -> Outcome {
    let mut negatives = 0;
    let mut over = Vec::new();
    let mut nonzero_origin = 0;
    let mut checked = 0;
    for c in cases {
        if c.zero != (0.0, 0.0) {
            nonzero_origin += 1;
        }
        let mut curves: Vec<(String, Vec<(u64, EvsiEstimate)>)> = Vec::new();
        for curve in [Some(&c.tga), Some(&c.ga), c.npreg.as_ref()].into_iter().flatten() {
            curves.push((curve.method.to_string(), curve.points.iter().map(|p| (p.n, EvsiEstimate { evsi: p.evsi, mc_se: p.mc_se })).collect()));
        }
        curves.push(("analytic".into(), case1_grid().into_iter().zip(c.analytic.iter().copied()).collect()));
        curves.push(("nested-mc".into(), [10, 100, 300].into_iter().map(|n| (n, nested_stylized(c.scenario, n))).collect()));
        for (name, pts) in &curves {
            for (n, e) in pts {
                checked += 1;
                if e.evsi < 0.0 {
                    negatives += 1;
                }
                if e.evsi > c.evppi.evsi + 3.0 * combined(e.mc_se, c.evppi.mc_se) {
                    over.push(format!("s{} {name} n={n} {:.1} > evppi {:.1}", c.scenario.id(), e.evsi, c.evppi.evsi));
                }
            }
        }
    }

    // NB versus INB combiner on conditional samples with a zero reference column
    let mut mismatches = 0;
    for c in cases {
        let spec = case1_spec(c.scenario);
        let est = TgaEstimator::fit(&c.pa, &spec, TgaOptions::default()).unwrap();
        for n in [10, 100] {
            let cond = est.conditional(Method::Tga, n).unwrap();
            let inb: Vec<f64> = (0..cond.values.nrows()).map(|i| cond.values[(i, 1)] - cond.values[(i, 0)]).collect();
            if evsi_from_conditional(&cond).evsi != evsi_from_conditional_inb(&inb).evsi {
                mismatches += 1;
            }
        }
    }
    // and on integer-valued benefits with a nonzero reference
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 8);
    for _ in 0..200 {
        let m = rng.random_range(2..500);
        let values = DMatrix::from_fn(m, 2, |_, _| f64::from(rng.random_range(-10_000..10_000)));
        let inb: Vec<f64> = (0..m).map(|i| values[(i, 1)] - values[(i, 0)]).collect();
        let cond = ConditionalBenefitSamples { values, method: Method::Tga };
        if evsi_from_conditional(&cond).evsi != evsi_from_conditional_inb(&inb).evsi {
            mismatches += 1;
        }
    }

    let pass = negatives == 0 && over.is_empty() && nonzero_origin == 0 && mismatches == 0;
    Outcome::new(
        pass,
        format!(
            "{checked} points: {negatives} negative, {} above EVPPI bound{}; EVSI(0) nonzero in {nonzero_origin} scenarios; {mismatches} NB/INB mismatches",
            over.len(),
            over.first().map(|s| format!(" ({s})")).unwrap_or_default()
        ),
    )
}

fn criterion_9() -> Outcome {
    let config = MarkovModelConfig::default();
    let pa = generate_case2_pa(&config, CASE2_M, SEED).unwrap();
    let model = config.clone();
    let benefit: Box<BenefitFn> = Box::new(move |t: &[f64]| markov_cohort_run(&model, &[t[0], t[1], t[2], t[3]]));
    let draw: Box<PriorDrawFn> = Box::new(|rng: &mut ChaCha8Rng| draw_case2_theta(rng).to_vec());
    let grid: Vec<u64> = (1..=20).map(|k| 5 * k).collect();
    let mut agree_fail = Vec::new();
    let mut bound_fail = Vec::new();
    let mut rows = Vec::new();
    for k in 1..=4 {
        let (spec, prior) = case2_exercise(k).unwrap();
        let ev = evppi(&pa, &spec.focal_indices, &BasisConfig::default()).unwrap();
        let est = TgaEstimator::fit(&pa, &spec, TgaOptions::default()).unwrap();
        let tga = est.curve(Method::Tga, &grid).unwrap();
        for p in &tga.points {
            if p.evsi < 0.0 || p.evsi > ev.evsi + 3.0 * combined(p.mc_se, ev.mc_se) {
                bound_fail.push(format!("ex{k} n={}", p.n));
            }
        }
        let problem = NestedMcProblem {
            benefit: benefit.as_ref(),
            prior_draw: draw.as_ref(),
            focal: vec![(k - 1, prior)],
        };
        for n in [30, 50, 100] {
            let nm = nested_mc_evsi(&problem, n, 10_000, 1_000, SEED).unwrap();
            let p = tga.point(n).unwrap();
            let tol = (0.1 * nm.evsi.abs()).max(3.0 * combined(p.mc_se, nm.mc_se));
            if (p.evsi - nm.evsi).abs() > tol {
                agree_fail.push(format!("ex{k} n={n}"));
            }
            rows.push(format!("ex{k} n={n} tga {:.0} nested {:.0}", p.evsi, nm.evsi));
        }
    }
    for r in &rows {
        println!("    {r}");
    }
    Outcome::new(
        agree_fail.is_empty() && bound_fail.is_empty(),
        format!(
            "{} of 12 agreement checks fail [{}]; {} of 80 TGA points outside [0, EVPPI + 3se] [{}]",
            agree_fail.len(),
            agree_fail.join(" "),
            bound_fail.len(),
            bound_fail.join(" ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let pa = generate_case2_pa(&MarkovModelConfig::default(), CASE2_M, SEED).unwrap();
    let (spec, _) = case2_exercise(3).unwrap();
    let est = TgaEstimator::fit(&pa, &spec, TgaOptions::default()).unwrap();
    let grid: Vec<u64> = (1..=60).map(|k| 5 * k).collect();
    let start = Instant::now();
    let curve = est.curve(Method::Tga, &grid).unwrap();
    let elapsed = start.elapsed();
    Outcome::new(
        elapsed.as_secs_f64() < 1.0 && curve.points.len() == 60,
        format!("60-point TGA grid in {:.3} s", elapsed.as_secs_f64()),
    )
}

fn criterion_11() -> Outcome {
    let doc = r#"
seed = 77
methods = ["tga", "ga", "npreg", "analytic", "nested-mc", "evppi"]
[input]
builtin = "stylized"
scenario = 4
samples = 10000
[grid]
values = [0, 10, 50, 200]
[options]
nested_outer = 500
nested_inner = 50
"#;
    let config = parse_config(doc).unwrap();
    let tmp = TempDir::new().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = run_analysis(&config).unwrap();
        runs.push(emit_curves(&out, &tmp.path().join(name), false).unwrap());
    }
    let mut differing = Vec::new();
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        if fs::read(a).unwrap() != fs::read(b).unwrap() {
            differing.push(a.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    let pass = differing.is_empty() && runs[0].len() == 7;
    Outcome::new(pass, format!("{} files compared, differing: {differing:?}", runs[0].len()))
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut report = |id: u32, name: &str, run: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict} {name}: {} ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(id);
        }
    };

    let cases: Vec<Case1> = StylizedScenario::ALL.into_iter().map(case1).collect();
    report(1, "linear-Gaussian oracle agreement", &|| criterion_1(&cases[0]));
    report(2, "nonlinear oracle agreement", &|| criterion_2(&cases));
    report(3, "GA bias direction", &|| criterion_3(&cases));
    report(4, "variance-adjustment identity", &criterion_4);
    report(5, "Gaussian self-consistency", &criterion_5);
    report(6, "closed-form vs numeric Fisher information", &criterion_6);
    report(7, "spline second derivatives vs finite differences", &criterion_7);
    report(8, "structural invariants", &|| criterion_8(&cases));
    report(9, "Markov cross-method agreement", &criterion_9);
    report(10, "TGA grid efficiency", &criterion_10);
    report(11, "reproducible CSV output", &criterion_11);

    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
