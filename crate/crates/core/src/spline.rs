//! Additive B-spline regression.
//!
//! Each predictor gets its own clamped knot vector; the fitted surface is an
//! intercept plus one univariate spline per predictor, with no interactions.
//! The first basis function of every predictor is dropped because the full
//! basis already sums to one and would duplicate the intercept.
//!
//! Values and derivatives come from the standard triangular-table recurrence
//! for B-spline basis derivatives. Outside the training range a term is
//! extended linearly from its boundary value and slope, so its second
//! derivative there is zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    /// Interior knots at equally spaced sample quantiles.
    Quantile,
    /// Interior knots equally spaced across the sample range.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub degree: usize,
    pub interior_knots: usize,
    pub knot_rule: KnotRule,
    /// Penalty on the squared norm of the non-intercept coefficients.
    pub ridge: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            interior_knots: 10,
            knot_rule: KnotRule::Quantile,
            ridge: 1e-10,
        }
    }
}

impl BasisConfig {
    /// Checks the config for use where second derivatives are needed.
    pub fn validate(&self) -> Result<()> {
        self.validate_min_degree(2)
    }

    fn validate_min_degree(&self, min_degree: usize) -> Result<()> {
        if self.degree < min_degree || self.degree > MAX_DEGREE {
            return Err(EvsiError::Config(format!(
                "spline degree must lie in {min_degree}..={MAX_DEGREE}, got {}",
                self.degree
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(EvsiError::Config(format!(
                "ridge must be a nonnegative number, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Highest supported spline degree. Basis tables live on the stack.
pub const MAX_DEGREE: usize = 7;
const ORDER_CAP: usize = MAX_DEGREE + 1;

/// `table[k][j]`: `k`-th derivative of the `j`-th nonzero basis function.
type DerivTable = [[f64; ORDER_CAP]; ORDER_CAP];

/// Clamped knot vector: both boundary knots repeated `degree + 1` times.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// Builds a clamped knot vector from the boundary points and strictly
    /// increasing interior knots lying inside `(lower, upper)`.
    pub fn clamped(lower: f64, upper: f64, interior: &[f64], degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(EvsiError::Config(format!(
                "spline degree {degree} exceeds the maximum of {MAX_DEGREE}"
            )));
        }
        if !(lower < upper) {
            return Err(EvsiError::Domain(format!(
                "knot range [{lower}, {upper}] is empty"
            )));
        }
        let mut prev = lower;
        for &k in interior {
            if !(k > prev && k < upper) {
                return Err(EvsiError::Domain(format!(
                    "interior knot {k} is not strictly increasing inside ({lower}, {upper})"
                )));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * (degree + 1));
        knots.extend(std::iter::repeat_n(lower, degree + 1));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self { knots, degree })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Index of the knot span containing `x`, clamped to the valid range.
    /// The upper boundary belongs to the last span.
    pub fn find_span(&self, x: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if x >= self.knots[n] {
            return n - 1;
        }
        if x <= self.knots[p] {
            return p;
        }
        // first knot strictly greater than x, minus one
        let upper = self.knots[p..=n].partition_point(|&k| k <= x) + p;
        upper - 1
    }

    /// Nonzero basis functions and their derivatives up to order `n_ders`
    /// at `x`. Returns the span and a table `ders[k][j]` holding the `k`-th
    /// derivative of basis function `span - degree + j`.
    pub fn basis_derivatives(&self, x: f64, n_ders: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let (span, table) = self.derivative_table(x, n_ders.min(MAX_DEGREE));
        let ders = (0..=n_ders)
            .map(|k| if k < ORDER_CAP { table[k][..=p].to_vec() } else { vec![0.0; p + 1] })
            .collect();
        (span, ders)
    }

    /// Allocation-free core of [`basis_derivatives`](Self::basis_derivatives);
    /// rows past `n_ders` are left at zero.
    fn derivative_table(&self, x: f64, n_ders: usize) -> (usize, DerivTable) {
        let p = self.degree;
        let u = &self.knots;
        let span = self.find_span(x);
        let mut ndu = [[0.0; ORDER_CAP]; ORDER_CAP];
        let mut left = [0.0; ORDER_CAP];
        let mut right = [0.0; ORDER_CAP];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = [[0.0; ORDER_CAP]; ORDER_CAP];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0; ORDER_CAP]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n_ders.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().take(n_ders + 1).skip(1) {
            for v in row[..=p].iter_mut() {
                *v *= factor;
            }
            factor *= p.saturating_sub(k) as f64;
        }
        (span, ders)
    }

    /// All `n_basis()` basis function values at `x`.
    pub fn eval_basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        let (span, ders) = self.basis_derivatives(x, 0);
        for (j, v) in ders[0].iter().enumerate() {
            out[span - self.degree + j] = *v;
        }
        out
    }
}

/// Knot vector for one predictor, placed per `config.knot_rule`.
///
/// Quantile knots that coincide with each other or with the boundary (heavy
/// ties in `x`) are dropped, so the result may have fewer interior knots than
/// requested.
pub fn build_basis(x: &[f64], config: &BasisConfig) -> Result<KnotVector> {
    config.validate()?;
    place_knots(x, config)
}

fn place_knots(x: &[f64], config: &BasisConfig) -> Result<KnotVector> {
    let coefficients = config.degree + config.interior_knots + 1;
    if x.len() <= coefficients {
        return Err(EvsiError::Underdetermined {
            rows: x.len(),
            coefficients,
        });
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(EvsiError::Domain(format!("non-finite predictor value {bad}")));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo == hi {
        return Err(EvsiError::DegeneratePredictor(lo));
    }

    let k = config.interior_knots;
    let raw: Vec<f64> = match config.knot_rule {
        KnotRule::Uniform => (1..=k)
            .map(|i| lo + (hi - lo) * i as f64 / (k + 1) as f64)
            .collect(),
        KnotRule::Quantile => {
            let mut sorted = x.to_vec();
            sorted.sort_by(f64::total_cmp);
            (1..=k)
                .map(|i| quantile_sorted(&sorted, i as f64 / (k + 1) as f64))
                .collect()
        }
    };
    let mut interior: Vec<f64> = Vec::with_capacity(k);
    for v in raw {
        if v > lo && v < hi && interior.last().is_none_or(|&last| v > last) {
            interior.push(v);
        }
    }
    KnotVector::clamped(lo, hi, &interior, config.degree)
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let i = h.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// One predictor's contribution. `coefs[0]` is pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTerm {
    basis: KnotVector,
    coefs: Vec<f64>,
}

impl SplineTerm {
    pub fn basis(&self) -> &KnotVector {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefs
    }

    pub fn training_range(&self) -> (f64, f64) {
        (self.basis.lower(), self.basis.upper())
    }

    /// Value, first and second derivative at a point inside the knot range.
    fn inside(&self, x: f64) -> [f64; 3] {
        let (span, table) = self.basis.derivative_table(x, 2);
        self.combine(span, &table)
    }

    fn combine(&self, span: usize, table: &DerivTable) -> [f64; 3] {
        let p = self.basis.degree();
        let coefs = &self.coefs[span - p..=span];
        let mut out = [0.0; 3];
        for (k, row) in table.iter().take(3).enumerate() {
            out[k] = row[..=p].iter().zip(coefs).map(|(b, c)| b * c).sum();
        }
        out
    }

    /// Point where the basis is evaluated: `x` itself inside the range,
    /// otherwise the nearest boundary.
    fn anchor(&self, x: f64) -> f64 {
        let (lo, hi) = self.training_range();
        x.clamp(lo, hi)
    }

    /// Applies the linear extension to a boundary evaluation.
    fn extend(&self, x: f64, edge: f64, [v, d1, d2]: [f64; 3]) -> (f64, f64) {
        if x == edge {
            (v, d2)
        } else {
            (v + d1 * (x - edge), 0.0)
        }
    }

    /// Value and second derivative, with linear extension outside the range.
    pub fn value_and_curvature(&self, x: f64) -> (f64, f64) {
        let edge = self.anchor(x);
        self.extend(x, edge, self.inside(edge))
    }
}

/// Fitted additive spline: `intercept + Σ_p term_p(x_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineModel {
    intercept: f64,
    terms: Vec<SplineTerm>,
}

impl SplineModel {
    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn terms(&self) -> &[SplineTerm] {
        &self.terms
    }

    pub fn n_predictors(&self) -> usize {
        self.terms.len()
    }

    /// Intercept plus the free (non-pinned) coefficients of every term.
    pub fn coefficient_count(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| t.basis.n_basis() - 1)
            .sum::<usize>()
    }

    /// Fitted mean at `point`.
    ///
    /// # Panics
    /// If `point` does not have one entry per predictor.
    pub fn eval_mean(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.terms.len(), "point dimension");
        self.terms
            .iter()
            .zip(point)
            .fold(self.intercept, |acc, (t, &x)| acc + t.value_and_curvature(x).0)
    }

    /// Diagonal second partials at `point`; zero outside the training range.
    pub fn eval_second_partials(&self, point: &[f64]) -> Vec<f64> {
        assert_eq!(point.len(), self.terms.len(), "point dimension");
        self.terms
            .iter()
            .zip(point)
            .map(|(t, &x)| t.value_and_curvature(x).1)
            .collect()
    }

    /// Fitted mean and diagonal second partials in one pass.
    pub fn eval_with_curvature(&self, point: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(point.len(), self.terms.len(), "point dimension");
        let mut value = self.intercept;
        let curv = self
            .terms
            .iter()
            .zip(point)
            .map(|(t, &x)| {
                let (v, c) = t.value_and_curvature(x);
                value += v;
                c
            })
            .collect();
        (value, curv)
    }
}

/// Several models evaluated together. Where the models share a predictor's
/// knot vector (as [`fit_additive_splines`] guarantees) the basis table is
/// computed once per point and reused for every model.
#[derive(Debug, Clone)]
pub struct ModelSet<'a> {
    models: &'a [SplineModel],
    shared: Vec<bool>,
}

impl<'a> ModelSet<'a> {
    /// # Panics
    /// If the models disagree on the number of predictors.
    pub fn new(models: &'a [SplineModel]) -> Self {
        let n_pred = models.first().map_or(0, SplineModel::n_predictors);
        assert!(models.iter().all(|m| m.n_predictors() == n_pred), "predictor count");
        let shared = (0..n_pred)
            .map(|j| models.iter().all(|m| m.terms[j].basis == models[0].terms[j].basis))
            .collect();
        Self { models, shared }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Writes each model's fitted mean into `values` and its diagonal second
    /// partials into `curvature`, laid out model-major (`d * P + j`).
    /// Matches [`SplineModel::eval_with_curvature`] bit for bit.
    pub fn eval_with_curvature(&self, point: &[f64], values: &mut [f64], curvature: &mut [f64]) {
        let n_pred = self.shared.len();
        assert_eq!(point.len(), n_pred, "point dimension");
        assert_eq!(values.len(), self.models.len(), "values length");
        assert_eq!(curvature.len(), self.models.len() * n_pred, "curvature length");
        for (v, m) in values.iter_mut().zip(self.models) {
            *v = m.intercept;
        }
        for (j, &x) in point.iter().enumerate() {
            let first = &self.models[0].terms[j];
            let edge = first.anchor(x);
            let table = self.shared[j].then(|| first.basis.derivative_table(edge, 2));
            for (d, m) in self.models.iter().enumerate() {
                let term = &m.terms[j];
                let raw = match &table {
                    Some((span, t)) => term.combine(*span, t),
                    None => term.inside(term.anchor(x)),
                };
                let edge = if table.is_some() { edge } else { term.anchor(x) };
                let (v, c) = term.extend(x, edge, raw);
                values[d] += v;
                curvature[d * n_pred + j] = c;
            }
        }
    }
}

/// Least-squares fit of `y` on the predictor columns `x`.
pub fn fit_additive_spline(x: &[&[f64]], y: &[f64], config: &BasisConfig) -> Result<SplineModel> {
    let mut models = fit_additive_splines(x, &[y], config)?;
    Ok(models.remove(0))
}

/// Fits one model per response, sharing the knot placement and design matrix.
pub fn fit_additive_splines(
    x: &[&[f64]],
    ys: &[&[f64]],
    config: &BasisConfig,
) -> Result<Vec<SplineModel>> {
    config.validate()?;
    fit_with_configs(x, ys, &vec![*config; x.len()])
}

/// Value-only regression with a separate basis per predictor.
///
/// Degree 1 is accepted here, which suits predictors with very few distinct
/// values. Second partials of such a fit are zero.
pub fn fit_regression_splines(
    x: &[&[f64]],
    ys: &[&[f64]],
    configs: &[BasisConfig],
) -> Result<Vec<SplineModel>> {
    if configs.len() != x.len() {
        return Err(EvsiError::Shape(format!(
            "{} basis configs for {} predictors",
            configs.len(),
            x.len()
        )));
    }
    for c in configs {
        c.validate_min_degree(1)?;
    }
    fit_with_configs(x, ys, configs)
}

fn fit_with_configs(x: &[&[f64]], ys: &[&[f64]], configs: &[BasisConfig]) -> Result<Vec<SplineModel>> {
    if x.is_empty() {
        return Err(EvsiError::Shape("no predictors".into()));
    }
    let m = x[0].len();
    if x.iter().any(|c| c.len() != m) || ys.iter().any(|y| y.len() != m) {
        return Err(EvsiError::Shape("predictor and response lengths differ".into()));
    }
    if let Some(bad) = ys.iter().flat_map(|y| y.iter()).find(|v| !v.is_finite()) {
        return Err(EvsiError::Domain(format!("non-finite response value {bad}")));
    }

    let bases = x
        .iter()
        .zip(configs)
        .map(|(col, cfg)| place_knots(col, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(bases.len());
    let mut k = 1;
    for b in &bases {
        offsets.push(k);
        k += b.n_basis() - 1;
    }
    if m < k {
        return Err(EvsiError::Underdetermined {
            rows: m,
            coefficients: k,
        });
    }

    // per-coefficient penalty, zero for the intercept
    let mut ridge = vec![0.0; k];
    for (p, b) in bases.iter().enumerate() {
        for r in &mut ridge[offsets[p]..offsets[p] + b.n_basis() - 1] {
            *r = configs[p].ridge;
        }
    }
    let r = ys.len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DMatrix::<f64>::zeros(k, r);
    let mut cols: Vec<usize> = Vec::with_capacity(k);
    let mut vals: Vec<f64> = Vec::with_capacity(k);
    for i in 0..m {
        cols.clear();
        vals.clear();
        cols.push(0);
        vals.push(1.0);
        for (p, basis) in bases.iter().enumerate() {
            let (span, ders) = basis.basis_derivatives(x[p][i], 0);
            let first = span - basis.degree();
            for (j, &b) in ders[0].iter().enumerate() {
                let idx = first + j;
                if idx > 0 && b != 0.0 {
                    cols.push(offsets[p] + idx - 1);
                    vals.push(b);
                }
            }
        }
        for a in 0..cols.len() {
            for b in a..cols.len() {
                let (ca, cb) = if cols[a] <= cols[b] {
                    (cols[a], cols[b])
                } else {
                    (cols[b], cols[a])
                };
                xtx[(ca, cb)] += vals[a] * vals[b];
            }
            for (s, y) in ys.iter().enumerate() {
                xty[(cols[a], s)] += vals[a] * y[i];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        if a > 0 {
            xtx[(a, a)] += ridge[a];
        }
    }

    let chol = xtx.cholesky().ok_or(EvsiError::SingularFit)?;
    let beta = chol.solve(&xty);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(EvsiError::SingularFit);
    }

    Ok((0..r)
        .map(|s| {
            let column: DVector<f64> = beta.column(s).into_owned();
            let terms = bases
                .iter()
                .zip(&offsets)
                .map(|(basis, &off)| {
                    let nb = basis.n_basis();
                    let mut coefs = vec![0.0; nb];
                    coefs[1..].copy_from_slice(&column.as_slice()[off..off + nb - 1]);
                    SplineTerm {
                        basis: basis.clone(),
                        coefs,
                    }
                })
                .collect();
            SplineModel {
                intercept: column[0],
                terms,
            }
        })
        .collect())
}

/// Fitted values of `model` at every row of the predictor columns.
pub fn fitted_values(model: &SplineModel, x: &[&[f64]]) -> Vec<f64> {
    let m = x.first().map_or(0, |c| c.len());
    let mut point = vec![0.0; x.len()];
    (0..m)
        .map(|i| {
            for (p, col) in x.iter().enumerate() {
                point[p] = col[i];
            }
            model.eval_mean(&point)
        })
        .collect()
}
