//! Probabilistic-analysis datasets: joint parameter draws and the per-decision
//! net benefits computed from them.
//!
//! On disk a dataset is a CSV file whose header names parameter columns
//! `param.<name>` and benefit columns `nb.<name>`. Row order is simulation order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EvsiError, Result};

pub const PARAM_PREFIX: &str = "param.";
pub const NB_PREFIX: &str = "nb.";

/// M joint draws of the model parameters (M×P) and net benefits (M×D).
#[derive(Debug, Clone, PartialEq)]
pub struct PaDataset {
    theta: DMatrix<f64>,
    nb: DMatrix<f64>,
    param_names: Vec<String>,
    decision_names: Vec<String>,
}

impl PaDataset {
    pub fn new(
        theta: DMatrix<f64>,
        nb: DMatrix<f64>,
        param_names: Vec<String>,
        decision_names: Vec<String>,
    ) -> Result<Self> {
        let m = theta.nrows();
        if nb.nrows() != m {
            return Err(EvsiError::Shape(format!(
                "theta has {m} rows but nb has {}",
                nb.nrows()
            )));
        }
        if m < 2 {
            return Err(EvsiError::InsufficientData { needed: 2, got: m });
        }
        if theta.ncols() < 1 {
            return Err(EvsiError::Schema("at least one parameter column required".into()));
        }
        if nb.ncols() < 2 {
            return Err(EvsiError::Schema("at least two decision columns required".into()));
        }
        if param_names.len() != theta.ncols() || decision_names.len() != nb.ncols() {
            return Err(EvsiError::Shape("column names do not match matrix widths".into()));
        }
        check_unique(&param_names, PARAM_PREFIX)?;
        check_unique(&decision_names, NB_PREFIX)?;
        for (what, mat) in [("theta", &theta), ("nb", &nb)] {
            if let Some(pos) = mat.iter().position(|v| !v.is_finite()) {
                return Err(EvsiError::Domain(format!(
                    "non-finite {what} entry at row {}, column {}",
                    pos % m + 1,
                    pos / m
                )));
            }
        }
        Ok(Self {
            theta,
            nb,
            param_names,
            decision_names,
        })
    }

    /// Builds a dataset from column vectors.
    pub fn from_columns(
        param_names: Vec<String>,
        theta_cols: Vec<Vec<f64>>,
        decision_names: Vec<String>,
        nb_cols: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = theta_cols.first().map_or(0, Vec::len);
        let to_matrix = |cols: Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            if cols.iter().any(|c| c.len() != m) {
                return Err(EvsiError::Shape("columns have unequal lengths".into()));
            }
            let ncols = cols.len();
            Ok(DMatrix::from_vec(m, ncols, cols.concat()))
        };
        Self::new(
            to_matrix(theta_cols)?,
            to_matrix(nb_cols)?,
            param_names,
            decision_names,
        )
    }

    pub fn n_samples(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.theta.ncols()
    }

    pub fn n_decisions(&self) -> usize {
        self.nb.ncols()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn nb(&self) -> &DMatrix<f64> {
        &self.nb
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn decision_names(&self) -> &[String] {
        &self.decision_names
    }

    pub fn param_column(&self, j: usize) -> &[f64] {
        let m = self.n_samples();
        &self.theta.as_slice()[j * m..(j + 1) * m]
    }

    pub fn nb_column(&self, d: usize) -> &[f64] {
        let m = self.n_samples();
        &self.nb.as_slice()[d * m..(d + 1) * m]
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Columns of the listed parameters, in the order given.
    pub fn focal_columns(&self, indices: &[usize]) -> Result<Vec<&[f64]>> {
        indices
            .iter()
            .map(|&j| {
                if j < self.n_params() {
                    Ok(self.param_column(j))
                } else {
                    Err(EvsiError::Index {
                        index: j,
                        len: self.n_params(),
                    })
                }
            })
            .collect()
    }

    pub fn nb_columns(&self) -> Vec<&[f64]> {
        (0..self.n_decisions()).map(|d| self.nb_column(d)).collect()
    }
}

fn check_unique(names: &[String], prefix: &str) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(EvsiError::Schema(format!("duplicate column `{prefix}{n}`")));
        }
    }
    Ok(())
}

/// Benefit of every non-reference decision minus the reference decision.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalBenefitSamples {
    /// M×(D−1); columns follow the original decision order with the reference removed.
    pub inb: DMatrix<f64>,
    pub reference: usize,
}

pub fn incremental_nb(pa: &PaDataset, reference: usize) -> Result<IncrementalBenefitSamples> {
    let d = pa.n_decisions();
    if reference >= d {
        return Err(EvsiError::Index {
            index: reference,
            len: d,
        });
    }
    let base = pa.nb_column(reference);
    let cols: Vec<f64> = (0..d)
        .filter(|&j| j != reference)
        .flat_map(|j| pa.nb_column(j).iter().zip(base).map(|(a, b)| a - b))
        .collect();
    Ok(IncrementalBenefitSamples {
        inb: DMatrix::from_vec(pa.n_samples(), d - 1, cols),
        reference,
    })
}

/// Sample mean and unbiased (M−1 denominator) sample variance.
pub fn prior_moments(samples: &[f64]) -> Result<(f64, f64)> {
    let m = samples.len();
    if m < 2 {
        return Err(EvsiError::InsufficientData { needed: 2, got: m });
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((mean, ss / (m - 1) as f64))
}

/// Data-generating model of the proposed study, per observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    Gaussian,
    Bernoulli,
    Poisson,
    Binomial { trials: u32 },
    Exponential,
    /// Information must be supplied by the caller.
    Custom,
}

impl Likelihood {
    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian => "gaussian",
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::Poisson => "poisson",
            Likelihood::Binomial { .. } => "binomial",
            Likelihood::Exponential => "exponential",
            Likelihood::Custom => "custom",
        }
    }
}

/// What the proposed study measures and what the prior says about it.
///
/// All per-focal vectors are aligned with `focal_indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCollectionSpec {
    pub focal_indices: Vec<usize>,
    pub family: Likelihood,
    pub mu0: Vec<f64>,
    /// Per-observation variance σ².
    pub sigma2: Vec<f64>,
    /// Prior effective sample size.
    pub n0: Vec<f64>,
}

impl DataCollectionSpec {
    pub fn new(
        focal_indices: Vec<usize>,
        family: Likelihood,
        mu0: Vec<f64>,
        sigma2: Vec<f64>,
        n0: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self {
            focal_indices,
            family,
            mu0,
            sigma2,
            n0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One focal parameter.
    pub fn single(index: usize, family: Likelihood, mu0: f64, sigma2: f64, n0: f64) -> Result<Self> {
        Self::new(vec![index], family, vec![mu0], vec![sigma2], vec![n0])
    }

    pub fn n_focal(&self) -> usize {
        self.focal_indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.focal_indices.len();
        if k == 0 {
            return Err(EvsiError::Config("no focal parameters".into()));
        }
        if self.mu0.len() != k || self.sigma2.len() != k || self.n0.len() != k {
            return Err(EvsiError::Shape(format!(
                "{k} focal indices but {} mu0, {} sigma2, {} n0 values",
                self.mu0.len(),
                self.sigma2.len(),
                self.n0.len()
            )));
        }
        for (i, j) in self.focal_indices.iter().enumerate() {
            if self.focal_indices[..i].contains(j) {
                return Err(EvsiError::Config(format!("focal index {j} listed twice")));
            }
        }
        for f in 0..k {
            if !(self.n0[f] > 0.0 && self.n0[f].is_finite()) {
                return Err(EvsiError::Domain(format!("n0 must be positive, got {}", self.n0[f])));
            }
            if !(self.sigma2[f] > 0.0 && self.sigma2[f].is_finite()) {
                return Err(EvsiError::Domain(format!(
                    "sigma2 must be positive, got {}",
                    self.sigma2[f]
                )));
            }
            if !self.mu0[f].is_finite() {
                return Err(EvsiError::Domain("mu0 must be finite".into()));
            }
            if matches!(self.family, Likelihood::Bernoulli | Likelihood::Binomial { .. })
                && !(self.mu0[f] > 0.0 && self.mu0[f] < 1.0)
            {
                return Err(EvsiError::Domain(format!(
                    "probability prior mean must lie in (0,1), got {}",
                    self.mu0[f]
                )));
            }
        }
        Ok(())
    }

    /// Checks that every focal index exists in `pa`.
    pub fn check_against(&self, pa: &PaDataset) -> Result<()> {
        self.validate()?;
        pa.focal_columns(&self.focal_indices).map(|_| ())
    }
}

pub fn load_pa_dataset(path: impl AsRef<Path>) -> Result<PaDataset> {
    read_pa_csv(File::open(path)?)
}

pub fn read_pa_csv<R: Read>(reader: R) -> Result<PaDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvsiError::Schema(format!("unreadable header: {e}")))?
        .clone();

    let mut param_cols = Vec::new();
    let mut nb_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(name) = h.strip_prefix(PARAM_PREFIX) {
            param_cols.push((i, name.to_string()));
        } else if let Some(name) = h.strip_prefix(NB_PREFIX) {
            nb_cols.push((i, name.to_string()));
        } else {
            return Err(EvsiError::Schema(format!(
                "column `{h}` lacks a `{PARAM_PREFIX}` or `{NB_PREFIX}` prefix"
            )));
        }
    }
    if param_cols.is_empty() {
        return Err(EvsiError::Schema(format!("no `{PARAM_PREFIX}` columns")));
    }
    if nb_cols.is_empty() {
        return Err(EvsiError::Schema(format!("no `{NB_PREFIX}` columns")));
    }

    let mut theta: Vec<Vec<f64>> = vec![Vec::new(); param_cols.len()];
    let mut nb: Vec<Vec<f64>> = vec![Vec::new(); nb_cols.len()];
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| EvsiError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(EvsiError::Parse {
                    row,
                    column: headers[col].to_string(),
                    message: format!("non-finite value `{raw}`"),
                }),
                Err(_) => Err(EvsiError::Parse {
                    row,
                    column: headers[col].to_string(),
                    message: format!("not a number: `{raw}`"),
                }),
            }
        };
        for (k, (col, _)) in param_cols.iter().enumerate() {
            theta[k].push(cell(*col)?);
        }
        for (k, (col, _)) in nb_cols.iter().enumerate() {
            nb[k].push(cell(*col)?);
        }
    }

    PaDataset::from_columns(
        param_cols.into_iter().map(|(_, n)| n).collect(),
        theta,
        nb_cols.into_iter().map(|(_, n)| n).collect(),
        nb,
    )
}

/// Writes `pa` with 17 significant digits so a reload is bit-exact.
pub fn write_pa_csv<W: Write>(pa: &PaDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = pa
        .param_names
        .iter()
        .map(|n| format!("{PARAM_PREFIX}{n}"))
        .chain(pa.decision_names.iter().map(|n| format!("{NB_PREFIX}{n}")))
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..pa.n_samples() {
        let row: Vec<String> = pa
            .theta
            .row(i)
            .iter()
            .chain(pa.nb.row(i).iter())
            .map(|v| format!("{v:.16e}"))
            .collect();
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_pa_dataset(pa: &PaDataset, path: impl AsRef<Path>) -> Result<()> {
    write_pa_csv(pa, File::create(path)?)
}

fn csv_io(e: csv::Error) -> EvsiError {
    EvsiError::Io(std::io::Error::other(e))
}
