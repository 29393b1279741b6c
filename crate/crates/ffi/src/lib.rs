//! C ABI for the `evsi` crate.
//!
//! Datasets and fitted estimators are opaque heap handles owned by the
//! caller and released with the matching `*_free` function. Every fallible
//! call returns an [`EvsiStatus`]; on failure a message describing the error
//! is kept per thread and can be read with [`evsi_last_error`].
//!
//! Matrices cross the boundary column-major, one column per parameter or
//! decision, matching the layout of the probabilistic analysis table.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use evsi::estimators::{evppi, evsi_curve_npreg as npreg_curve, EvsiPoint, Method, TgaEstimator, TgaOptions};
use evsi::pa_data::{load_pa_dataset, DataCollectionSpec, Likelihood, PaDataset};
use evsi::spline::BasisConfig;
use evsi::EvsiError;

/// Outcome of a call. Zero means success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvsiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Domain = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// Likelihood of the proposed study's observations.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvsiFamily {
    Gaussian = 0,
    Bernoulli = 1,
    Poisson = 2,
    /// Uses `EvsiSpec::trials`.
    Binomial = 3,
    Exponential = 4,
}

/// Which conditional-benefit approximation a fitted estimator uses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvsiCurveMethod {
    Tga = 0,
    Ga = 1,
}

/// Proposed study design. The per-focal arrays all have `n_focal` entries.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EvsiSpec {
    /// Zero-based parameter columns informed by the study.
    pub focal: *const usize,
    pub n_focal: usize,
    pub family: EvsiFamily,
    pub trials: u32,
    pub mu0: *const f64,
    pub sigma2: *const f64,
    pub n0: *const f64,
}

/// One point of an EVSI curve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvsiCurvePoint {
    pub n: u64,
    pub evsi: f64,
    pub mc_se: f64,
}

/// Opaque probabilistic analysis dataset.
pub struct EvsiDataset(PaDataset);

/// Opaque benefit splines fitted once and reused across sample sizes.
pub struct EvsiEstimator(TgaEstimator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    // interior NULs would truncate the message, so drop them
    let msg = CString::new(msg.replace('\0', "")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &EvsiError) -> EvsiStatus {
    match err.root() {
        EvsiError::Schema(_) | EvsiError::Parse { .. } | EvsiError::Config(_) | EvsiError::UnsupportedFamily(_) => {
            EvsiStatus::InvalidArgument
        }
        EvsiError::Index { .. } | EvsiError::Shape(_) | EvsiError::InsufficientData { .. } => EvsiStatus::Shape,
        EvsiError::Domain(_) | EvsiError::DegeneratePredictor(_) => EvsiStatus::Domain,
        EvsiError::Underdetermined { .. } | EvsiError::SingularFit | EvsiError::NumericInstability(_) => {
            EvsiStatus::Numeric
        }
        EvsiError::Io(_) => EvsiStatus::Io,
        EvsiError::Stage { .. } => unreachable!("root strips stages"),
    }
}

/// Failure raised on the C side of the boundary, before any core call.
enum Fail {
    Null(&'static str),
    Arg(String),
    Core(EvsiError),
}

impl From<EvsiError> for Fail {
    fn from(e: EvsiError) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EvsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvsiStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            EvsiStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_last_error(msg);
            EvsiStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            EvsiStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: callers promise `p` is null or valid for reads
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn array<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: callers promise `p` points at `len` readable elements
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

fn array_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: callers promise `p` points at `len` writable elements
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

fn columns(data: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    data.chunks(rows.max(1)).take(cols).map(<[f64]>::to_vec).collect()
}

fn spec_from_c(spec: &EvsiSpec) -> Result<DataCollectionSpec, Fail> {
    let k = spec.n_focal;
    let family = match spec.family {
        EvsiFamily::Gaussian => Likelihood::Gaussian,
        EvsiFamily::Bernoulli => Likelihood::Bernoulli,
        EvsiFamily::Poisson => Likelihood::Poisson,
        EvsiFamily::Binomial => Likelihood::Binomial { trials: spec.trials },
        EvsiFamily::Exponential => Likelihood::Exponential,
    };
    Ok(DataCollectionSpec::new(
        array(spec.focal, k, "spec.focal")?.to_vec(),
        family,
        array(spec.mu0, k, "spec.mu0")?.to_vec(),
        array(spec.sigma2, k, "spec.sigma2")?.to_vec(),
        array(spec.n0, k, "spec.n0")?.to_vec(),
    )?)
}

fn write_points(points: &[EvsiPoint], out: &mut [EvsiCurvePoint]) {
    for (o, p) in out.iter_mut().zip(points) {
        *o = EvsiCurvePoint {
            n: p.n,
            evsi: p.evsi,
            mc_se: p.mc_se,
        };
    }
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn evsi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a dataset from column-major `theta` (`m` x `p`) and net benefits
/// `nb` (`m` x `d`). Columns are named `theta1..` and `d1..`.
///
/// # Safety
/// `theta` and `nb` must point at `m * p` and `m * d` doubles, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn evsi_dataset_new(
    theta: *const f64,
    m: usize,
    p: usize,
    nb: *const f64,
    d: usize,
    out: *mut *mut EvsiDataset,
) -> EvsiStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or(Fail::Null("out"))?;
        let cells = |cols: usize| m.checked_mul(cols).ok_or_else(|| Fail::Arg("dataset size overflows".into()));
        let theta = array(theta, cells(p)?, "theta")?;
        let nb = array(nb, cells(d)?, "nb")?;
        let pa = PaDataset::from_columns(
            (1..=p).map(|j| format!("theta{j}")).collect(),
            columns(theta, m, p),
            (1..=d).map(|j| format!("d{j}")).collect(),
            columns(nb, m, d),
        )?;
        *out = Box::into_raw(Box::new(EvsiDataset(pa)));
        Ok(())
    })
}

/// Loads a dataset from a CSV file with `param.*` and `nb.*` columns.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evsi_dataset_load_csv(path: *const c_char, out: *mut *mut EvsiDataset) -> EvsiStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or(Fail::Null("out"))?;
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
        *out = Box::into_raw(Box::new(EvsiDataset(load_pa_dataset(path)?)));
        Ok(())
    })
}

/// Number of rows, or zero for a NULL handle.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evsi_dataset_n_samples(dataset: *const EvsiDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.0.n_samples())
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evsi_dataset_free(dataset: *mut EvsiDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Fits the benefit splines for `spec` with the default basis.
///
/// # Safety
/// `dataset` must be a live handle, the arrays in `spec` must hold
/// `spec.n_focal` entries, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evsi_estimator_fit(
    dataset: *const EvsiDataset,
    spec: *const EvsiSpec,
    variance_adjustment: bool,
    out: *mut *mut EvsiEstimator,
) -> EvsiStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or(Fail::Null("out"))?;
        let pa = &non_null(dataset, "dataset")?.0;
        let spec = spec_from_c(non_null(spec, "spec")?)?;
        let options = TgaOptions {
            variance_adjustment,
            ..TgaOptions::default()
        };
        *out = Box::into_raw(Box::new(EvsiEstimator(TgaEstimator::fit(pa, &spec, options)?)));
        Ok(())
    })
}

/// Evaluates the curve on a strictly increasing grid, writing `len` points.
///
/// # Safety
/// `estimator` must be a live handle; `grid` and `out` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn evsi_estimator_curve(
    estimator: *const EvsiEstimator,
    method: EvsiCurveMethod,
    grid: *const u64,
    len: usize,
    out: *mut EvsiCurvePoint,
) -> EvsiStatus {
    guard(|| {
        let est = &non_null(estimator, "estimator")?.0;
        let grid = array(grid, len, "grid")?;
        let out = array_mut(out, len, "out")?;
        let method = match method {
            EvsiCurveMethod::Tga => Method::Tga,
            EvsiCurveMethod::Ga => Method::Ga,
        };
        write_points(&est.curve(method, grid)?.points, out);
        Ok(())
    })
}

/// # Safety
/// `estimator` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evsi_estimator_free(estimator: *mut EvsiEstimator) {
    if !estimator.is_null() {
        drop(unsafe { Box::from_raw(estimator) });
    }
}

/// Regression-on-simulated-data curve; reproducible for a fixed `seed`.
///
/// # Safety
/// As for [`evsi_estimator_fit`] and [`evsi_estimator_curve`].
#[no_mangle]
pub unsafe extern "C" fn evsi_curve_npreg(
    dataset: *const EvsiDataset,
    spec: *const EvsiSpec,
    grid: *const u64,
    len: usize,
    seed: u64,
    out: *mut EvsiCurvePoint,
) -> EvsiStatus {
    guard(|| {
        let pa = &non_null(dataset, "dataset")?.0;
        let spec = spec_from_c(non_null(spec, "spec")?)?;
        let grid = array(grid, len, "grid")?;
        let out = array_mut(out, len, "out")?;
        let curve = npreg_curve(pa, &spec, grid, seed, &BasisConfig::default())?;
        write_points(&curve.points, out);
        Ok(())
    })
}

/// EVPPI of the given parameter columns, with its Monte Carlo standard error.
///
/// # Safety
/// `dataset` must be a live handle, `focal` must hold `n_focal` entries and
/// `evppi_out`, `mc_se_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evsi_evppi(
    dataset: *const EvsiDataset,
    focal: *const usize,
    n_focal: usize,
    evppi_out: *mut f64,
    mc_se_out: *mut f64,
) -> EvsiStatus {
    guard(|| {
        let pa = &non_null(dataset, "dataset")?.0;
        let focal = array(focal, n_focal, "focal")?;
        let value = unsafe { evppi_out.as_mut() }.ok_or(Fail::Null("evppi_out"))?;
        let se = unsafe { mc_se_out.as_mut() }.ok_or(Fail::Null("mc_se_out"))?;
        let est = evppi(pa, focal, &BasisConfig::default())?;
        *value = est.evsi;
        *se = est.mc_se;
        Ok(())
    })
}
