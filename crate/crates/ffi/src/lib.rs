//! C ABI for `cnmixt`.
//!
//! Every function returns a [`CnStatus`]; on failure the message is available
//! from [`cnmixt_last_error`] on the same thread. Matrices are dense,
//! row-major `double` arrays. Fits are opaque handles released with
//! [`cnmixt_fit_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cnmixt::data::Dataset;
use cnmixt::engine::{FitOptions, FitOutcome, FitResult};
use cnmixt::grid::{fit_grid, GridConfig};
use cnmixt::init::{InitKind, InitStrategy};
use cnmixt::mvn::{log_dcn, ContaminationParams, GaussianParams};
use cnmixt::selection::Criterion;
use cnmixt::structures::StructureCode;
use cnmixt::CnError;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    FitFailed = 5,
    Input = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnInit {
    RandomSoft = 0,
    RandomHard = 1,
    Kmeans = 2,
    Mixt = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnCriterion {
    Aic = 0,
    Aic3 = 1,
    Aicc = 2,
    Aicu = 3,
    Awe = 4,
    Bic = 5,
    Caic = 6,
    Icl = 7,
}

/// Fit settings. Obtain defaults from [`cnmixt_options_default`].
///
/// `alpha_min`: NaN means no lower bound. `alpha_fix`, `eta_fix`: NaN means
/// estimated. Each value applies to every component.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CnOptions {
    /// A [`CnInit`] value.
    pub init: u32,
    pub seed: u64,
    pub alpha_min: f64,
    pub alpha_fix: f64,
    pub eta_fix: f64,
    pub eta_max: f64,
    pub iter_max: usize,
    pub threshold: f64,
    pub eps: f64,
    pub restarts: usize,
}

/// A fitted model.
pub struct CnFit {
    fit: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &CnError) -> CnStatus {
    match e {
        CnError::NotPositiveDefinite { .. } => CnStatus::NotPositiveDefinite,
        CnError::DimensionMismatch(_) => CnStatus::DimensionMismatch,
        CnError::InvalidParameter(_) => CnStatus::InvalidArgument,
        CnError::Input(_) => CnStatus::Input,
        CnError::EmptyComponent { .. }
        | CnError::Degenerate(_)
        | CnError::NumericFailure { .. }
        | CnError::AllFailed(_) => CnStatus::FitFailed,
    }
}

/// Runs `body`, turning errors and panics into a status plus message.
fn guard<F: FnOnce() -> Result<(), (CnStatus, String)>>(body: F) -> CnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CnStatus::Panic
        }
    }
}

fn lib_err(e: CnError) -> (CnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CnStatus, String) {
    (CnStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must point to `len` readable doubles when non-null.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (CnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must point to `len` writable doubles when non-null.
unsafe fn write_out(p: *mut f64, values: &[f64], what: &str) -> Result<(), (CnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), p, values.len());
    Ok(())
}

fn opt(v: f64) -> Option<Vec<f64>> {
    (!v.is_nan()).then(|| vec![v])
}

impl CnOptions {
    fn to_fit_options(self) -> FitOptions {
        FitOptions {
            alpha_fix: opt(self.alpha_fix),
            alpha_min: opt(self.alpha_min),
            eta_fix: opt(self.eta_fix),
            eta_max: vec![self.eta_max],
            iter_max: self.iter_max,
            threshold: self.threshold,
            eps: self.eps,
            seed: self.seed,
        }
    }
}

/// Library defaults: mixt init, alpha_min 0.5, eta_max 1000, iter_max 1000,
/// threshold 1e-3, eps 1e-100, seed 0, no restarts.
#[no_mangle]
pub extern "C" fn cnmixt_options_default() -> CnOptions {
    let d = FitOptions::default();
    CnOptions {
        init: CnInit::Mixt as u32,
        seed: d.seed,
        alpha_min: d.alpha_min.map_or(f64::NAN, |v| v[0]),
        alpha_fix: f64::NAN,
        eta_fix: f64::NAN,
        eta_max: d.eta_max[0],
        iter_max: d.iter_max,
        threshold: d.threshold,
        eps: d.eps,
        restarts: 0,
    }
}

/// Message of the last failure on this thread. Valid until the next failing
/// call on the same thread; never null.
#[no_mangle]
pub extern "C" fn cnmixt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fits one structure (`code`, e.g. "EEI") with `g` components to the
/// row-major `n × p` matrix `x`. `options` may be null for defaults.
///
/// # Safety
/// `x` must hold `n * p` doubles, `code` must be a NUL-terminated string and
/// `out` must be writable. On success `*out` owns a handle for
/// [`cnmixt_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit(
    x: *const f64,
    n: usize,
    p: usize,
    code: *const c_char,
    g: usize,
    options: *const CnOptions,
    out: *mut *mut CnFit,
) -> CnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if code.is_null() {
            return Err(null("code"));
        }
        let values = slice(x, n.checked_mul(p).ok_or((CnStatus::InvalidArgument, "n * p overflows".into()))?, "x")?;
        let code: StructureCode = CStr::from_ptr(code)
            .to_str()
            .map_err(|_| (CnStatus::InvalidArgument, "code is not UTF-8".to_string()))?
            .parse()
            .map_err(lib_err)?;
        let opts = if options.is_null() { cnmixt_options_default() } else { *options };
        let data = Dataset::from_matrix(&DMatrix::from_row_slice(n, p, values)).map_err(lib_err)?;
        let mut config = GridConfig::new(&data);
        config.codes = vec![code];
        config.groups = vec![g];
        config.options = opts.to_fit_options();
        config.restarts = opts.restarts;
        config.workers = Some(1);
        const INITS: [InitKind; 4] = [InitKind::RandomSoft, InitKind::RandomHard, InitKind::Kmeans, InitKind::Mixt];
        let kind = *INITS
            .get(opts.init as usize)
            .ok_or_else(|| (CnStatus::InvalidArgument, format!("unknown init {}", opts.init)))?;
        config.init = InitStrategy::new(kind);
        let run = fit_grid(&data, &config).map_err(lib_err)?;
        match run.outcomes.into_iter().next() {
            Some(FitOutcome::Fitted(fit)) => {
                *out = Box::into_raw(Box::new(CnFit { fit }));
                Ok(())
            }
            Some(FitOutcome::Failed(f)) => Err((CnStatus::FitFailed, f.error.to_string())),
            None => Err((CnStatus::FitFailed, "no candidate was fitted".into())),
        }
    })
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must come from [`cnmixt_fit`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_free(fit: *mut CnFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be null or a live handle.
unsafe fn handle<'a>(fit: *const CnFit) -> Result<&'a FitResult, (CnStatus, String)> {
    fit.as_ref().map(|f| &f.fit).ok_or_else(|| null("fit"))
}

/// Observations, dimension and components of a fit.
///
/// # Safety
/// `fit` must be a live handle; each out pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_shape(fit: *const CnFit, n: *mut usize, p: *mut usize, g: *mut usize) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        for (dst, v) in [(n, f.resp.z.nrows()), (p, f.psi.mu[0].len()), (g, f.g)] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Final log-likelihood, free parameter count, iteration count and whether
/// the stopping rule was met.
///
/// # Safety
/// `fit` must be a live handle; each out pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_summary(
    fit: *const CnFit,
    loglik: *mut f64,
    q: *mut usize,
    iterations: *mut usize,
    converged: *mut bool,
) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        if !loglik.is_null() {
            *loglik = f.loglik;
        }
        if !q.is_null() {
            *q = f.q;
        }
        if !iterations.is_null() {
            *iterations = f.n_iterations;
        }
        if !converged.is_null() {
            *converged = f.converged;
        }
        Ok(())
    })
}

/// One information criterion (a [`CnCriterion`] value), larger is better.
///
/// # Safety
/// `fit` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_criterion(fit: *const CnFit, criterion: u32, value: *mut f64) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        if value.is_null() {
            return Err(null("value"));
        }
        let c = Criterion::ALL
            .get(criterion as usize)
            .ok_or_else(|| (CnStatus::InvalidArgument, format!("unknown criterion {criterion}")))?;
        *value = f.criteria.get(*c);
        Ok(())
    })
}

/// Mixing proportions, α and η, each `g` long.
///
/// # Safety
/// `fit` must be a live handle; each out pointer must hold `g` doubles.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_weights(fit: *const CnFit, pi: *mut f64, alpha: *mut f64, eta: *mut f64) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        write_out(pi, &f.psi.pi, "pi")?;
        write_out(alpha, &f.psi.alpha, "alpha")?;
        write_out(eta, &f.psi.eta, "eta")
    })
}

/// Mean (`p` doubles) and scale matrix (`p × p`, row-major) of component
/// `k`, counted from zero.
///
/// # Safety
/// `fit` must be a live handle; `mu` must hold `p` and `sigma` `p * p` doubles.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_component(fit: *const CnFit, k: usize, mu: *mut f64, sigma: *mut f64) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        if k >= f.g {
            return Err((CnStatus::InvalidArgument, format!("component {k} out of range 0..{}", f.g)));
        }
        write_out(mu, f.psi.mu[k].as_slice(), "mu")?;
        write_out(sigma, f.psi.sigma[k].transpose().as_slice(), "sigma")
    })
}

/// Posterior memberships `z` and good-point posteriors `v`, each `n × g`
/// row-major. Either pointer may be null to skip it.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must hold `n * g` doubles.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_posteriors(fit: *const CnFit, z: *mut f64, v: *mut f64) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        if !z.is_null() {
            write_out(z, f.resp.z.transpose().as_slice(), "z")?;
        }
        if !v.is_null() {
            write_out(v, f.resp.v.transpose().as_slice(), "v")?;
        }
        Ok(())
    })
}

/// 1-based MAP component and good (1) / bad (0) flag of every observation.
///
/// # Safety
/// `fit` must be a live handle; `group` and `is_good` must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_fit_detections(fit: *const CnFit, group: *mut u32, is_good: *mut u8) -> CnStatus {
    guard(|| {
        let f = handle(fit)?;
        if group.is_null() || is_good.is_null() {
            return Err(null("output"));
        }
        let det = cnmixt::classify::detect(&f.resp.z, &f.resp.v).map_err(lib_err)?;
        for (i, d) in det.iter().enumerate() {
            *group.add(i) = d.group as u32;
            *is_good.add(i) = d.is_good as u8;
        }
        Ok(())
    })
}

/// Contaminated normal density at each row of the row-major `n × p` matrix
/// `x`. Writes log-densities when `log` is true.
///
/// # Safety
/// `x` must hold `n * p`, `mu` `p`, `sigma` `p * p` and `out` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cnmixt_density(
    x: *const f64,
    n: usize,
    p: usize,
    mu: *const f64,
    sigma: *const f64,
    alpha: f64,
    eta: f64,
    log: bool,
    out: *mut f64,
) -> CnStatus {
    guard(|| {
        let rows = slice(x, n * p, "x")?;
        let mu = DVector::from_column_slice(slice(mu, p, "mu")?);
        let sigma = DMatrix::from_row_slice(p, p, slice(sigma, p * p, "sigma")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let gauss = GaussianParams::new(mu, sigma).map_err(lib_err)?;
        let cont = ContaminationParams::new(alpha, eta).map_err(lib_err)?;
        for i in 0..n {
            let ld = log_dcn(&rows[i * p..(i + 1) * p], &gauss, cont).map_err(lib_err)?;
            *out.add(i) = if log { ld } else { ld.exp() };
        }
        Ok(())
    })
}
