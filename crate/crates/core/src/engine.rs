//! ECM fitting of a single parsimonious contaminated-normal mixture.
//!
//! Each iteration runs CM-step 1 (π, α, μ, Σ given η), CM-step 2 (η given
//! the rest), then the E-step, which yields the new posteriors `z` and `v`
//! together with the observed-data log-likelihood used for stopping. The
//! initial `(z⁰, v⁰, η⁰)` feed the first CM-step directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, KnownLabels};
use crate::error::{CnError, Result};
use crate::mvn::{log_sum_exp, FactoredGaussian};
use crate::scalar::maximize_bounded;
use crate::selection::{criteria, free_param_count, Criteria};
use crate::structures::{update_scales, InnerOptions, ScaleSet, ScatterSet, StructureCode};

/// Lower end of the η search bracket.
pub const ETA_LOWER: f64 = 1.0 + 1e-9;
/// α never reaches the open-interval ends.
pub const ALPHA_EDGE: f64 = 1e-9;
/// Initial inflation factor handed to the first CM-step.
pub const ETA_START: f64 = 1.001;
const ETA_TOL: f64 = 1e-6;
const EMPTY_COMPONENT: f64 = 1e-10;
/// Smallest eigenvalue ratio accepted for a component scale matrix.
const MIN_CONDITION: f64 = 1e-13;

/// Options shared by every fit. Vector options follow the replication rule:
/// a vector whose length differs from `G` contributes its first element to
/// every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub alpha_fix: Option<Vec<f64>>,
    /// `None` estimates α without a lower bound.
    pub alpha_min: Option<Vec<f64>>,
    pub eta_fix: Option<Vec<f64>>,
    pub eta_max: Vec<f64>,
    pub iter_max: usize,
    pub threshold: f64,
    /// Floor for the eigenvalues of every Σ_g.
    pub eps: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            alpha_fix: None,
            alpha_min: Some(vec![0.5]),
            eta_fix: None,
            eta_max: vec![1000.0],
            iter_max: 1000,
            threshold: 1e-3,
            eps: 1e-100,
            seed: 0,
        }
    }
}

fn replicate(v: &[f64], g: usize) -> Vec<f64> {
    if v.len() == g {
        v.to_vec()
    } else {
        vec![v[0]; g]
    }
}

/// Per-component option values after the replication rule.
#[derive(Debug, Clone)]
pub struct ResolvedOptions {
    pub alpha_fix: Option<Vec<f64>>,
    pub alpha_min: Vec<f64>,
    pub eta_fix: Option<Vec<f64>>,
    pub eta_max: Vec<f64>,
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, v: &Option<Vec<f64>>| match v {
            Some(v) if v.is_empty() => Err(CnError::InvalidParameter(format!("{name} is empty"))),
            _ => Ok(()),
        };
        nonempty("alpha-fix", &self.alpha_fix)?;
        nonempty("alpha-min", &self.alpha_min)?;
        nonempty("eta-fix", &self.eta_fix)?;
        if self.eta_max.is_empty() {
            return Err(CnError::InvalidParameter("eta-max is empty".into()));
        }
        if let Some(a) = &self.alpha_fix {
            if a.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(CnError::InvalidParameter("alpha-fix values must lie in (0,1)".into()));
            }
        }
        if let Some(a) = &self.alpha_min {
            if a.iter().any(|&x| !(0.0..1.0).contains(&x)) {
                return Err(CnError::InvalidParameter("alpha-min values must lie in [0,1)".into()));
            }
        }
        if let Some(e) = &self.eta_fix {
            if e.iter().any(|&x| !(x > 1.0 && x.is_finite())) {
                return Err(CnError::InvalidParameter("eta-fix values must be > 1".into()));
            }
        }
        if self.eta_max.iter().any(|&x| !(x > ETA_LOWER && x.is_finite())) {
            return Err(CnError::InvalidParameter("eta-max values must be > 1".into()));
        }
        if self.iter_max == 0 {
            return Err(CnError::InvalidParameter("iter-max must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(CnError::InvalidParameter("threshold must be positive".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(CnError::InvalidParameter("eps must be non-negative".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, g: usize) -> ResolvedOptions {
        ResolvedOptions {
            alpha_fix: self.alpha_fix.as_ref().map(|v| replicate(v, g)),
            alpha_min: self.alpha_min.as_ref().map(|v| replicate(v, g)).unwrap_or_else(|| vec![0.0; g]),
            eta_fix: self.eta_fix.as_ref().map(|v| replicate(v, g)),
            eta_max: replicate(&self.eta_max, g),
        }
    }

    pub fn alpha_fixed(&self) -> bool {
        self.alpha_fix.is_some()
    }

    pub fn eta_fixed(&self) -> bool {
        self.eta_fix.is_some()
    }
}

/// Structure code and number of components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelSpec {
    pub code: StructureCode,
    pub g: usize,
}

impl ModelSpec {
    pub fn new(code: StructureCode, g: usize) -> Self {
        Self { code, g }
    }
}

/// Posterior memberships `z` (rows sum to one) and good-point posteriors `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub z: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl Responsibilities {
    pub fn validate(&self, n: usize, g: usize) -> Result<()> {
        if self.z.shape() != (n, g) || self.v.shape() != (n, g) {
            return Err(CnError::DimensionMismatch(format!(
                "responsibilities must be {n}x{g}, got z {:?} and v {:?}",
                self.z.shape(),
                self.v.shape()
            )));
        }
        for (i, row) in self.z.row_iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (row.sum() - 1.0).abs() > 1e-8 {
                return Err(CnError::InvalidParameter(format!("row {} of z is not a probability vector", i + 1)));
            }
        }
        if self.v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(CnError::InvalidParameter("v entries must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Starting values for the first CM-step.
#[derive(Debug, Clone)]
pub struct InitState {
    pub resp: Responsibilities,
    pub eta0: Vec<f64>,
    /// Scale factors the first structure update may warm-start from.
    pub warm_scales: Option<ScaleSet>,
}

impl InitState {
    pub fn new(z: DMatrix<f64>, v: Option<DMatrix<f64>>) -> Self {
        let v = v.unwrap_or_else(|| DMatrix::from_element(z.nrows(), z.ncols(), 1.0));
        let g = z.ncols();
        Self { resp: Responsibilities { z, v }, eta0: vec![ETA_START; g], warm_scales: None }
    }
}

/// All mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Psi {
    pub pi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub scales: ScaleSet,
    /// Σ_g reconstructed from `scales` with the eigenvalue floor applied.
    pub sigma: Vec<DMatrix<f64>>,
}

impl Psi {
    pub fn groups(&self) -> usize {
        self.pi.len()
    }

    fn factored(&self) -> Result<Vec<FactoredGaussian>> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .enumerate()
            .map(|(g, (mu, s))| FactoredGaussian::new(mu, s, &format!("scale matrix of component {}", g + 1)))
            .collect()
    }
}

/// Per observation and component: `ln[π_g dCN_g(x_i)]` and `ln v_ig`.
struct ComponentTerms {
    log_weighted: DMatrix<f64>,
    log_v: DMatrix<f64>,
}

fn component_terms(data: &Dataset, psi: &Psi) -> Result<ComponentTerms> {
    let (n, g) = (data.n(), psi.groups());
    let factored = psi.factored()?;
    let mut log_weighted = DMatrix::zeros(n, g);
    let mut log_v = DMatrix::zeros(n, g);
    for (k, f) in factored.iter().enumerate() {
        let (alpha, eta) = (psi.alpha[k], psi.eta[k]);
        let ln_pi = psi.pi[k].ln();
        for (i, d) in f.mahalanobis_sq_columns(data.xt()).into_iter().enumerate() {
            let good = alpha.ln() + f.log_density_at(d, 1.0);
            let bad = (1.0 - alpha).ln() + f.log_density_at(d, eta);
            let both = crate::mvn::log_add_exp(good, bad);
            log_weighted[(i, k)] = ln_pi + both;
            log_v[(i, k)] = good - both;
        }
    }
    Ok(ComponentTerms { log_weighted, log_v })
}

/// E-step and observed log-likelihood from the same density evaluations.
fn expectation(data: &Dataset, psi: &Psi, labels: &KnownLabels, iteration: usize) -> Result<(Responsibilities, f64)> {
    let terms = component_terms(data, psi)?;
    let (n, g) = (data.n(), psi.groups());
    let mut z = DMatrix::zeros(n, g);
    let mut loglik = 0.0;
    let mut row = vec![0.0; g];
    for i in 0..n {
        match labels.get(i) {
            Some(h) => {
                z[(i, h)] = 1.0;
                loglik += terms.log_weighted[(i, h)];
            }
            None => {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = terms.log_weighted[(i, k)];
                }
                let total = log_sum_exp(&row);
                for k in 0..g {
                    z[(i, k)] = (row[k] - total).exp();
                }
                loglik += total;
            }
        }
    }
    if !loglik.is_finite() || z.iter().any(|x| !x.is_finite()) {
        return Err(CnError::NumericFailure { iteration, detail: "non-finite mixture density".into() });
    }
    let v = terms.log_v.map(f64::exp);
    Ok((Responsibilities { z, v }, loglik))
}

/// Posterior probabilities given `psi`; labeled rows keep their indicator.
pub fn e_step(data: &Dataset, psi: &Psi, labels: &KnownLabels) -> Result<Responsibilities> {
    Ok(expectation(data, psi, labels, 0)?.0)
}

/// Observed-data log-likelihood, labeled rows contributing only through
/// their known component.
pub fn observed_loglik(data: &Dataset, psi: &Psi, labels: &KnownLabels) -> Result<f64> {
    let terms = component_terms(data, psi)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        total += match labels.get(i) {
            Some(h) => terms.log_weighted[(i, h)],
            None => log_sum_exp(&terms.log_weighted.row(i).iter().copied().collect::<Vec<_>>()),
        };
    }
    Ok(total)
}

/// Result of CM-step 1.
#[derive(Debug, Clone)]
pub struct CmStep1 {
    pub pi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub scatter: ScatterSet,
    pub scales: ScaleSet,
    pub sigma: Vec<DMatrix<f64>>,
}

/// Constrained maximizer of `A ln α + B ln(1 − α)` over `(alpha_min, 1)`,
/// given the unconstrained maximizer `A / (A + B)`.
pub fn constrained_alpha(unconstrained: f64, alpha_min: f64) -> f64 {
    unconstrained.max(alpha_min).max(ALPHA_EDGE).min(1.0 - ALPHA_EDGE)
}

/// Weight of observation `i` in component `g`'s mean and scatter: `v + (1 − v)/η`.
pub fn downweight(v: f64, eta: f64) -> f64 {
    v + (1.0 - v) / eta
}

pub fn cm_step1(
    data: &Dataset,
    code: StructureCode,
    resp: &Responsibilities,
    eta: &[f64],
    opts: &ResolvedOptions,
    eps: f64,
    prev: Option<&ScaleSet>,
) -> Result<CmStep1> {
    let (n, p, g) = (data.n(), data.p(), resp.z.ncols());
    let mut pi = Vec::with_capacity(g);
    let mut alpha = Vec::with_capacity(g);
    let mut mu = Vec::with_capacity(g);
    let mut w = Vec::with_capacity(g);
    let mut sizes = Vec::with_capacity(g);
    for k in 0..g {
        let zk = resp.z.column(k);
        let vk = resp.v.column(k);
        let n_g: f64 = zk.sum();
        if !(n_g >= EMPTY_COMPONENT) {
            return Err(CnError::EmptyComponent { component: k + 1, size: n_g });
        }
        let zv: f64 = zk.iter().zip(vk.iter()).map(|(z, v)| z * v).sum();
        alpha.push(match &opts.alpha_fix {
            Some(fix) => fix[k],
            None => constrained_alpha(zv / n_g, opts.alpha_min[k]),
        });
        let weights: Vec<f64> = zk.iter().zip(vk.iter()).map(|(z, v)| z * downweight(*v, eta[k])).collect();
        let s_g: f64 = weights.iter().sum();
        let mean = data.xt() * DVector::from_column_slice(&weights) / s_g;
        let mut centered = data.xt().clone();
        for (i, mut col) in centered.column_iter_mut().enumerate() {
            col -= &mean;
            col *= weights[i].sqrt();
        }
        let mut scatter = &centered * centered.transpose();
        crate::linalg::symmetrize(&mut scatter);
        pi.push(n_g / n as f64);
        mu.push(mean);
        w.push(scatter);
        sizes.push(n_g);
    }
    let total: f64 = pi.iter().sum();
    for x in pi.iter_mut() {
        *x /= total;
    }
    let scatter = ScatterSet::new(w, sizes, n as f64)?;
    let scales = update_scales(code, &scatter, prev, InnerOptions { eps, ..InnerOptions::default() })?;
    for (k, s) in scales.groups.iter().enumerate() {
        let hi = s.shape.max();
        let lo = s.shape.min();
        if !(lo > MIN_CONDITION * hi) || !s.volume.is_finite() || s.volume <= 0.0 {
            return Err(CnError::Degenerate(format!("scale matrix of component {} is numerically singular", k + 1)));
        }
    }
    let sigma = scales.sigmas(eps);
    debug_assert_eq!(sigma[0].nrows(), p);
    Ok(CmStep1 { pi, alpha, mu, scatter, scales, sigma })
}

/// The η part of the expected complete-data log-likelihood for one component:
/// `−(p/2) ln η · Σ z(1−v) − (1/(2η)) Σ z(1−v) δ`.
pub fn eta_objective(eta: f64, p: usize, bad_mass: f64, bad_distance: f64) -> f64 {
    -0.5 * p as f64 * bad_mass * eta.ln() - 0.5 * bad_distance / eta
}

/// CM-step 2: maximizes the η objective of each component over `[1 + 1e-9, η*_g]`.
pub fn cm_step2_eta(
    data: &Dataset,
    resp: &Responsibilities,
    mu: &[DVector<f64>],
    sigma: &[DMatrix<f64>],
    opts: &ResolvedOptions,
) -> Result<Vec<f64>> {
    let g = mu.len();
    if let Some(fix) = &opts.eta_fix {
        return Ok(fix.clone());
    }
    let p = data.p();
    let mut out = Vec::with_capacity(g);
    for k in 0..g {
        let f = FactoredGaussian::new(&mu[k], &sigma[k], &format!("scale matrix of component {}", k + 1))?;
        let delta = f.mahalanobis_sq_columns(data.xt());
        let mut mass = 0.0;
        let mut dist = 0.0;
        for (i, d) in delta.iter().enumerate() {
            let bad = resp.z[(i, k)] * (1.0 - resp.v[(i, k)]);
            mass += bad;
            dist += bad * d;
        }
        out.push(maximize_eta(p, mass, dist, opts.eta_max[k]));
    }
    Ok(out)
}

/// Bounded search for the η maximizer; no bad mass returns the lower end.
pub fn maximize_eta(p: usize, bad_mass: f64, bad_distance: f64, eta_max: f64) -> f64 {
    if !(bad_mass > 0.0) {
        return ETA_LOWER;
    }
    maximize_bounded(|e| eta_objective(e, p, bad_mass, bad_distance), ETA_LOWER, eta_max, ETA_TOL).0
}

fn bad_mass(resp: &Responsibilities, k: usize) -> f64 {
    resp.z.column(k).iter().zip(resp.v.column(k).iter()).map(|(z, v)| z * (1.0 - v)).sum()
}

/// η_k maximizing the observed log-likelihood with everything else held.
///
/// Used when component `k` carries no bad mass, which makes the CM-step 2
/// objective constant in η_k (always the case when `v⁰` is all ones). Any η_k
/// is then a CM-step 2 maximizer, so choosing the one that raises the
/// observed likelihood keeps the iterations monotone, and it lets a start at
/// a Gaussian-mixture solution move away from `α = 1, η = 1`.
pub fn flat_eta_step(data: &Dataset, labels: &KnownLabels, psi: &Psi, k: usize, eta_max: f64) -> Result<f64> {
    let factored = psi.factored()?;
    let n = data.n();
    let g = psi.groups();
    let mut others = vec![f64::NEG_INFINITY; n];
    let mut own: Vec<Option<usize>> = vec![None; n];
    let mut delta_k = Vec::new();
    for (j, f) in factored.iter().enumerate() {
        let delta = f.mahalanobis_sq_columns(data.xt());
        if j == k {
            delta_k = delta;
            continue;
        }
        let cont = crate::mvn::ContaminationParams { alpha: psi.alpha[j], eta: psi.eta[j] };
        for (i, d) in delta.iter().enumerate() {
            let term = psi.pi[j].ln() + f.log_dcn_at(*d, cont);
            match labels.get(i) {
                Some(h) if h == j => others[i] = term,
                Some(_) => {}
                None => others[i] = crate::mvn::log_add_exp(others[i], term),
            }
        }
    }
    for (i, o) in own.iter_mut().enumerate() {
        *o = labels.get(i);
    }
    let fk = &factored[k];
    let (ln_pi, alpha) = (psi.pi[k].ln(), psi.alpha[k]);
    let objective = |eta: f64| {
        let cont = crate::mvn::ContaminationParams { alpha, eta };
        let mut total = 0.0;
        for i in 0..n {
            let term = ln_pi + fk.log_dcn_at(delta_k[i], cont);
            total += match own[i] {
                Some(h) if h == k => term,
                Some(_) => others[i],
                None if g == 1 => term,
                None => crate::mvn::log_add_exp(others[i], term),
            };
        }
        total
    };
    let start = psi.eta[k];
    let (best, value) = maximize_bounded(objective, ETA_LOWER, eta_max, ETA_TOL);
    Ok(if value > objective(start) { best } else { start })
}

/// Aitken stopping rule on the last three log-likelihood values.
pub fn aitken_converged(trace: &[f64], threshold: f64) -> bool {
    let k = trace.len();
    if k < 3 {
        return false;
    }
    let (l0, l1, l2) = (trace[k - 3], trace[k - 2], trace[k - 1]);
    if l2 - l1 < 1e-14 {
        return true;
    }
    let denom_prev = l1 - l0;
    if denom_prev == 0.0 {
        return false;
    }
    let a = (l2 - l1) / denom_prev;
    if !(1.0 - a).is_normal() || (1.0 - a).abs() < 1e-12 {
        return false;
    }
    let l_inf = l1 + (l2 - l1) / (1.0 - a);
    let gap = l_inf - l2;
    (0.0..threshold).contains(&gap)
}

/// A successfully fitted model.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub code: StructureCode,
    pub g: usize,
    pub psi: Psi,
    pub resp: Responsibilities,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub q: usize,
    pub criteria: Criteria,
    /// Number of labeled observations.
    pub m: usize,
}

/// A fit that stopped on an error.
#[derive(Debug, Clone)]
pub struct FailedFit {
    pub code: StructureCode,
    pub g: usize,
    pub error: CnError,
    pub loglik_trace: Vec<f64>,
    pub n_iterations: usize,
}

#[derive(Debug, Clone)]
pub enum FitOutcome {
    Fitted(FitResult),
    Failed(FailedFit),
}

impl FitOutcome {
    pub fn spec(&self) -> ModelSpec {
        match self {
            FitOutcome::Fitted(f) => ModelSpec::new(f.code, f.g),
            FitOutcome::Failed(f) => ModelSpec::new(f.code, f.g),
        }
    }

    pub fn fitted(&self) -> Option<&FitResult> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::Failed(_) => None,
        }
    }

    pub fn loglik_trace(&self) -> &[f64] {
        match self {
            FitOutcome::Fitted(f) => &f.loglik_trace,
            FitOutcome::Failed(f) => &f.loglik_trace,
        }
    }
}

/// Runs the ECM iterations for one model from the given start.
pub fn fit_single(
    data: &Dataset,
    spec: ModelSpec,
    labels: &KnownLabels,
    init: InitState,
    options: &FitOptions,
) -> FitOutcome {
    let mut trace = Vec::new();
    let mut iterations = 0;
    let result = run_ecm(data, spec, labels, init, options, &mut trace, &mut iterations);
    match result {
        Ok(fit) => FitOutcome::Fitted(fit),
        Err(error) => FitOutcome::Failed(FailedFit {
            code: spec.code,
            g: spec.g,
            error,
            loglik_trace: trace,
            n_iterations: iterations,
        }),
    }
}

fn run_ecm(
    data: &Dataset,
    spec: ModelSpec,
    labels: &KnownLabels,
    init: InitState,
    options: &FitOptions,
    trace: &mut Vec<f64>,
    iterations: &mut usize,
) -> Result<FitResult> {
    let g = spec.g;
    options.validate()?;
    if g == 0 {
        return Err(CnError::InvalidParameter("G must be at least 1".into()));
    }
    labels.validate(data.n(), g)?;
    init.resp.validate(data.n(), g)?;
    if init.eta0.len() != g {
        return Err(CnError::DimensionMismatch("eta0 must have one entry per component".into()));
    }
    let opts = options.resolve(g);

    let mut resp = init.resp;
    // labeled rows always carry their indicator
    for i in 0..data.n() {
        if let Some(h) = labels.get(i) {
            for k in 0..g {
                resp.z[(i, k)] = if k == h { 1.0 } else { 0.0 };
            }
        }
    }
    let mut eta = init.eta0;
    let mut prev_scales = init.warm_scales;
    let mut converged = false;
    let mut psi = None;

    for it in 1..=options.iter_max {
        *iterations = it;
        let cm1 = cm_step1(data, spec.code, &resp, &eta, &opts, options.eps, prev_scales.as_ref())?;
        eta = cm_step2_eta(data, &resp, &cm1.mu, &cm1.sigma, &opts)?;
        let mut current = Psi {
            pi: cm1.pi,
            alpha: cm1.alpha,
            eta: eta.clone(),
            mu: cm1.mu,
            scales: cm1.scales,
            sigma: cm1.sigma,
        };
        if opts.eta_fix.is_none() {
            for k in 0..g {
                if bad_mass(&resp, k) == 0.0 {
                    current.eta[k] = flat_eta_step(data, labels, &current, k, opts.eta_max[k])?;
                }
            }
            eta = current.eta.clone();
        }
        let (next, loglik) = expectation(data, &current, labels, it)?;
        trace.push(loglik);
        resp = next;
        prev_scales = Some(current.scales.clone());
        psi = Some(current);
        if aitken_converged(trace, options.threshold) {
            converged = true;
            break;
        }
    }

    let psi = psi.expect("at least one iteration runs");
    let loglik = *trace.last().expect("trace is non-empty");
    let q = free_param_count(spec.code, g, data.p(), options.alpha_fixed(), options.eta_fixed());
    let criteria = criteria(loglik, q, data.n(), &resp.z, labels);
    Ok(FitResult {
        code: spec.code,
        g,
        psi,
        resp,
        loglik,
        loglik_trace: trace.clone(),
        converged,
        n_iterations: *iterations,
        q,
        criteria,
        m: labels.labeled_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::EigenDecomposedScale;

    fn psi_from(pi: Vec<f64>, alpha: Vec<f64>, eta: Vec<f64>, mu: Vec<DVector<f64>>, sigma: Vec<DMatrix<f64>>) -> Psi {
        let scales = ScaleSet {
            code: StructureCode::VVV,
            groups: sigma.iter().map(EigenDecomposedScale::decompose).collect(),
        };
        Psi { pi, alpha, eta, mu, scales, sigma }
    }

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn aitken_geometric_trace() {
        let trace: Vec<f64> = (1..=12).map(|r| -1.0 / 2f64.powi(r)).collect();
        // limit is 0, so the gap is -l_{r+1} = 2^-12
        assert!(aitken_converged(&trace, 2.5e-4));
        assert!(!aitken_converged(&trace, 2.0e-4));
    }

    #[test]
    fn aitken_plateau_and_linear() {
        assert!(aitken_converged(&[-5.0, -5.0, -5.0], 1e-3));
        assert!(!aitken_converged(&[1.0, 2.0, 3.0], 1e-3));
        assert!(!aitken_converged(&[1.0, 2.0], 1e-3));
    }

    #[test]
    fn single_component_posterior_is_one() {
        let data = Dataset::from_rows(&[vec![0.0, 1.0], vec![3.0, -2.0], vec![1.0, 1.0]]).unwrap();
        let psi = psi_from(vec![1.0], vec![0.9], vec![5.0], vec![dv(&[0.0, 0.0])], vec![DMatrix::identity(2, 2)]);
        let r = e_step(&data, &psi, &KnownLabels::none(3)).unwrap();
        assert!(r.z.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn symmetric_components_split_evenly_at_origin() {
        let data = Dataset::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let psi = psi_from(
            vec![0.5, 0.5],
            vec![0.8, 0.8],
            vec![7.0, 7.0],
            vec![dv(&[1.0, 2.0]), dv(&[-1.0, -2.0])],
            vec![s.clone(), s],
        );
        let r = e_step(&data, &psi, &KnownLabels::none(1)).unwrap();
        assert!((r.z[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r.z[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn good_posterior_matches_high_precision_value() {
        // Frozen from a 50-digit evaluation of
        //   α φ(x; μ, Σ) / (α φ(x; μ, Σ) + (1 − α) φ(x; μ, ηΣ))
        // at x = (2.5, -1), μ = (0.5, 0.25), Σ = [[1.5, 0.4], [0.4, 0.8]], α = 0.93, η = 17.
        let data = Dataset::from_rows(&[vec![2.5, -1.0]]).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
        let psi = psi_from(vec![1.0], vec![0.93], vec![17.0], vec![dv(&[0.5, 0.25])], vec![s]);
        let r = e_step(&data, &psi, &KnownLabels::none(1)).unwrap();
        let expected = 0.881_471_700_351_633_5;
        assert!((r.v[(0, 0)] - expected).abs() < 1e-14, "{} vs {}", r.v[(0, 0)], expected);
    }

    #[test]
    fn loglik_single_point_single_component() {
        let data = Dataset::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[1.2, 0.1, 0.1, 0.6]);
        let psi = psi_from(vec![1.0], vec![0.7], vec![9.0], vec![dv(&[0.0, 0.0])], vec![s.clone()]);
        let direct = crate::mvn::log_dcn(
            &[0.3, -0.7],
            &crate::mvn::GaussianParams::new(dv(&[0.0, 0.0]), s).unwrap(),
            crate::mvn::ContaminationParams::new(0.7, 9.0).unwrap(),
        )
        .unwrap();
        let l = observed_loglik(&data, &psi, &KnownLabels::none(1)).unwrap();
        assert!((l - direct).abs() < 1e-13);
    }

    #[test]
    fn loglik_hand_sum_with_labels() {
        let rows = vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![-1.0, 3.0]];
        let data = Dataset::from_rows(&rows).unwrap();
        let s1 = DMatrix::identity(2, 2);
        let s2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let (mu1, mu2) = (dv(&[0.0, 0.0]), dv(&[1.0, 2.0]));
        let psi = psi_from(vec![0.4, 0.6], vec![0.9, 0.8], vec![4.0, 20.0], vec![mu1.clone(), mu2.clone()], vec![s1.clone(), s2.clone()]);
        let labels = KnownLabels::from_positions(3, &[2], &[2]).unwrap();
        let dens = |x: &[f64], mu: &DVector<f64>, s: &DMatrix<f64>, a: f64, e: f64| {
            let good = a * crate::mvn::log_dmvnorm(x, mu, s).unwrap().exp();
            let bad = (1.0 - a) * crate::mvn::log_dmvnorm(x, mu, &(s * e)).unwrap().exp();
            good + bad
        };
        let mut expected = 0.0;
        for (i, x) in rows.iter().enumerate() {
            let c1 = 0.4 * dens(x, &mu1, &s1, 0.9, 4.0);
            let c2 = 0.6 * dens(x, &mu2, &s2, 0.8, 20.0);
            expected += if i == 1 { c2.ln() } else { (c1 + c2).ln() };
        }
        let l = observed_loglik(&data, &psi, &labels).unwrap();
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
        let r = e_step(&data, &psi, &labels).unwrap();
        assert_eq!(r.z[(1, 0)], 0.0);
        assert_eq!(r.z[(1, 1)], 1.0);
    }

    #[test]
    fn cm1_without_contamination_is_classical() {
        let rows = vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![4.0, 3.0], vec![1.0, -1.0]];
        let data = Dataset::from_rows(&rows).unwrap();
        let z = DMatrix::from_row_slice(4, 2, &[0.8, 0.2, 0.5, 0.5, 0.1, 0.9, 1.0, 0.0]);
        let resp = Responsibilities { z: z.clone(), v: DMatrix::from_element(4, 2, 1.0) };
        let opts = FitOptions::default().resolve(2);
        let out = cm_step1(&data, StructureCode::VVV, &resp, &[3.0, 3.0], &opts, 0.0, None).unwrap();
        for k in 0..2 {
            let ng: f64 = z.column(k).sum();
            let mut mean = DVector::zeros(2);
            for (i, r) in rows.iter().enumerate() {
                mean += dv(r) * z[(i, k)];
            }
            mean /= ng;
            assert!((&out.mu[k] - &mean).abs().max() < 1e-14);
            let mut w = DMatrix::zeros(2, 2);
            for (i, r) in rows.iter().enumerate() {
                let d = dv(r) - &mean;
                w += &d * d.transpose() * z[(i, k)];
            }
            assert!((&out.scatter.w[k] - &w).abs().max() < 1e-12);
            assert_eq!(out.alpha[k], 1.0 - ALPHA_EDGE);
        }
    }

    #[test]
    fn cm1_hand_computed_weights() {
        // weights z * (v + (1 - v)/eta)
        let rows = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0], vec![-2.0, -1.0]];
        let data = Dataset::from_rows(&rows).unwrap();
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.25, 0.75]);
        let v = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 0.5, 0.0, 1.0, 0.2, 0.0, 1.0]);
        let eta = [2.0, 4.0];
        // component 1 weights: 1, 0.5*(0.5+0.25)=0.375, 0, 0.25*0.5=0.125 -> s = 1.5
        // mean = (1*(1,0) + 0.375*(0,2) + 0.125*(-2,-1)) / 1.5 = (0.75, 0.625) / 1.5 = (0.5, 0.41666..)
        // component 2 weights: 0, 0.5*0.25=0.125, 1*(0.2+0.2)=0.4, 0.75 -> s = 1.275
        // mean = (0.125*(0,2) + 0.4*(3,1) + 0.75*(-2,-1)) / 1.275 = (-0.3, -0.1) / 1.275
        let opts = FitOptions::default().resolve(2);
        let out = cm_step1(&data, StructureCode::VVV, &Responsibilities { z, v }, &eta, &opts, 0.0, None).unwrap();
        assert!((&out.mu[0] - dv(&[0.5, 0.625 / 1.5])).abs().max() < 1e-14);
        assert!((&out.mu[1] - dv(&[-0.3 / 1.275, -0.1 / 1.275])).abs().max() < 1e-14);
        // W_1 = sum w_i (x_i - mu)(x_i - mu)^T
        let m = dv(&[0.5, 0.625 / 1.5]);
        let mut w1 = DMatrix::zeros(2, 2);
        for (wt, r) in [(1.0, &rows[0]), (0.375, &rows[1]), (0.125, &rows[3])] {
            let d = dv(r) - &m;
            w1 += &d * d.transpose() * wt;
        }
        assert!((&out.scatter.w[0] - w1).abs().max() < 1e-13);
        // n_1 = 1.75, sum z v = 1 + 0.25 + 0 = 1.25 -> alpha = 0.714..; above 0.5
        assert!((out.alpha[0] - 1.25 / 1.75).abs() < 1e-15);
        // n_2 = 2.25, sum z v = 0 + 0 + 0.2 + 0.75 = 0.95 -> 0.422 clamps to 0.5
        assert_eq!(out.alpha[1], 0.5);
        assert!((out.pi[0] - 1.75 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn cm1_reports_empty_component() {
        let data = Dataset::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let resp = Responsibilities { z, v: DMatrix::from_element(3, 2, 1.0) };
        let opts = FitOptions::default().resolve(2);
        let err = cm_step1(&data, StructureCode::EEE, &resp, &[2.0, 2.0], &opts, 0.0, None).unwrap_err();
        assert!(matches!(err, CnError::EmptyComponent { component: 2, .. }));
    }

    #[test]
    fn eta_no_bad_mass_returns_lower_bracket() {
        assert_eq!(maximize_eta(2, 0.0, 0.0, 1000.0), ETA_LOWER);
    }

    #[test]
    fn eta_single_bad_point_closed_form() {
        // maximizer of -(p/2) ln η - δ/(2η) is δ/p
        for (p, delta) in [(2usize, 50.0), (3, 12.0), (13, 400.0)] {
            let eta = maximize_eta(p, 1.0, delta, 1000.0);
            assert!((eta - delta / p as f64).abs() < 1e-5, "{eta}");
        }
        // below 1 the bound is active
        assert!((maximize_eta(2, 1.0, 1.0, 1000.0) - ETA_LOWER).abs() < 1e-6);
        // above eta_max too
        assert!((maximize_eta(2, 1.0, 1e6, 1000.0) - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn option_replication() {
        let opts = FitOptions { alpha_min: Some(vec![0.7, 0.2]), eta_max: vec![50.0], ..FitOptions::default() };
        let r = opts.resolve(3);
        assert_eq!(r.alpha_min, vec![0.7; 3]);
        assert_eq!(r.eta_max, vec![50.0; 3]);
        let r = opts.resolve(2);
        assert_eq!(r.alpha_min, vec![0.7, 0.2]);
        let unconstrained = FitOptions { alpha_min: None, ..FitOptions::default() }.resolve(2);
        assert_eq!(unconstrained.alpha_min, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_options_rejected() {
        assert!(FitOptions { eta_max: vec![1.0], ..FitOptions::default() }.validate().is_err());
        assert!(FitOptions { alpha_min: Some(vec![1.0]), ..FitOptions::default() }.validate().is_err());
        assert!(FitOptions { alpha_fix: Some(vec![0.0]), ..FitOptions::default() }.validate().is_err());
        assert!(FitOptions { iter_max: 0, ..FitOptions::default() }.validate().is_err());
        assert!(FitOptions::default().validate().is_ok());
    }
}
