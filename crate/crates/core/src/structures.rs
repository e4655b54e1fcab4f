//! The fourteen parsimonious scale structures.
//!
//! Each component scale matrix is written `Σ_g = λ_g Γ_g Δ_g Γ_gᵀ` with
//! `det Δ_g = 1`. A structure code fixes which of volume (λ), shape (Δ) and
//! orientation (Γ) are shared across components. The M-step minimizes
//!
//! ```text
//! F(Σ_1..Σ_G) = Σ_g [ n_g ln det Σ_g + tr(Σ_g⁻¹ W_g) ]
//! ```
//!
//! subject to those equality constraints, where `W_g` is the weighted
//! within-group scatter matrix and `n_g` the effective group size.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CnError, Result};
use crate::linalg::{chol_log_det, cholesky, geometric_mean, sym_eigen_desc, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureCode {
    EII,
    VII,
    EEI,
    VEI,
    EVI,
    VVI,
    EEE,
    VEE,
    EVE,
    EEV,
    VVE,
    VEV,
    EVV,
    VVV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Volume {
    Equal,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spherical,
    Equal,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Axis-aligned (or irrelevant, for spherical shapes).
    Identity,
    Equal,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Spherical,
    Diagonal,
    General,
}

impl StructureCode {
    pub const ALL: [StructureCode; 14] = [
        StructureCode::EII,
        StructureCode::VII,
        StructureCode::EEI,
        StructureCode::VEI,
        StructureCode::EVI,
        StructureCode::VVI,
        StructureCode::EEE,
        StructureCode::VEE,
        StructureCode::EVE,
        StructureCode::EEV,
        StructureCode::VVE,
        StructureCode::VEV,
        StructureCode::EVV,
        StructureCode::VVV,
    ];

    pub fn as_str(self) -> &'static str {
        use StructureCode::*;
        match self {
            EII => "EII",
            VII => "VII",
            EEI => "EEI",
            VEI => "VEI",
            EVI => "EVI",
            VVI => "VVI",
            EEE => "EEE",
            VEE => "VEE",
            EVE => "EVE",
            EEV => "EEV",
            VVE => "VVE",
            VEV => "VEV",
            EVV => "EVV",
            VVV => "VVV",
        }
    }

    /// Position in [`StructureCode::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("code listed in ALL")
    }

    pub fn family(self) -> Family {
        match self.orientation() {
            Orientation::Identity if self.shape() == Shape::Spherical => Family::Spherical,
            Orientation::Identity => Family::Diagonal,
            _ => Family::General,
        }
    }

    pub fn volume(self) -> Volume {
        match self.as_str().as_bytes()[0] {
            b'E' => Volume::Equal,
            _ => Volume::Variable,
        }
    }

    pub fn shape(self) -> Shape {
        match self.as_str().as_bytes()[1] {
            b'E' => Shape::Equal,
            b'V' => Shape::Variable,
            _ => Shape::Spherical,
        }
    }

    pub fn orientation(self) -> Orientation {
        match self.as_str().as_bytes()[2] {
            b'E' => Orientation::Equal,
            b'V' => Orientation::Variable,
            _ => Orientation::Identity,
        }
    }

    /// Human-readable description, e.g. "diagonal, equal volume and shape".
    pub fn describe(self) -> &'static str {
        use StructureCode::*;
        match self {
            EII => "spherical, equal volume",
            VII => "spherical, varying volume",
            EEI => "diagonal, equal volume and shape",
            VEI => "diagonal, varying volume, equal shape",
            EVI => "diagonal, equal volume, varying shape",
            VVI => "diagonal, varying volume and shape",
            EEE => "ellipsoidal, equal volume, shape and orientation",
            VEE => "ellipsoidal, equal shape and orientation",
            EVE => "ellipsoidal, equal volume and orientation",
            EEV => "ellipsoidal, equal volume and shape",
            VVE => "ellipsoidal, equal orientation",
            VEV => "ellipsoidal, equal shape",
            EVV => "ellipsoidal, equal volume",
            VVV => "ellipsoidal, varying volume, shape and orientation",
        }
    }

    /// The code that stands for this one's equivalence class when `G = 1`.
    pub fn single_group_representative(self) -> StructureCode {
        match self.family() {
            Family::Spherical => StructureCode::EII,
            Family::Diagonal => StructureCode::EEI,
            Family::General => StructureCode::EEE,
        }
    }
}

impl fmt::Display for StructureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StructureCode {
    type Err = CnError;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        StructureCode::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == upper)
            .ok_or_else(|| CnError::InvalidParameter(format!("unknown structure code '{s}'")))
    }
}

/// Number of free parameters in the set of scale matrices.
pub fn sigma_param_count(code: StructureCode, g: usize, p: usize) -> usize {
    use StructureCode::*;
    let rot = p * (p - 1) / 2;
    match code {
        EII => 1,
        VII => g,
        EEI => p,
        VEI => g + p - 1,
        EVI => 1 + g * (p - 1),
        VVI => g * p,
        EEE => p * (p + 1) / 2,
        VEE => g + p - 1 + rot,
        EVE => 1 + g * (p - 1) + rot,
        EEV => p + g * rot,
        VVE => g * p + rot,
        VEV => g + p - 1 + g * rot,
        EVV => 1 + g * (p - 1) + g * rot,
        VVV => g * p * (p + 1) / 2,
    }
}

/// Volume / shape / orientation factors of one scale matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposedScale {
    pub volume: f64,
    /// Diagonal of Δ; the entries multiply to one.
    pub shape: DVector<f64>,
    /// Orthogonal Γ, one eigenvector per column.
    pub orientation: DMatrix<f64>,
}

impl EigenDecomposedScale {
    pub fn isotropic(volume: f64, p: usize) -> Self {
        Self { volume, shape: DVector::from_element(p, 1.0), orientation: DMatrix::identity(p, p) }
    }

    /// Decomposition of a symmetric positive definite matrix, eigenvalues decreasing.
    pub fn decompose(sigma: &DMatrix<f64>) -> Self {
        let (vals, vecs) = sym_eigen_desc(sigma);
        let vals: Vec<f64> = vals.iter().map(|&v| v.max(f64::MIN_POSITIVE)).collect();
        let volume = geometric_mean(&vals);
        Self {
            volume,
            shape: DVector::from_iterator(vals.len(), vals.iter().map(|v| v / volume)),
            orientation: vecs,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// `λ Γ Δ Γᵀ` with the spectrum `λΔ` clipped below at `eps`.
    pub fn reconstruct_floored(&self, eps: f64) -> DMatrix<f64> {
        let spectrum = self.shape.map(|s| (self.volume * s).max(eps));
        let g = &self.orientation;
        let mut m = g * DMatrix::from_diagonal(&spectrum) * g.transpose();
        symmetrize(&mut m);
        m
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_floored(0.0)
    }
}

/// Decomposition as reported to users: λ is the largest eigenvalue and Δ
/// holds the eigenvalues divided by λ, sorted decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedDecomposition {
    pub lambda: f64,
    pub delta: Vec<f64>,
    /// Eigenvectors, one per inner vector.
    pub gamma: Vec<Vec<f64>>,
}

impl ReportedDecomposition {
    pub fn from_sigma(sigma: &DMatrix<f64>) -> Self {
        let (vals, vecs) = sym_eigen_desc(sigma);
        let lambda = vals[0];
        Self {
            lambda,
            delta: vals.iter().map(|v| v / lambda).collect(),
            gamma: vecs.column_iter().map(|c| c.iter().copied().collect()).collect(),
        }
    }
}

/// Weighted within-group scatter matrices and effective group sizes.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    pub w: Vec<DMatrix<f64>>,
    pub n_g: Vec<f64>,
    pub n: f64,
}

impl ScatterSet {
    pub fn new(w: Vec<DMatrix<f64>>, n_g: Vec<f64>, n: f64) -> Result<Self> {
        if w.is_empty() || w.len() != n_g.len() {
            return Err(CnError::DimensionMismatch("scatter and size lists differ".into()));
        }
        let p = w[0].nrows();
        if w.iter().any(|m| m.nrows() != p || m.ncols() != p) {
            return Err(CnError::DimensionMismatch("scatter matrices must all be p x p".into()));
        }
        if n_g.iter().any(|&s| !(s > 0.0)) {
            return Err(CnError::InvalidParameter("group sizes must be positive".into()));
        }
        if n_g.iter().sum::<f64>() > n + 1e-6 {
            return Err(CnError::InvalidParameter("group sizes exceed the total count".into()));
        }
        Ok(Self { w, n_g, n })
    }

    pub fn groups(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.w[0].nrows()
    }

    fn total_size(&self) -> f64 {
        self.n_g.iter().sum()
    }

    fn pooled(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for w in &self.w {
            acc += w;
        }
        acc
    }
}

/// Scale factors for every component under one structure code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub code: StructureCode,
    pub groups: Vec<EigenDecomposedScale>,
}

impl ScaleSet {
    pub fn sigmas(&self, eps: f64) -> Vec<DMatrix<f64>> {
        self.groups.iter().map(|s| s.reconstruct_floored(eps)).collect()
    }

    /// Checks the code's equality pattern exactly (bitwise), not numerically.
    pub fn satisfies_constraints(&self) -> bool {
        let first = &self.groups[0];
        let p = first.dim();
        let ones = DVector::from_element(p, 1.0);
        let eye = DMatrix::<f64>::identity(p, p);
        let volume_ok = match self.code.volume() {
            Volume::Equal => self.groups.iter().all(|s| s.volume == first.volume),
            Volume::Variable => true,
        };
        let shape_ok = match self.code.shape() {
            Shape::Spherical => self.groups.iter().all(|s| s.shape == ones),
            Shape::Equal => self.groups.iter().all(|s| s.shape == first.shape),
            Shape::Variable => true,
        };
        let orientation_ok = match self.code.orientation() {
            Orientation::Identity => self.groups.iter().all(|s| s.orientation == eye),
            Orientation::Equal => self.groups.iter().all(|s| s.orientation == first.orientation),
            Orientation::Variable => true,
        };
        volume_ok && shape_ok && orientation_ok
    }
}

/// `Σ_g [n_g ln det Σ_g + tr(Σ_g⁻¹ W_g)]`.
pub fn scatter_objective(scatter: &ScatterSet, sigmas: &[DMatrix<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (g, sigma) in sigmas.iter().enumerate() {
        let chol = cholesky(sigma, &format!("scale matrix of component {}", g + 1))?;
        total += scatter.n_g[g] * chol_log_det(&chol) + chol.solve(&scatter.w[g]).trace();
    }
    Ok(total)
}

/// Controls for the iterative structure updates.
#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    /// Maximum alternating sweeps.
    pub max_iter: usize,
    /// Eigenvalue floor applied when reconstructing Σ_g.
    pub eps: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 20, eps: 0.0 }
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_ANGLE_TOL: f64 = 1e-12;

/// Constrained M-step update of the scale matrices.
///
/// `prev` warm-starts the iterative structures. When supplied, the result
/// never has a larger objective than `prev` itself.
pub fn update_scales(
    code: StructureCode,
    scatter: &ScatterSet,
    prev: Option<&ScaleSet>,
    opts: InnerOptions,
) -> Result<ScaleSet> {
    check_rank(scatter)?;
    let prev = prev.filter(|s| s.code == code && s.groups.len() == scatter.groups() && s.groups[0].dim() == scatter.dim());
    let fresh = match code {
        StructureCode::EII => eii(scatter),
        StructureCode::VII => vii(scatter),
        StructureCode::EEI => eei(scatter),
        StructureCode::VVI => vvi(scatter),
        StructureCode::EVI => evi(scatter),
        StructureCode::VEI => vei(scatter, prev, opts)?,
        StructureCode::EEE => eee(scatter),
        StructureCode::VVV => vvv(scatter),
        StructureCode::EEV => eev(scatter),
        StructureCode::EVV => evv(scatter),
        StructureCode::VEV => vev(scatter, prev, opts)?,
        StructureCode::VEE => vee(scatter, prev, opts)?,
        StructureCode::EVE | StructureCode::VVE => common_orientation(code, scatter, prev, opts)?,
    };
    if let Some(prev) = prev {
        let f_new = scatter_objective(scatter, &fresh.sigmas(opts.eps));
        let f_old = scatter_objective(scatter, &prev.sigmas(opts.eps))?;
        match f_new {
            Ok(f) if f <= f_old => {}
            _ => return Ok(prev.clone()),
        }
    }
    Ok(fresh)
}

fn check_rank(scatter: &ScatterSet) -> Result<()> {
    let pooled = scatter.pooled();
    if !pooled.iter().all(|v| v.is_finite()) {
        return Err(CnError::Degenerate("scatter matrix has non-finite entries".into()));
    }
    let (vals, _) = sym_eigen_desc(&pooled);
    let top = vals[0];
    let bottom = vals[vals.len() - 1];
    if !(top > 0.0) || bottom <= 1e-13 * top {
        return Err(CnError::Degenerate("total scatter matrix is rank deficient".into()));
    }
    Ok(())
}

fn replicate(code: StructureCode, scale: EigenDecomposedScale, g: usize) -> ScaleSet {
    ScaleSet { code, groups: vec![scale; g] }
}

fn diag_vec(m: &DMatrix<f64>) -> DVector<f64> {
    m.diagonal().map(|v| v.max(f64::MIN_POSITIVE))
}

/// Splits a positive vector into (geometric mean, vector / geometric mean).
fn unit_det(v: &DVector<f64>) -> (f64, DVector<f64>) {
    let gm = geometric_mean(v.as_slice());
    (gm, v / gm)
}

fn diagonal_scale(volume: f64, shape: DVector<f64>) -> EigenDecomposedScale {
    let p = shape.len();
    EigenDecomposedScale { volume, shape, orientation: DMatrix::identity(p, p) }
}

fn eii(s: &ScatterSet) -> ScaleSet {
    let p = s.dim();
    let lambda = s.pooled().trace() / (s.total_size() * p as f64);
    replicate(StructureCode::EII, EigenDecomposedScale::isotropic(lambda, p), s.groups())
}

fn vii(s: &ScatterSet) -> ScaleSet {
    let p = s.dim();
    let groups = s
        .w
        .iter()
        .zip(&s.n_g)
        .map(|(w, &ng)| EigenDecomposedScale::isotropic(w.trace() / (ng * p as f64), p))
        .collect();
    ScaleSet { code: StructureCode::VII, groups }
}

fn eei(s: &ScatterSet) -> ScaleSet {
    let d = diag_vec(&s.pooled()) / s.total_size();
    let (volume, shape) = unit_det(&d);
    replicate(StructureCode::EEI, diagonal_scale(volume, shape), s.groups())
}

fn vvi(s: &ScatterSet) -> ScaleSet {
    let groups = s
        .w
        .iter()
        .zip(&s.n_g)
        .map(|(w, &ng)| {
            let (volume, shape) = unit_det(&(diag_vec(w) / ng));
            diagonal_scale(volume, shape)
        })
        .collect();
    ScaleSet { code: StructureCode::VVI, groups }
}

fn evi(s: &ScatterSet) -> ScaleSet {
    let parts: Vec<(f64, DVector<f64>)> = s.w.iter().map(|w| unit_det(&diag_vec(w))).collect();
    let volume = parts.iter().map(|(gm, _)| gm).sum::<f64>() / s.total_size();
    let groups = parts.into_iter().map(|(_, shape)| diagonal_scale(volume, shape)).collect();
    ScaleSet { code: StructureCode::EVI, groups }
}

fn vei(s: &ScatterSet, prev: Option<&ScaleSet>, opts: InnerOptions) -> Result<ScaleSet> {
    let diags: Vec<DVector<f64>> = s.w.iter().map(diag_vec).collect();
    let build = |volumes: &[f64], shape: &DVector<f64>| ScaleSet {
        code: StructureCode::VEI,
        groups: volumes.iter().map(|&v| diagonal_scale(v, shape.clone())).collect(),
    };
    shared_shape(s, &diags, prev.map(|p| &p.groups[0].shape), build, opts)
}

/// VEI and VEV: per-group volumes and a shared unit-determinant shape acting
/// on `d_g` (the diagonals of `W_g` for VEI, their eigenvalues for VEV).
fn shared_shape<B>(
    s: &ScatterSet,
    d: &[DVector<f64>],
    prev_shape: Option<&DVector<f64>>,
    build: B,
    opts: InnerOptions,
) -> Result<ScaleSet>
where
    B: Fn(&[f64], &DVector<f64>) -> ScaleSet,
{
    let p = s.dim() as f64;
    let shape_given = |volumes: &[f64]| {
        let mut acc = DVector::zeros(s.dim());
        for (d, &lambda) in d.iter().zip(volumes) {
            acc += d / lambda;
        }
        unit_det(&acc).1
    };
    let volumes_given = |shape: &DVector<f64>| -> Vec<f64> {
        d.iter().zip(&s.n_g).map(|(d, &ng)| d.component_div(shape).sum() / (p * ng)).collect()
    };
    let starts = match prev_shape {
        Some(shape) => vec![volumes_given(shape)],
        None => {
            let mut pooled = DVector::zeros(s.dim());
            for d in d {
                pooled += d;
            }
            let own = d.iter().zip(&s.n_g).map(|(d, &ng)| geometric_mean((d / ng).as_slice())).collect();
            vec![volumes_given(&unit_det(&pooled).1), own]
        }
    };
    let volumes = best_volumes(
        starts,
        |v| Ok(volumes_given(&shape_given(v))),
        |v| scatter_objective(s, &build(v, &shape_given(v)).sigmas(opts.eps)),
        opts,
    )?;
    Ok(build(&volumes, &shape_given(&volumes)))
}

/// Runs [`volume_fixed_point`] from every start and keeps the lowest objective.
fn best_volumes<S, O>(starts: Vec<Vec<f64>>, step: S, objective: O, opts: InnerOptions) -> Result<Vec<f64>>
where
    S: Fn(&[f64]) -> Result<Vec<f64>>,
    O: Fn(&[f64]) -> Result<f64>,
{
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (x, f) = volume_fixed_point(start, &step, &objective, opts)?;
        if best.as_ref().map_or(true, |(_, b)| f < *b) {
            best = Some((x, f));
        }
    }
    Ok(best.expect("at least one start").0)
}

/// Minimization over the volumes when the shared factor is closed form given
/// the volumes and vice versa (VEI, VEE, VEV).
///
/// `step` is one alternating sweep and `objective` scores volumes paired with
/// their optimal shared factor; a sweep never raises it. Plain sweeps crawl
/// when the group volumes differ by orders of magnitude, so every iteration
/// also tries a squared extrapolation of two sweeps in log-volume space and
/// keeps it only when it beats the plain double sweep.
fn volume_fixed_point<S, O>(start: Vec<f64>, step: &S, objective: &O, opts: InnerOptions) -> Result<(Vec<f64>, f64)>
where
    S: Fn(&[f64]) -> Result<Vec<f64>>,
    O: Fn(&[f64]) -> Result<f64>,
{
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<f64>>();
    let mut x = start;
    let mut fx = objective(&x)?;
    for _ in 0..opts.max_iter {
        let x1 = step(&x)?;
        let x2 = step(&x1)?;
        let f2 = objective(&x2)?;
        let (u0, u1, u2) = (logs(&x), logs(&x1), logs(&x2));
        let r: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = (0..u0.len()).map(|j| u2[j] - 2.0 * u1[j] + u0[j]).collect();
        let norm = |w: &[f64]| w.iter().map(|t| t * t).sum::<f64>().sqrt();
        let (nr, nv) = (norm(&r), norm(&v));
        let mut next = (x2, f2);
        if nv > 0.0 && nr.is_finite() {
            let a = (-nr / nv).min(-1.0);
            let jump: Vec<f64> = (0..u0.len()).map(|j| (u0[j] - 2.0 * a * r[j] + a * a * v[j]).exp()).collect();
            if jump.iter().all(|t| t.is_finite() && *t > 0.0) {
                if let Some((x3, f3)) = step(&jump).ok().and_then(|x3| objective(&x3).ok().map(|f3| (x3, f3))) {
                    if f3 < next.1 {
                        next = (x3, f3);
                    }
                }
            }
        }
        let done = converged(fx, next.1, opts.tol);
        (x, fx) = next;
        if done {
            break;
        }
    }
    Ok((x, fx))
}

fn eee(s: &ScatterSet) -> ScaleSet {
    let sigma = s.pooled() / s.total_size();
    replicate(StructureCode::EEE, EigenDecomposedScale::decompose(&sigma), s.groups())
}

fn vvv(s: &ScatterSet) -> ScaleSet {
    let groups = s.w.iter().zip(&s.n_g).map(|(w, &ng)| EigenDecomposedScale::decompose(&(w / ng))).collect();
    ScaleSet { code: StructureCode::VVV, groups }
}

/// Eigenvalues (decreasing, floored) and eigenvectors of each scatter matrix.
fn scatter_eigen(s: &ScatterSet) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    s.w
        .iter()
        .map(|w| {
            let (vals, vecs) = sym_eigen_desc(w);
            (vals.map(|v| v.max(f64::MIN_POSITIVE)), vecs)
        })
        .collect()
}

fn eev(s: &ScatterSet) -> ScaleSet {
    let eig = scatter_eigen(s);
    let mut acc = DVector::zeros(s.dim());
    for (vals, _) in &eig {
        acc += vals;
    }
    let (gm, shape) = unit_det(&acc);
    let volume = gm / s.total_size();
    let groups = eig
        .into_iter()
        .map(|(_, vecs)| EigenDecomposedScale { volume, shape: shape.clone(), orientation: vecs })
        .collect();
    ScaleSet { code: StructureCode::EEV, groups }
}

fn evv(s: &ScatterSet) -> ScaleSet {
    let eig = scatter_eigen(s);
    let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = eig
        .into_iter()
        .map(|(vals, vecs)| {
            let (gm, shape) = unit_det(&vals);
            (gm, shape, vecs)
        })
        .collect();
    let volume = parts.iter().map(|(gm, _, _)| gm).sum::<f64>() / s.total_size();
    let groups = parts
        .into_iter()
        .map(|(_, shape, orientation)| EigenDecomposedScale { volume, shape, orientation })
        .collect();
    ScaleSet { code: StructureCode::EVV, groups }
}

fn vev(s: &ScatterSet, prev: Option<&ScaleSet>, opts: InnerOptions) -> Result<ScaleSet> {
    let eig = scatter_eigen(s);
    let vals: Vec<DVector<f64>> = eig.iter().map(|(v, _)| v.clone()).collect();
    let build = |volumes: &[f64], shape: &DVector<f64>| ScaleSet {
        code: StructureCode::VEV,
        groups: volumes
            .iter()
            .zip(&eig)
            .map(|(&volume, (_, vecs))| EigenDecomposedScale { volume, shape: shape.clone(), orientation: vecs.clone() })
            .collect(),
    };
    shared_shape(s, &vals, prev.map(|p| &p.groups[0].shape), build, opts)
}

fn vee(s: &ScatterSet, prev: Option<&ScaleSet>, opts: InnerOptions) -> Result<ScaleSet> {
    let p = s.dim() as f64;
    let common = |volumes: &[f64]| {
        let mut acc = DMatrix::zeros(s.dim(), s.dim());
        for (w, &lambda) in s.w.iter().zip(volumes) {
            acc += w / lambda;
        }
        let mut c = normalized(acc);
        symmetrize(&mut c);
        c
    };
    let volumes_given = |c: &DMatrix<f64>| -> Result<Vec<f64>> {
        let chol = cholesky(c, "common shape matrix")?;
        Ok(s.w.iter().zip(&s.n_g).map(|(w, &ng)| chol.solve(w).trace() / (p * ng)).collect())
    };
    let build = |volumes: &[f64]| {
        let unit = EigenDecomposedScale::decompose(&common(volumes));
        ScaleSet {
            code: StructureCode::VEE,
            groups: volumes
                .iter()
                .map(|&volume| EigenDecomposedScale {
                    volume,
                    shape: unit.shape.clone(),
                    orientation: unit.orientation.clone(),
                })
                .collect(),
        }
    };
    let starts = match prev {
        Some(prev) => {
            let first = &prev.groups[0];
            let unit = EigenDecomposedScale { volume: 1.0, shape: first.shape.clone(), orientation: first.orientation.clone() };
            vec![volumes_given(&unit.reconstruct())?]
        }
        None => vec![
            volumes_given(&normalized(s.pooled()))?,
            s.w.iter().zip(&s.n_g).map(|(w, &ng)| EigenDecomposedScale::decompose(&(w / ng)).volume).collect(),
        ],
    };
    let volumes = best_volumes(
        starts,
        |v| volumes_given(&common(v)),
        |v| scatter_objective(s, &build(v).sigmas(opts.eps)),
        opts,
    )?;
    Ok(build(&volumes))
}

fn normalized(m: DMatrix<f64>) -> DMatrix<f64> {
    let det_root = EigenDecomposedScale::decompose(&m).volume;
    m / det_root
}

/// EVE and VVE: shared orientation, per-group diagonal factors.
///
/// Alternates the closed-form diagonal update for a fixed orientation with
/// Jacobi rotation sweeps on the orientation. Without a warm start the
/// eigenvectors of the pooled scatter and of every group's scatter are each
/// tried as starting orientations, since the alternation only finds a local
/// minimum.
fn common_orientation(
    code: StructureCode,
    s: &ScatterSet,
    prev: Option<&ScaleSet>,
    opts: InnerOptions,
) -> Result<ScaleSet> {
    let starts = match prev {
        Some(prev) => vec![prev.groups[0].orientation.clone()],
        None => std::iter::once(s.pooled()).chain(s.w.iter().cloned()).map(|m| sym_eigen_desc(&m).1).collect(),
    };
    let mut best: Option<(f64, ScaleSet)> = None;
    for start in starts {
        let (f, set) = orientation_from(code, s, start, opts)?;
        if best.as_ref().map_or(true, |(b, _)| f < *b) {
            best = Some((f, set));
        }
    }
    Ok(best.expect("at least one start").1)
}

fn orientation_from(
    code: StructureCode,
    s: &ScatterSet,
    mut orientation: DMatrix<f64>,
    opts: InnerOptions,
) -> Result<(f64, ScaleSet)> {
    let mut set = diagonal_given_orientation(code, s, &orientation);
    let mut last = scatter_objective(s, &set.sigmas(opts.eps))?;
    for _ in 0..opts.max_iter {
        let inv_diag: Vec<DVector<f64>> =
            set.groups.iter().map(|g| g.shape.map(|a| 1.0 / (a * g.volume))).collect();
        orientation = jacobi_orientation(&s.w, &inv_diag, orientation);
        set = diagonal_given_orientation(code, s, &orientation);
        let f = scatter_objective(s, &set.sigmas(opts.eps))?;
        let done = converged(last, f, opts.tol);
        last = f;
        if done {
            break;
        }
    }
    Ok((last, set))
}

fn diagonal_given_orientation(code: StructureCode, s: &ScatterSet, orientation: &DMatrix<f64>) -> ScaleSet {
    let rotated: Vec<DVector<f64>> =
        s.w.iter().map(|w| diag_vec(&(orientation.transpose() * w * orientation))).collect();
    let groups = match code {
        StructureCode::EVE => {
            let parts: Vec<(f64, DVector<f64>)> = rotated.iter().map(unit_det).collect();
            let volume = parts.iter().map(|(gm, _)| gm).sum::<f64>() / s.total_size();
            parts
                .into_iter()
                .map(|(_, shape)| EigenDecomposedScale { volume, shape, orientation: orientation.clone() })
                .collect()
        }
        _ => rotated
            .iter()
            .zip(&s.n_g)
            .map(|(b, &ng)| {
                let (volume, shape) = unit_det(&(b / ng));
                EigenDecomposedScale { volume, shape, orientation: orientation.clone() }
            })
            .collect(),
    };
    ScaleSet { code, groups }
}

/// Minimizes `Σ_g tr(W_g D B_g Dᵀ)` over orthogonal `D` for fixed diagonal `B_g`.
///
/// Cyclic Jacobi sweeps: for each coordinate plane `(j, k)` the objective as a
/// function of the rotation angle is `c + P cos 2θ + Q sin 2θ`, minimized in
/// closed form. The rotated scatters `Dᵀ W_g D` are updated in place.
fn jacobi_orientation(w: &[DMatrix<f64>], inv_diag: &[DVector<f64>], start: DMatrix<f64>) -> DMatrix<f64> {
    let p = start.nrows();
    let mut d = start;
    let mut rotated: Vec<DMatrix<f64>> = w.iter().map(|wg| d.transpose() * wg * &d).collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut largest = 0.0_f64;
        for j in 0..p {
            for k in (j + 1)..p {
                let (mut pc, mut qs) = (0.0, 0.0);
                for (m, b) in rotated.iter().zip(inv_diag) {
                    let diff = b[j] - b[k];
                    pc += 0.5 * (m[(j, j)] - m[(k, k)]) * diff;
                    qs += m[(j, k)] * diff;
                }
                let r = pc.hypot(qs);
                if !(r > 0.0) {
                    continue;
                }
                // cos 2θ = −P/r, sin 2θ = −Q/r; take the half angle in (−π/2, π/2]
                let theta = 0.5 * (-qs).atan2(-pc);
                if theta.abs() < JACOBI_ANGLE_TOL {
                    continue;
                }
                largest = largest.max(theta.abs());
                let (sn, cs) = theta.sin_cos();
                for i in 0..p {
                    let (a, b) = (d[(i, j)], d[(i, k)]);
                    d[(i, j)] = cs * a + sn * b;
                    d[(i, k)] = -sn * a + cs * b;
                }
                for m in rotated.iter_mut() {
                    rotate_plane(m, j, k, cs, sn);
                }
            }
        }
        if largest < JACOBI_ANGLE_TOL {
            break;
        }
    }
    d
}

/// `M ← Gᵀ M G` for the plane rotation `G` acting on columns `j` and `k`.
fn rotate_plane(m: &mut DMatrix<f64>, j: usize, k: usize, cs: f64, sn: f64) {
    let p = m.nrows();
    for i in 0..p {
        let (a, b) = (m[(i, j)], m[(i, k)]);
        m[(i, j)] = cs * a + sn * b;
        m[(i, k)] = -sn * a + cs * b;
    }
    for i in 0..p {
        let (a, b) = (m[(j, i)], m[(k, i)]);
        m[(j, i)] = cs * a + sn * b;
        m[(k, i)] = -sn * a + cs * b;
    }
}

fn converged(last: f64, current: f64, tol: f64) -> bool {
    last.is_finite() && (last - current).abs() <= tol * current.abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, p: usize, n: usize) -> DMatrix<f64> {
        let x = DMatrix::from_fn(p, n, |_, _| crate::mvn::standard_normal(rng));
        let scale = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 + rng.gen::<f64>() * 3.0 } else { rng.gen::<f64>() - 0.5 });
        let y = &scale * x;
        &y * y.transpose()
    }

    fn random_scatter(seed: u64, g: usize, p: usize) -> ScatterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<f64> = (0..g).map(|_| 15.0 + rng.gen::<f64>() * 30.0).collect();
        let w = sizes.iter().map(|&ng| random_spd(&mut rng, p, ng as usize)).collect();
        let n = sizes.iter().sum::<f64>();
        ScatterSet::new(w, sizes, n).unwrap()
    }

    #[test]
    fn param_counts_match_table() {
        use StructureCode::*;
        assert_eq!(sigma_param_count(EII, 3, 13), 1);
        assert_eq!(sigma_param_count(EEI, 2, 2), 2);
        assert_eq!(sigma_param_count(VVV, 2, 3), 12);
        let (g, p) = (3, 13);
        let expected = [1, 3, 13, 15, 37, 39, 91, 93, 115, 247, 117, 249, 271, 273];
        for (code, want) in StructureCode::ALL.iter().zip(expected) {
            assert_eq!(sigma_param_count(*code, g, p), want, "{code}");
        }
        assert_eq!(StructureCode::ALL.iter().map(|&c| sigma_param_count(c, g, p)).sum::<usize>(), expected.iter().sum::<usize>());
    }

    #[test]
    fn codes_round_trip_through_strings() {
        for code in StructureCode::ALL {
            assert_eq!(code.as_str().parse::<StructureCode>().unwrap(), code);
        }
        assert!("XYZ".parse::<StructureCode>().is_err());
    }

    #[test]
    fn reconstruct_examples() {
        let s = EigenDecomposedScale::isotropic(1.0, 3);
        assert_eq!(s.reconstruct(), DMatrix::identity(3, 3));
        let s = EigenDecomposedScale {
            volume: 2.0,
            shape: DVector::from_column_slice(&[2.0, 0.5]),
            orientation: DMatrix::identity(2, 2),
        };
        assert_eq!(s.reconstruct(), DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 1.0])));
    }

    #[test]
    fn decompose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [2, 3, 5] {
            let a = random_spd(&mut rng, p, 20) / 20.0;
            let d = EigenDecomposedScale::decompose(&a);
            assert!((d.shape.iter().product::<f64>() - 1.0).abs() < 1e-8);
            let gtg = d.orientation.transpose() * &d.orientation;
            assert!((gtg - DMatrix::identity(p, p)).abs().max() < 1e-8);
            assert!((d.reconstruct() - &a).abs().max() < 1e-10);
        }
    }

    #[test]
    fn vvv_is_scatter_over_size() {
        let s = random_scatter(1, 2, 3);
        let out = update_scales(StructureCode::VVV, &s, None, InnerOptions::default()).unwrap();
        for (g, sigma) in out.sigmas(0.0).iter().enumerate() {
            assert!((sigma - &s.w[g] / s.n_g[g]).abs().max() < 1e-10);
        }
    }

    #[test]
    fn eii_matches_one_dimensional_minimum() {
        let s = random_scatter(2, 3, 2);
        let out = update_scales(StructureCode::EII, &s, None, InnerOptions::default()).unwrap();
        let lambda = out.groups[0].volume;
        let p = 2.0;
        let total_tr: f64 = s.w.iter().map(|w| w.trace()).sum();
        let n: f64 = s.n_g.iter().sum();
        let f = |l: f64| n * p * l.ln() + total_tr / l;
        let (best, _) = crate::scalar::maximize_bounded(|l| -f(l), 1e-3, 1e3, 1e-12);
        assert!((lambda - best).abs() < 1e-5 * best);
    }

    #[test]
    fn eee_beats_random_perturbations() {
        let s = random_scatter(3, 2, 3);
        let out = update_scales(StructureCode::EEE, &s, None, InnerOptions::default()).unwrap();
        let f0 = scatter_objective(&s, &out.sigmas(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let e = DMatrix::from_fn(3, 3, |_, _| (rng.gen::<f64>() - 0.5) * 0.2);
            let mut sig = out.sigmas(0.0)[0].clone() + &e * e.transpose() + (&e + e.transpose()) * 0.1;
            symmetrize(&mut sig);
            if cholesky(&sig, "p").is_err() {
                continue;
            }
            let f = scatter_objective(&s, &[sig.clone(), sig]).unwrap();
            assert!(f0 <= f + 1e-12);
        }
    }

    #[test]
    fn every_code_satisfies_constraints_and_decreases_objective() {
        for seed in 0..5 {
            let s = random_scatter(100 + seed, 3, 3);
            for code in StructureCode::ALL {
                let first = update_scales(code, &s, None, InnerOptions::default()).unwrap();
                assert!(first.satisfies_constraints(), "{code}");
                let f1 = scatter_objective(&s, &first.sigmas(0.0)).unwrap();
                // perturbed scatter, warm start from the previous solution
                let s2 = random_scatter(200 + seed, 3, 3);
                let f_prev = scatter_objective(&s2, &first.sigmas(0.0)).unwrap();
                let second = update_scales(code, &s2, Some(&first), InnerOptions::default()).unwrap();
                assert!(second.satisfies_constraints(), "{code}");
                let f2 = scatter_objective(&s2, &second.sigmas(0.0)).unwrap();
                assert!(f2 <= f_prev + 1e-9, "{code}: {f2} > {f_prev}");
                assert!(f1.is_finite());
            }
        }
    }

    #[test]
    fn single_group_nesting() {
        let s = random_scatter(7, 1, 4);
        let opts = InnerOptions { tol: 1e-14, max_iter: 200, eps: 0.0 };
        let get = |c: StructureCode| update_scales(c, &s, None, opts).unwrap().sigmas(0.0)[0].clone();
        let close = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).abs().max() < 1e-8 * b.abs().max();
        use StructureCode::*;
        assert!(close(&get(VII), &get(EII)));
        for c in [VEI, EVI, VVI] {
            assert!(close(&get(c), &get(EEI)), "{c}");
        }
        for c in [EEE, VEE, EVE, EEV, VVE, VEV, EVV] {
            assert!(close(&get(c), &get(VVV)), "{c}");
        }
    }

    #[test]
    fn rank_deficient_total_scatter_is_degenerate() {
        let v = DVector::from_column_slice(&[1.0, 2.0]);
        let w = &v * v.transpose();
        let s = ScatterSet::new(vec![w.clone(), w * 2.0], vec![3.0, 4.0], 7.0).unwrap();
        let err = update_scales(StructureCode::VVV, &s, None, InnerOptions::default()).unwrap_err();
        assert!(matches!(err, CnError::Degenerate(_)));
    }

    #[test]
    fn reported_decomposition_uses_largest_eigenvalue() {
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 5.0]));
        let r = ReportedDecomposition::from_sigma(&sigma);
        assert_eq!(r.lambda, 5.0);
        assert_eq!(r.delta, vec![1.0, 0.1]);
        assert_eq!(r.gamma[0], vec![0.0, 1.0]);
    }
}
