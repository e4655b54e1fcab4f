//! Multivariate normal and contaminated normal densities.
//!
//! Everything is evaluated in the log domain. The contaminated normal
//! density is `α φ(x; μ, Σ) + (1 − α) φ(x; μ, ηΣ)`, combined with
//! log-sum-exp so that large inflation factors do not overflow.


use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CnError, Result};
use crate::linalg::{chol_log_det, cholesky};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(CnError::DimensionMismatch(format!(
                "mean has length {p} but scale matrix is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-10 * sigma.abs().max().max(1.0) {
            return Err(CnError::InvalidParameter("scale matrix is not symmetric".into()));
        }
        cholesky(&sigma, "scale matrix")?;
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Proportion of good points `alpha` and inflation `eta` of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationParams {
    pub alpha: f64,
    pub eta: f64,
}

impl ContaminationParams {
    pub fn new(alpha: f64, eta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CnError::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if !(eta > 1.0 && eta.is_finite()) {
            return Err(CnError::InvalidParameter(format!("eta must be > 1, got {eta}")));
        }
        Ok(Self { alpha, eta })
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + values.iter().map(|v| (v - hi).exp()).sum::<f64>().ln()
}

/// A Gaussian whose scale matrix has already been factored.
///
/// The engine evaluates every observation against every component, so the
/// factorization is done once per component per iteration.
#[derive(Debug, Clone)]
pub struct FactoredGaussian {
    mu: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl FactoredGaussian {
    pub fn new(mu: &DVector<f64>, sigma: &DMatrix<f64>, what: &str) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(CnError::DimensionMismatch(format!("{what}: mean/scale dimensions differ")));
        }
        let chol = cholesky(sigma, what)?;
        let log_det = chol_log_det(&chol);
        Ok(Self { mu: mu.clone(), chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.mu.len(), x.iter().zip(self.mu.iter()).map(|(a, b)| a - b));
        let y = self.chol.l_dirty().solve_lower_triangular(&diff).expect("factor has nonzero diagonal");
        y.norm_squared()
    }

    /// Squared distances for every column of a `p × n` matrix.
    pub fn mahalanobis_sq_columns(&self, xt: &DMatrix<f64>) -> Vec<f64> {
        let mut diff = xt.clone();
        for mut col in diff.column_iter_mut() {
            col -= &self.mu;
        }
        let y = self.chol.l_dirty().solve_lower_triangular(&diff).expect("factor has nonzero diagonal");
        y.column_iter().map(|c| c.norm_squared()).collect()
    }

    /// Normal log density at squared distance `delta` with the scale inflated by `eta`.
    pub fn log_density_at(&self, delta: f64, eta: f64) -> f64 {
        let p = self.dim() as f64;
        -0.5 * (p * LN_2PI + self.log_det + p * eta.ln() + delta / eta)
    }

    /// Contaminated-normal log density at squared distance `delta`.
    pub fn log_dcn_at(&self, delta: f64, cont: ContaminationParams) -> f64 {
        log_add_exp(
            cont.alpha.ln() + self.log_density_at(delta, 1.0),
            (1.0 - cont.alpha).ln() + self.log_density_at(delta, cont.eta),
        )
    }
}

fn check_point(x: &[f64], p: usize) -> Result<()> {
    if x.len() != p {
        return Err(CnError::DimensionMismatch(format!("point has length {} but model has dimension {p}", x.len())));
    }
    Ok(())
}

/// `(x − μ)ᵀ Σ⁻¹ (x − μ)` through a triangular solve.
pub fn mahalanobis_sq(x: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_point(x, mu.len())?;
    Ok(FactoredGaussian::new(mu, sigma, "scale matrix")?.mahalanobis_sq(x))
}

pub fn log_dmvnorm(x: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_point(x, mu.len())?;
    let f = FactoredGaussian::new(mu, sigma, "scale matrix")?;
    Ok(f.log_density_at(f.mahalanobis_sq(x), 1.0))
}

pub fn log_dcn(x: &[f64], gauss: &GaussianParams, cont: ContaminationParams) -> Result<f64> {
    check_point(x, gauss.dim())?;
    let f = FactoredGaussian::new(&gauss.mu, &gauss.sigma, "scale matrix")?;
    Ok(f.log_dcn_at(f.mahalanobis_sq(x), cont))
}

/// Draws from the contaminated normal.
///
/// Returns an `n × p` matrix and a flag per row, `true` when the row came
/// from the uninflated (good) component. Standard normal deviates are
/// produced by inverting the normal CDF on uniforms from the caller's RNG,
/// so a seeded ChaCha stream gives the same sample on every platform.
pub fn rcn<R: Rng + ?Sized>(
    n: usize,
    gauss: &GaussianParams,
    cont: ContaminationParams,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    if n == 0 {
        return Err(CnError::InvalidParameter("sample size must be at least 1".into()));
    }
    let p = gauss.dim();
    let chol = cholesky(&gauss.sigma, "scale matrix")?;
    let l = chol.l();
    let std_normal = Normal::standard();
    let mut out = DMatrix::zeros(n, p);
    let mut good = Vec::with_capacity(n);
    for i in 0..n {
        let is_good = open_unit(rng) < cont.alpha;
        let scale = if is_good { 1.0 } else { cont.eta.sqrt() };
        let z = DVector::from_iterator(p, (0..p).map(|_| std_normal.inverse_cdf(open_unit(rng))));
        let x = &gauss.mu + (&l * z) * scale;
        out.row_mut(i).copy_from(&x.transpose());
        good.push(is_good);
    }
    Ok((out, good))
}

pub fn rcn_seeded(
    n: usize,
    gauss: &GaussianParams,
    cont: ContaminationParams,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rcn(n, gauss, cont, &mut rng)
}

/// Standard normal deviates by CDF inversion.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::standard().inverse_cdf(open_unit(rng))
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}
