//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use cnmixt::data::Dataset;
use cnmixt::structures::{Orientation, ScatterSet, Shape, StructureCode, Volume};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    cnmixt::mvn::standard_normal(rng)
}

/// Plain Nelder-Mead simplex minimizer.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let d = x0.len();
    if d == 0 {
        return (Vec::new(), f(x0));
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for j in 0..d {
        let mut v = x0.to_vec();
        v[j] += step;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if (vals[d] - vals[0]).abs() < 1e-14 * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (simplex[d][j] - centroid[j])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < vals[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                vals[d] = fe;
            } else {
                simplex[d] = reflected;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            simplex[d] = reflected;
            vals[d] = fr;
        } else {
            let contracted = if fr < vals[d] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < vals[d].min(fr) {
                simplex[d] = contracted;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    simplex[i] = (0..d).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best].clone(), vals[best])
}

/// Σ = e^l R(θ) diag(e^s, e^-s) R(θ)ᵀ.
pub fn sigma_2d(l: f64, s: f64, theta: f64) -> DMatrix<f64> {
    let (c, sn) = (theta.cos(), theta.sin());
    let r = DMatrix::from_row_slice(2, 2, &[c, -sn, sn, c]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![s.exp(), (-s).exp()]));
    &r * d * r.transpose() * l.exp()
}

/// `Σ_g [n_g ln det Σ_g + tr(Σ_g⁻¹ W_g)]` via explicit 2×2 inverses.
pub fn objective_2d(scatter: &ScatterSet, sigmas: &[DMatrix<f64>]) -> f64 {
    sigmas
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
            let inv = DMatrix::from_row_slice(2, 2, &[s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]]) / det;
            scatter.n_g[g] * det.ln() + (inv * &scatter.w[g]).trace()
        })
        .sum()
}

/// How many free (l, s, θ) coordinates a code has at p = 2, and how to
/// expand them into per-group triples.
fn layout(code: StructureCode, g: usize) -> (usize, usize, usize) {
    let nl = if code.volume() == Volume::Equal { 1 } else { g };
    let ns = match code.shape() {
        Shape::Spherical => 0,
        Shape::Equal => 1,
        Shape::Variable => g,
    };
    let nt = match code.orientation() {
        Orientation::Identity => 0,
        Orientation::Equal => 1,
        Orientation::Variable => g,
    };
    (nl, ns, if ns == 0 { 0 } else { nt })
}

fn expand(x: &[f64], g: usize, (nl, ns, nt): (usize, usize, usize)) -> Vec<DMatrix<f64>> {
    (0..g)
        .map(|k| {
            let l = x[k.min(nl - 1)];
            let s = if ns == 0 { 0.0 } else { x[nl + k.min(ns - 1)] };
            let t = if nt == 0 { 0.0 } else { x[nl + ns + k.min(nt - 1)] };
            sigma_2d(l, s, t)
        })
        .collect()
}

/// Brute-force minimum of the scatter objective over all scale sets of
/// `code` at p = 2, by multi-start Nelder-Mead.
pub fn brute_force_scales(code: StructureCode, scatter: &ScatterSet, seed: u64) -> f64 {
    let g = scatter.groups();
    let lay = layout(code, g);
    let dim = lay.0 + lay.1 + lay.2;
    let f = |x: &[f64]| {
        let v = objective_2d(scatter, &expand(x, g, lay));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    // Unconstrained per-group fits as a starting point.
    let mut base = vec![0.0; dim];
    for k in 0..g {
        let s = &scatter.w[k] / scatter.n_g[k];
        let eig = s.clone().symmetric_eigen();
        let (i_hi, i_lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let (hi, lo) = (eig.eigenvalues[i_hi], eig.eigenvalues[i_lo]);
        let v = eig.eigenvectors.column(i_hi);
        let (l, sh, th) = (0.5 * (hi * lo).ln(), 0.5 * (hi / lo).ln(), v[1].atan2(v[0]));
        base[k.min(lay.0 - 1)] = l;
        if lay.1 > 0 {
            base[lay.0 + k.min(lay.1 - 1)] = if code.orientation() == Orientation::Identity {
                0.5 * (s[(0, 0)] / s[(1, 1)]).ln()
            } else {
                sh
            };
        }
        if lay.2 > 0 {
            base[lay.0 + lay.1 + k.min(lay.2 - 1)] = th;
        }
    }
    let mut r = rng(seed);
    let mut best = f64::INFINITY;
    for start in 0..24 {
        let mut x = base.clone();
        if start > 0 {
            for (j, xj) in x.iter_mut().enumerate() {
                let spread = if j >= lay.0 + lay.1 { std::f64::consts::PI } else { 1.0 };
                *xj += spread * (r.gen::<f64>() - 0.5);
            }
        }
        let mut fx = f64::INFINITY;
        for _ in 0..6 {
            let (nx, nfx) = nelder_mead(&f, &x, 0.1, 4000);
            let done = (fx - nfx).abs() < 1e-12;
            x = nx;
            fx = nfx;
            if done {
                break;
            }
        }
        best = best.min(fx);
    }
    best
}

/// Random scatter set at p = 2 from `n_g` points per group.
pub fn random_scatter(seed: u64, sizes: &[usize]) -> ScatterSet {
    let mut r = rng(seed);
    let mut w = Vec::new();
    for &n_g in sizes {
        let a = DMatrix::from_fn(2, 2, |_, _| normal(&mut r) * r.gen_range(0.3..3.0));
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n_g {
            let z = DVector::from_fn(2, |_, _| normal(&mut r));
            let x = &a * z;
            acc += &x * x.transpose();
        }
        w.push(acc);
    }
    let n_g: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let n = n_g.iter().sum();
    ScatterSet::new(w, n_g, n).unwrap()
}

/// Gaussian-mixture data with a few far-out rows, `n × p`.
pub fn mixture_data(seed: u64, n: usize, p: usize, g: usize, outliers: usize) -> Dataset {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..g).map(|_| (0..p).map(|_| 6.0 * normal(&mut r)).collect()).collect();
    let scales: Vec<Vec<f64>> = (0..g).map(|_| (0..p).map(|_| r.gen_range(0.5..2.0)).collect()).collect();
    let x = DMatrix::from_fn(n, p, |_, _| 0.0);
    let mut x = x;
    for i in 0..n {
        let k = i % g;
        let spread = if i < outliers { 8.0 } else { 1.0 };
        for j in 0..p {
            x[(i, j)] = centers[k][j] + spread * scales[k][j] * normal(&mut r);
        }
    }
    Dataset::from_matrix(&x).unwrap()
}

/// Gaussian-mixture parameters from plain EM with unconstrained covariances.
pub struct GaussianMixture {
    pub pi: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

fn log_gauss(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let p = x.len() as f64;
    let chol = sigma.clone().cholesky().expect("SPD");
    let d = x - mu;
    let sol = chol.solve(&d);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (p * (2.0 * std::f64::consts::PI).ln() + log_det + d.dot(&sol))
}

/// Textbook EM for a VVV Gaussian mixture from a starting posterior `z`,
/// run until the log-likelihood changes by less than 1e-13.
pub fn gaussian_em(x: &DMatrix<f64>, z0: &DMatrix<f64>, max_iter: usize) -> GaussianMixture {
    let (n, p) = x.shape();
    let g = z0.ncols();
    let rows: Vec<DVector<f64>> = (0..n).map(|i| x.row(i).transpose()).collect();
    let mut z = z0.clone();
    let mut prev = f64::NEG_INFINITY;
    let mut out = GaussianMixture { pi: vec![], mu: vec![], sigma: vec![], loglik: prev };
    for _ in 0..max_iter {
        let mut pi = Vec::new();
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        for k in 0..g {
            let nk: f64 = z.column(k).sum();
            let m = rows.iter().enumerate().fold(DVector::zeros(p), |acc, (i, r)| acc + r * z[(i, k)]) / nk;
            let s = rows.iter().enumerate().fold(DMatrix::zeros(p, p), |acc, (i, r)| {
                let d = r - &m;
                acc + &d * d.transpose() * z[(i, k)]
            }) / nk;
            pi.push(nk / n as f64);
            mu.push(m);
            sigma.push(s);
        }
        let mut loglik = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let terms: Vec<f64> = (0..g).map(|k| pi[k].ln() + log_gauss(r, &mu[k], &sigma[k])).collect();
            let hi = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln();
            loglik += lse;
            for k in 0..g {
                z[(i, k)] = (terms[k] - lse).exp();
            }
        }
        out = GaussianMixture { pi, mu, sigma, loglik };
        if (loglik - prev).abs() < 1e-13 * loglik.abs() {
            break;
        }
        prev = loglik;
    }
    out
}
