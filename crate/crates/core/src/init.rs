//! Starting values `(z⁰, v⁰, η⁰)` for the first CM-step.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{Dataset, KnownLabels};
use crate::engine::{fit_single, FitOptions, FitOutcome, InitState, ModelSpec};
use crate::error::{CnError, Result};
use crate::mvn::open_unit;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_SWEEPS: usize = 100;
/// Pinned values that turn the contaminated engine into a Gaussian mixture fit.
pub const GAUSSIAN_ALPHA: f64 = 1.0 - 1e-12;
pub const GAUSSIAN_ETA: f64 = 1.0 + 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    RandomSoft,
    RandomHard,
    Kmeans,
    Mixt,
    Manual,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::RandomSoft => "random.soft",
            InitKind::RandomHard => "random.hard",
            InitKind::Kmeans => "kmeans",
            InitKind::Mixt => "mixt",
            InitKind::Manual => "manual",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitKind {
    type Err = CnError;

    fn from_str(s: &str) -> Result<Self> {
        [InitKind::RandomSoft, InitKind::RandomHard, InitKind::Kmeans, InitKind::Mixt, InitKind::Manual]
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| {
                CnError::InvalidParameter(format!(
                    "unknown init '{s}' (expected random.soft, random.hard, kmeans, mixt or manual)"
                ))
            })
    }
}

/// An initialization strategy, with user matrices for `manual`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitStrategy {
    pub kind: InitKind,
    pub start_z: Option<DMatrix<f64>>,
    pub start_v: Option<DMatrix<f64>>,
}

impl InitStrategy {
    pub fn new(kind: InitKind) -> Self {
        Self { kind, start_z: None, start_v: None }
    }

    pub fn manual(z: DMatrix<f64>, v: Option<DMatrix<f64>>) -> Self {
        Self { kind: InitKind::Manual, start_z: Some(z), start_v: v }
    }
}

/// One-hot rows drawn from the uniform multinomial over `g` components.
pub fn init_random_soft<R: Rng + ?Sized>(n: usize, g: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, g);
    for i in 0..n {
        let k = ((open_unit(rng) * g as f64) as usize).min(g - 1);
        z[(i, k)] = 1.0;
    }
    z
}

/// Uniform draws normalized to sum to one per row.
pub fn init_random_hard<R: Rng + ?Sized>(n: usize, g: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::from_fn(n, g, |_, _| open_unit(rng));
    for mut row in z.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    z
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding: each new center is a data row drawn with probability
/// proportional to its squared distance to the nearest chosen center.
fn seed_centers<R: Rng + ?Sized>(data: &Dataset, g: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.n();
    let first = ((open_unit(rng) * n as f64) as usize).min(n - 1);
    let mut centers = vec![data.row(first).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = open_unit(rng) * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            ((open_unit(rng) * n as f64) as usize).min(n - 1)
        };
        centers.push(data.row(pick).to_vec());
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centers.last().unwrap()));
        }
    }
    centers
}

/// Lloyd iterations from the given centers. Returns assignments and the
/// within-cluster sum of squares.
fn lloyd(data: &Dataset, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let (n, p, g) = (data.n(), data.p(), centers.len());
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_SWEEPS {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let k = nearest(data.row(i), &centers).0;
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; p]; g];
        let mut counts = vec![0usize; g];
        for (i, &k) in assign.iter().enumerate() {
            counts[k] += 1;
            for (s, x) in sums[k].iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        for k in 0..g {
            if counts[k] > 0 {
                centers[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            } else {
                // an empty cluster takes over the row farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(data.row(a), &centers[assign[a]]);
                        let db = sq_dist(data.row(b), &centers[assign[b]]);
                        da.total_cmp(&db)
                    })
                    .expect("n > 0");
                centers[k] = data.row(far).to_vec();
                assign[far] = k;
            }
        }
    }
    for (i, a) in assign.iter_mut().enumerate() {
        *a = nearest(data.row(i), &centers).0;
    }
    let wss = (0..n).map(|i| sq_dist(data.row(i), &centers[assign[i]])).sum();
    (assign, wss)
}

fn one_hot(assign: &[usize], g: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(assign.len(), g);
    for (i, &k) in assign.iter().enumerate() {
        z[(i, k)] = 1.0;
    }
    z
}

/// Hard k-means partition: best of 10 seeded restarts by within-cluster sum of squares.
pub fn init_kmeans<R: Rng + ?Sized>(data: &Dataset, g: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if g == 0 {
        return Err(CnError::InvalidParameter("G must be at least 1".into()));
    }
    if data.n() < g {
        return Err(CnError::InvalidParameter(format!("k-means needs n >= G, got n = {} and G = {g}", data.n())));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(data, seed_centers(data, g, rng));
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    Ok(one_hot(&best.expect("at least one restart").0, g))
}

/// k-means started from the labeled group means, so that fitted components
/// line up with the known labels. `None` when some group has no labeled row.
fn kmeans_from_labels(data: &Dataset, g: usize, labels: &KnownLabels) -> Option<DMatrix<f64>> {
    if labels.labeled_count() == 0 {
        return None;
    }
    let p = data.p();
    let mut sums = vec![DVector::<f64>::zeros(p); g];
    let mut counts = vec![0usize; g];
    for i in 0..data.n() {
        if let Some(h) = labels.get(i) {
            counts[h] += 1;
            sums[h] += DVector::from_column_slice(data.row(i));
        }
    }
    if counts.contains(&0) {
        return None;
    }
    let centers = sums.iter().zip(&counts).map(|(s, &c)| (s / c as f64).iter().copied().collect()).collect();
    Some(one_hot(&lloyd(data, centers).0, g))
}

/// The result of a Gaussian-mixture start.
#[derive(Debug, Clone)]
pub struct MixtStart {
    /// Posterior of the Gaussian fit, `v⁰` all ones, fitted scales for warm starting.
    pub state: InitState,
    pub gaussian_loglik: f64,
    /// The k-means partition the Gaussian fit started from.
    pub kmeans_z: DMatrix<f64>,
}

/// Gaussian-mixture start: the engine with α and η pinned at one, started
/// from k-means.
pub fn init_mixt<R: Rng + ?Sized>(
    data: &Dataset,
    spec: ModelSpec,
    labels: &KnownLabels,
    options: &FitOptions,
    rng: &mut R,
) -> Result<MixtStart> {
    let kmeans_z = match kmeans_from_labels(data, spec.g, labels) {
        Some(z) => z,
        None => init_kmeans(data, spec.g, rng)?,
    };
    let gaussian = gaussian_options(options);
    match fit_single(data, spec, labels, InitState::new(kmeans_z.clone(), None), &gaussian) {
        FitOutcome::Fitted(fit) => {
            let mut state = InitState::new(fit.resp.z, None);
            state.warm_scales = Some(fit.psi.scales);
            Ok(MixtStart { state, gaussian_loglik: fit.loglik, kmeans_z })
        }
        FitOutcome::Failed(fail) => Err(fail.error),
    }
}

/// Options that reduce the contaminated model to a Gaussian mixture.
pub fn gaussian_options(options: &FitOptions) -> FitOptions {
    FitOptions {
        alpha_fix: Some(vec![GAUSSIAN_ALPHA]),
        alpha_min: None,
        eta_fix: Some(vec![GAUSSIAN_ETA]),
        ..options.clone()
    }
}

/// Builds the starting state for one model. A failed Gaussian pre-fit falls
/// back to k-means.
pub fn initialize<R: Rng + ?Sized>(
    strategy: &InitStrategy,
    data: &Dataset,
    spec: ModelSpec,
    labels: &KnownLabels,
    options: &FitOptions,
    rng: &mut R,
) -> Result<InitState> {
    let (n, g) = (data.n(), spec.g);
    if g == 0 {
        return Err(CnError::InvalidParameter("G must be at least 1".into()));
    }
    let z = match strategy.kind {
        InitKind::RandomSoft => init_random_soft(n, g, rng),
        InitKind::RandomHard => init_random_hard(n, g, rng),
        InitKind::Kmeans => match kmeans_from_labels(data, g, labels) {
            Some(z) => z,
            None => init_kmeans(data, g, rng)?,
        },
        InitKind::Mixt => match init_mixt(data, spec, labels, options, rng) {
            Ok(start) => return Ok(start.state),
            Err(e) => {
                warn!("{} G={}: Gaussian start failed ({e}); using k-means", spec.code, g);
                init_kmeans(data, g, rng)?
            }
        },
        InitKind::Manual => {
            let z = strategy
                .start_z
                .clone()
                .ok_or_else(|| CnError::InvalidParameter("manual initialization requires a start z".into()))?;
            let state = InitState::new(z, strategy.start_v.clone());
            state.resp.validate(n, g)?;
            return Ok(state);
        }
    };
    Ok(InitState::new(z, strategy.start_v.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::StructureCode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn two_clouds(per: usize, gap: f64, seed: u64) -> (Dataset, Vec<usize>) {
        let mut r = rng(seed);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for k in 0..2 {
            for _ in 0..per {
                let shift = if k == 0 { 0.0 } else { gap };
                rows.push(vec![shift + crate::mvn::standard_normal(&mut r), crate::mvn::standard_normal(&mut r)]);
                truth.push(k);
            }
        }
        (Dataset::from_rows(&rows).unwrap(), truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let direct = a.iter().zip(b).all(|(x, y)| x == y);
        let swapped = a.iter().zip(b).all(|(x, y)| *x == 1 - *y);
        direct || swapped
    }

    #[test]
    fn single_group_is_all_ones() {
        assert!(init_random_soft(5, 1, &mut rng(1)).iter().all(|&x| x == 1.0));
        assert!(init_random_hard(5, 1, &mut rng(1)).iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let (d, _) = two_clouds(10, 10.0, 3);
        assert!(init_kmeans(&d, 1, &mut rng(1)).unwrap().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn random_soft_column_means() {
        let z = init_random_soft(100_000, 4, &mut rng(7));
        for k in 0..4 {
            let m = z.column(k).mean();
            assert!((0.24..=0.26).contains(&m), "{m}");
        }
        assert!(z.row_iter().all(|r| r.sum() == 1.0 && r.iter().filter(|&&x| x == 1.0).count() == 1));
    }

    #[test]
    fn random_hard_rows_are_stochastic() {
        let z = init_random_hard(100_000, 2, &mut rng(9));
        assert!(z.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(z.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
        let m = z.column(0).mean();
        assert!((0.49..=0.51).contains(&m), "{m}");
    }

    #[test]
    fn seeded_draws_repeat() {
        assert_eq!(init_random_soft(50, 3, &mut rng(4)), init_random_soft(50, 3, &mut rng(4)));
        assert_eq!(init_random_hard(50, 3, &mut rng(4)), init_random_hard(50, 3, &mut rng(4)));
    }

    #[test]
    fn kmeans_recovers_separated_clouds() {
        let (d, truth) = two_clouds(60, 10.0, 11);
        let z = init_kmeans(&d, 2, &mut rng(2)).unwrap();
        assert!(same_partition(&crate::classify::map_assign(&z), &truth));
    }

    #[test]
    fn kmeans_duplicates_share_assignment() {
        let (d, _) = two_clouds(20, 3.0, 5);
        let mut rows: Vec<Vec<f64>> = (0..d.n()).map(|i| d.row(i).to_vec()).collect();
        rows.extend(rows.clone());
        let dd = Dataset::from_rows(&rows).unwrap();
        let a = crate::classify::map_assign(&init_kmeans(&dd, 3, &mut rng(8)).unwrap());
        for i in 0..d.n() {
            assert_eq!(a[i], a[i + d.n()]);
        }
    }

    #[test]
    fn kmeans_rejects_too_few_rows() {
        let d = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(init_kmeans(&d, 3, &mut rng(0)).is_err());
    }

    #[test]
    fn mixt_posterior_near_truth_on_separated_clouds() {
        let (d, truth) = two_clouds(60, 10.0, 21);
        let spec = ModelSpec::new(StructureCode::EII, 2);
        let state = init_mixt(&d, spec, &KnownLabels::none(d.n()), &FitOptions::default(), &mut rng(3)).unwrap().state;
        let hard = crate::classify::map_assign(&state.resp.z);
        assert!(same_partition(&hard, &truth));
        for (i, &h) in hard.iter().enumerate() {
            assert!(state.resp.z[(i, h)] > 1.0 - 1e-3);
        }
        assert!(state.resp.v.iter().all(|&v| v == 1.0));
        assert!(state.eta0.iter().all(|&e| e == crate::engine::ETA_START));
        assert!(state.warm_scales.is_some());
    }

    #[test]
    fn mixt_single_group_is_all_ones() {
        let (d, _) = two_clouds(15, 2.0, 2);
        let spec = ModelSpec::new(StructureCode::VVV, 1);
        let state = init_mixt(&d, spec, &KnownLabels::none(d.n()), &FitOptions::default(), &mut rng(3)).unwrap().state;
        assert!(state.resp.z.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn manual_passes_matrices_through() {
        let (d, _) = two_clouds(3, 2.0, 2);
        let z = DMatrix::from_fn(6, 2, |i, k| if (i + k) % 2 == 0 { 0.7 } else { 0.3 });
        let v = DMatrix::from_fn(6, 2, |i, _| 0.1 * i as f64);
        let s = initialize(
            &InitStrategy::manual(z.clone(), Some(v.clone())),
            &d,
            ModelSpec::new(StructureCode::EII, 2),
            &KnownLabels::none(6),
            &FitOptions::default(),
            &mut rng(0),
        )
        .unwrap();
        assert_eq!(s.resp.z, z);
        assert_eq!(s.resp.v, v);
        let missing = InitStrategy::new(InitKind::Manual);
        assert!(initialize(&missing, &d, ModelSpec::new(StructureCode::EII, 2), &KnownLabels::none(6), &FitOptions::default(), &mut rng(0)).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in ["random.soft", "random.hard", "kmeans", "mixt", "manual"] {
            assert_eq!(name.parse::<InitKind>().unwrap().as_str(), name);
        }
        assert!("em".parse::<InitKind>().is_err());
    }
}
