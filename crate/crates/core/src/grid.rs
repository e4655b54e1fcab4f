//! Fitting a grid of (structure, G) candidates in parallel.
//!
//! Every candidate draws its random numbers from its own ChaCha stream keyed
//! by the seed and the candidate itself, so the results do not depend on the
//! worker count, the scheduling order or which other candidates are in the grid.

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, KnownLabels};
use crate::engine::{fit_single, FailedFit, FitOptions, FitOutcome, InitState, ModelSpec};
use crate::error::{CnError, Result};
use crate::init::{init_kmeans, init_mixt, initialize, InitKind, InitStrategy};
use crate::structures::StructureCode;

/// Codes that coincide when `G = 1`, and the one that is actually fitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Equivalence {
    pub representative: StructureCode,
    pub members: Vec<StructureCode>,
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub codes: Vec<StructureCode>,
    pub groups: Vec<usize>,
    pub init: InitStrategy,
    pub options: FitOptions,
    pub labels: KnownLabels,
    /// Extra random.soft starts per candidate; the best log-likelihood wins.
    pub restarts: usize,
    /// `None` uses rayon's default worker count.
    pub workers: Option<usize>,
}

impl GridConfig {
    pub fn new(data: &Dataset) -> Self {
        Self {
            codes: StructureCode::ALL.to_vec(),
            groups: vec![1, 2, 3],
            init: InitStrategy::new(InitKind::Kmeans),
            options: FitOptions::default(),
            labels: KnownLabels::none(data.n()),
            restarts: 0,
            workers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridRun {
    /// Ordered by `G`, then by the position of the code in the request.
    pub outcomes: Vec<FitOutcome>,
    pub equivalences: Vec<Equivalence>,
}

/// The candidate list after the `G = 1` collapse.
pub fn candidates(codes: &[StructureCode], groups: &[usize]) -> (Vec<ModelSpec>, Vec<Equivalence>) {
    let mut specs = Vec::new();
    let mut equivalences: Vec<Equivalence> = Vec::new();
    let mut seen_groups = Vec::new();
    for &g in groups {
        if seen_groups.contains(&g) {
            continue;
        }
        seen_groups.push(g);
        for &code in codes {
            let fitted = if g == 1 { code.single_group_representative() } else { code };
            if g == 1 {
                match equivalences.iter_mut().find(|e| e.representative == fitted) {
                    Some(e) if !e.members.contains(&code) => e.members.push(code),
                    Some(_) => {}
                    None => equivalences.push(Equivalence { representative: fitted, members: vec![code] }),
                }
            }
            let spec = ModelSpec::new(fitted, g);
            if !specs.contains(&spec) {
                specs.push(spec);
            }
        }
    }
    equivalences.retain(|e| e.members.len() > 1 || e.members[0] != e.representative);
    (specs, equivalences)
}

/// RNG stream of one start of one candidate.
pub fn candidate_rng(seed: u64, spec: ModelSpec, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = (spec.g as u64) << 16 | (spec.code.index() as u64) << 8;
    rng.set_stream(key | start as u64);
    rng
}

fn failed(spec: ModelSpec, error: CnError) -> FitOutcome {
    FitOutcome::Failed(FailedFit { code: spec.code, g: spec.g, error, loglik_trace: Vec::new(), n_iterations: 0 })
}

/// Keeps the fit with the larger log-likelihood; a fit beats a failure.
fn better(a: Option<FitOutcome>, b: FitOutcome) -> FitOutcome {
    match (a, b) {
        (None, b) => b,
        (Some(FitOutcome::Fitted(a)), FitOutcome::Fitted(b)) => FitOutcome::Fitted(if b.loglik > a.loglik { b } else { a }),
        (Some(FitOutcome::Failed(_)), b @ FitOutcome::Fitted(_)) => b,
        (Some(a), _) => a,
    }
}

/// Contaminated fits from a Gaussian-mixture start and from the k-means
/// partition that seeded it. The Gaussian posterior can sit in a basin where
/// one component covers the noise, which the contaminated model does not
/// need; the k-means start avoids it.
fn fit_from_mixt(data: &Dataset, spec: ModelSpec, config: &GridConfig, rng: &mut ChaCha8Rng) -> FitOutcome {
    match init_mixt(data, spec, &config.labels, &config.options, rng) {
        Ok(start) => {
            let from_gaussian = fit_single(data, spec, &config.labels, start.state, &config.options);
            let from_kmeans =
                fit_single(data, spec, &config.labels, InitState::new(start.kmeans_z, None), &config.options);
            better(Some(from_gaussian), from_kmeans)
        }
        Err(e) => {
            warn!("{} G={}: Gaussian start failed ({e}); using k-means", spec.code, spec.g);
            match init_kmeans(data, spec.g, rng) {
                Ok(z) => fit_single(data, spec, &config.labels, InitState::new(z, None), &config.options),
                Err(e) => failed(spec, e),
            }
        }
    }
}

/// Fits one candidate from the configured start and any random restarts,
/// keeping the largest log-likelihood.
pub fn fit_candidate(data: &Dataset, spec: ModelSpec, config: &GridConfig) -> FitOutcome {
    let mut starts = vec![config.init.clone()];
    starts.extend((0..config.restarts).map(|_| InitStrategy::new(InitKind::RandomSoft)));
    let mut best: Option<FitOutcome> = None;
    for (s, strategy) in starts.iter().enumerate() {
        let mut rng = candidate_rng(config.options.seed, spec, s);
        let outcome = if strategy.kind == InitKind::Mixt {
            fit_from_mixt(data, spec, config, &mut rng)
        } else {
            match initialize(strategy, data, spec, &config.labels, &config.options, &mut rng) {
                Ok(init) => fit_single(data, spec, &config.labels, init, &config.options),
                Err(error) => failed(spec, error),
            }
        };
        debug!("{} G={} start {s} ({}): {:?}", spec.code, spec.g, strategy.kind, outcome.fitted().map(|f| f.loglik));
        best = Some(better(best, outcome));
    }
    best.expect("at least one start")
}

/// Fits every candidate. Fails only on invalid configuration; failures of
/// individual candidates are reported in the outcomes.
pub fn fit_grid(data: &Dataset, config: &GridConfig) -> Result<GridRun> {
    config.options.validate()?;
    if config.codes.is_empty() || config.groups.is_empty() {
        return Err(CnError::InvalidParameter("the model grid is empty".into()));
    }
    if config.groups.contains(&0) {
        return Err(CnError::InvalidParameter("G must be at least 1".into()));
    }
    if config.restarts >= 256 {
        return Err(CnError::InvalidParameter("at most 255 restarts are supported".into()));
    }
    let max_g = *config.groups.iter().max().expect("non-empty");
    config.labels.validate(data.n(), max_g)?;
    if let Some(max) = config.labels.max_group() {
        if let Some(&g) = config.groups.iter().find(|&&g| g <= max) {
            return Err(CnError::InvalidParameter(format!(
                "G = {g} is smaller than the largest known label {}",
                max + 1
            )));
        }
    }
    if config.init.kind == InitKind::Manual && config.groups.len() > 1 {
        return Err(CnError::InvalidParameter("manual initialization needs a single G".into()));
    }
    let (specs, equivalences) = candidates(&config.codes, &config.groups);
    info!("fitting {} candidate models", specs.len());
    let run = || specs.par_iter().map(|&spec| fit_candidate(data, spec, config)).collect::<Vec<_>>();
    let outcomes = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| CnError::InvalidParameter(format!("cannot start {w} workers: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(GridRun { outcomes, equivalences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;
    use StructureCode::*;

    #[test]
    fn single_group_collapse() {
        let (specs, eq) = candidates(&StructureCode::ALL, &[1, 2]);
        let g1: Vec<_> = specs.iter().filter(|s| s.g == 1).map(|s| s.code).collect();
        assert_eq!(g1, vec![EII, EEI, EEE]);
        assert_eq!(specs.len(), 3 + 14);
        assert_eq!(eq.len(), 3);
        assert_eq!(eq[0].members, vec![EII, VII]);
        assert_eq!(eq[1].members.len(), 4);
        assert_eq!(eq[2].members.len(), 8);
    }

    #[test]
    fn collapse_maps_requested_code() {
        let (specs, eq) = candidates(&[VVV], &[1]);
        assert_eq!(specs, vec![ModelSpec::new(EEE, 1)]);
        assert_eq!(eq, vec![Equivalence { representative: EEE, members: vec![VVV] }]);
        let (specs, eq) = candidates(&[EII], &[1, 1]);
        assert_eq!(specs.len(), 1);
        assert!(eq.is_empty());
    }

    #[test]
    fn streams_differ_per_candidate_and_start() {
        let a = candidate_rng(5, ModelSpec::new(EII, 2), 0).next_u64();
        let b = candidate_rng(5, ModelSpec::new(EII, 3), 0).next_u64();
        let c = candidate_rng(5, ModelSpec::new(VII, 2), 0).next_u64();
        let d = candidate_rng(5, ModelSpec::new(EII, 2), 1).next_u64();
        let e = candidate_rng(5, ModelSpec::new(EII, 2), 0).next_u64();
        assert!(a != b && a != c && a != d);
        assert_eq!(a, e);
    }
}
