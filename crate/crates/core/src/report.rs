//! The JSON run report.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::classify::{agree, detect, AgreementTable};
use crate::data::Dataset;
use crate::engine::{FitOptions, FitOutcome, FitResult};
use crate::error::Result;
use crate::grid::{Equivalence, GridConfig, GridRun};
use crate::selection::{best_model, Criteria, Criterion, ModelFilter};
use crate::structures::{ReportedDecomposition, StructureCode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
    pub settings: Settings,
    /// Codes that coincide at `G = 1`; only the representative is fitted.
    pub equivalences: Vec<Equivalence>,
    pub models: Vec<ModelReport>,
    pub best: BTreeMap<String, BestEntry>,
    pub selected: Selected,
    pub agreement: Option<AgreementReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub models: Vec<StructureCode>,
    #[serde(rename = "G")]
    pub groups: Vec<usize>,
    pub init: String,
    pub restarts: usize,
    pub labeled: usize,
    #[serde(flatten)]
    pub options: FitOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub pi: f64,
    pub alpha: f64,
    pub eta: f64,
    pub mu: Vec<f64>,
    /// Full scale matrix, row by row.
    pub sigma: Vec<Vec<f64>>,
    /// Largest eigenvalue of Σ.
    pub lambda: f64,
    /// Eigenvalues of Σ divided by `lambda`, decreasing.
    pub delta: Vec<f64>,
    /// Eigenvectors of Σ, one per entry, in the order of `delta`.
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub code: StructureCode,
    #[serde(rename = "G")]
    pub g: usize,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub loglik: Option<f64>,
    pub q: Option<usize>,
    pub criteria: Option<Criteria>,
    pub converged: bool,
    pub iterations: usize,
    pub components: Vec<ComponentReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BestEntry {
    pub code: StructureCode,
    #[serde(rename = "G")]
    pub g: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Observation {
    pub z: Vec<f64>,
    /// 1-based MAP component.
    pub group: usize,
    pub is_good: bool,
    pub labeled: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selected {
    pub criterion: Criterion,
    pub code: StructureCode,
    #[serde(rename = "G")]
    pub g: usize,
    pub bad_points: usize,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    #[serde(flatten)]
    pub table: AgreementTable,
    pub compared: usize,
    pub text: String,
}

fn components(fit: &FitResult) -> Vec<ComponentReport> {
    let psi = &fit.psi;
    (0..psi.groups())
        .map(|k| {
            let sigma = &psi.sigma[k];
            let dec = ReportedDecomposition::from_sigma(sigma);
            ComponentReport {
                pi: psi.pi[k],
                alpha: psi.alpha[k],
                eta: psi.eta[k],
                mu: psi.mu[k].iter().copied().collect(),
                sigma: sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
                lambda: dec.lambda,
                delta: dec.delta,
                gamma: dec.gamma,
            }
        })
        .collect()
}

pub fn model_report(outcome: &FitOutcome) -> ModelReport {
    match outcome {
        FitOutcome::Fitted(fit) => ModelReport {
            code: fit.code,
            g: fit.g,
            status: "fitted",
            error: None,
            loglik: Some(fit.loglik),
            q: Some(fit.q),
            criteria: Some(fit.criteria),
            converged: fit.converged,
            iterations: fit.n_iterations,
            components: components(fit),
        },
        FitOutcome::Failed(fail) => ModelReport {
            code: fail.code,
            g: fail.g,
            status: "failed",
            error: Some(fail.error.to_string()),
            loglik: None,
            q: None,
            criteria: None,
            converged: false,
            iterations: fail.n_iterations,
            components: Vec::new(),
        },
    }
}

/// Assembles the report. Fails when no candidate was fitted.
pub fn build_report(
    data: &Dataset,
    config: &GridConfig,
    run: &GridRun,
    criterion: Criterion,
    truth: Option<&[String]>,
) -> Result<Report> {
    let filter = ModelFilter::default();
    let selected_fit = best_model(&run.outcomes, criterion, &filter)?;
    let mut best = BTreeMap::new();
    for c in Criterion::ALL {
        let fit = best_model(&run.outcomes, c, &filter)?;
        best.insert(c.to_string(), BestEntry { code: fit.code, g: fit.g, value: fit.criteria.get(c) });
    }
    let detections = detect(&selected_fit.resp.z, &selected_fit.resp.v)?;
    let observations = detections
        .iter()
        .enumerate()
        .map(|(i, d)| Observation {
            z: selected_fit.resp.z.row(i).iter().copied().collect(),
            group: d.group,
            is_good: d.is_good,
            labeled: config.labels.get(i).is_some(),
        })
        .collect();
    let agreement = match truth {
        Some(given) => {
            let table = agree(&detections, selected_fit.g, given, &config.labels)?;
            Some(AgreementReport { compared: table.total(), text: table.render(), table })
        }
        None => None,
    };
    Ok(Report {
        schema: SCHEMA_VERSION,
        n: data.n(),
        p: data.p(),
        columns: data.columns().to_vec(),
        settings: Settings {
            models: config.codes.clone(),
            groups: config.groups.clone(),
            init: config.init.kind.to_string(),
            restarts: config.restarts,
            labeled: config.labels.labeled_count(),
            options: config.options.clone(),
        },
        equivalences: run.equivalences.clone(),
        models: run.outcomes.iter().map(model_report).collect(),
        best,
        selected: Selected {
            criterion,
            code: selected_fit.code,
            g: selected_fit.g,
            bad_points: detections.iter().filter(|d| !d.is_good).count(),
            observations,
        },
        agreement,
    })
}

/// One line per criterion, e.g. `BIC: EEI G=2 (-3738.04)`.
pub fn summary(report: &Report) -> String {
    let mut lines: Vec<String> = report
        .best
        .iter()
        .map(|(c, b)| format!("{c:>5}: {} G={} ({:.2})", b.code, b.g, b.value))
        .collect();
    let failed = report.models.iter().filter(|m| m.status == "failed").count();
    lines.push(format!("{} models fitted, {failed} failed", report.models.len() - failed));
    lines.push(format!(
        "selected by {}: {} G={} with {} bad points",
        report.selected.criterion, report.selected.code, report.selected.g, report.selected.bad_points
    ));
    if let Some(a) = &report.agreement {
        lines.push(a.text.clone());
    }
    lines.join("\n")
}
