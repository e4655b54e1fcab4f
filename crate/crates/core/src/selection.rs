//! Free-parameter counting, information criteria, and best-model selection.
//!
//! All criteria are in "larger is better" form, e.g. `BIC = 2l − q ln n`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classify::map_assign;
use crate::data::KnownLabels;
use crate::engine::{FitOutcome, FitResult};
use crate::error::{CnError, Result};
use crate::structures::{sigma_param_count, StructureCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    AIC,
    AIC3,
    AICc,
    AICu,
    AWE,
    BIC,
    CAIC,
    ICL,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::AIC,
        Criterion::AIC3,
        Criterion::AICc,
        Criterion::AICu,
        Criterion::AWE,
        Criterion::BIC,
        Criterion::CAIC,
        Criterion::ICL,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::AIC => "AIC",
            Criterion::AIC3 => "AIC3",
            Criterion::AICc => "AICc",
            Criterion::AICu => "AICu",
            Criterion::AWE => "AWE",
            Criterion::BIC => "BIC",
            Criterion::CAIC => "CAIC",
            Criterion::ICL => "ICL",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = CnError;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CnError::InvalidParameter(format!("unknown criterion '{s}'")))
    }
}

/// The eight criterion values of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    #[serde(rename = "AIC")]
    pub aic: f64,
    #[serde(rename = "AIC3")]
    pub aic3: f64,
    #[serde(rename = "AICc")]
    pub aicc: f64,
    #[serde(rename = "AICu")]
    pub aicu: f64,
    #[serde(rename = "AWE")]
    pub awe: f64,
    #[serde(rename = "BIC")]
    pub bic: f64,
    #[serde(rename = "CAIC")]
    pub caic: f64,
    #[serde(rename = "ICL")]
    pub icl: f64,
    /// Set when `n ≤ q + 1`, in which case AICc and AICu are `-inf`.
    pub small_sample: bool,
}

impl Criteria {
    pub fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::AIC => self.aic,
            Criterion::AIC3 => self.aic3,
            Criterion::AICc => self.aicc,
            Criterion::AICu => self.aicu,
            Criterion::AWE => self.awe,
            Criterion::BIC => self.bic,
            Criterion::CAIC => self.caic,
            Criterion::ICL => self.icl,
        }
    }
}

/// Number of free parameters of a fitted model.
pub fn free_param_count(code: StructureCode, g: usize, p: usize, alpha_fixed: bool, eta_fixed: bool) -> usize {
    let mut q = (g - 1) + g * p + sigma_param_count(code, g, p);
    if !alpha_fixed {
        q += g;
    }
    if !eta_fixed {
        q += g;
    }
    q
}

/// `Σ_unlabeled Σ_g MAP(ẑ_ig) ln ẑ_ig`, never positive.
pub fn map_entropy_term(z: &DMatrix<f64>, labels: &KnownLabels) -> f64 {
    map_assign(z)
        .iter()
        .enumerate()
        .filter(|(i, _)| labels.get(*i).is_none())
        .map(|(i, &h)| z[(i, h)].ln())
        .sum()
}

pub fn criteria(loglik: f64, q: usize, n: usize, z: &DMatrix<f64>, labels: &KnownLabels) -> Criteria {
    let (qf, nf) = (q as f64, n as f64);
    let two_l = 2.0 * loglik;
    let ln_n = nf.ln();
    let aic = two_l - 2.0 * qf;
    let bic = two_l - qf * ln_n;
    let small_sample = nf <= qf + 1.0;
    let (aicc, aicu) = if small_sample {
        (f64::NEG_INFINITY, f64::NEG_INFINITY)
    } else {
        let aicc = aic - 2.0 * qf * (qf + 1.0) / (nf - qf - 1.0);
        (aicc, aicc - nf * (nf / (nf - qf - 1.0)).ln())
    };
    Criteria {
        aic,
        aic3: two_l - 3.0 * qf,
        aicc,
        aicu,
        awe: two_l - 2.0 * qf * (1.5 + ln_n),
        bic,
        caic: two_l - qf * (1.0 + ln_n),
        icl: bic + map_entropy_term(z, labels),
        small_sample,
    }
}

/// Restricts which fitted models take part in selection. Empty sets mean "any".
#[derive(Debug, Clone, Default)]
pub struct ModelFilter {
    pub groups: Vec<usize>,
    pub codes: Vec<StructureCode>,
}

impl ModelFilter {
    pub fn accepts(&self, code: StructureCode, g: usize) -> bool {
        (self.groups.is_empty() || self.groups.contains(&g)) && (self.codes.is_empty() || self.codes.contains(&code))
    }
}

/// The successful fit maximizing `criterion`.
///
/// Ties go to the smaller parameter count, then to the lexicographically
/// smaller code, then to the smaller `G`.
pub fn best_model<'a>(outcomes: &'a [FitOutcome], criterion: Criterion, filter: &ModelFilter) -> Result<&'a FitResult> {
    let mut best: Option<&FitResult> = None;
    let mut reasons = Vec::new();
    for outcome in outcomes {
        match outcome {
            FitOutcome::Fitted(fit) if filter.accepts(fit.code, fit.g) => {
                let value = fit.criteria.get(criterion);
                if value.is_nan() {
                    continue;
                }
                best = match best {
                    None => Some(fit),
                    Some(cur) => {
                        let cv = cur.criteria.get(criterion);
                        let better = value > cv
                            || (value == cv
                                && (fit.q, fit.code.as_str(), fit.g) < (cur.q, cur.code.as_str(), cur.g));
                        Some(if better { fit } else { cur })
                    }
                };
            }
            FitOutcome::Failed(fail) if filter.accepts(fail.code, fail.g) => {
                reasons.push(format!("{} G={}: {}", fail.code, fail.g, fail.error));
            }
            _ => {}
        }
    }
    best.ok_or_else(|| {
        if reasons.is_empty() {
            CnError::AllFailed("no fitted model passes the filter".into())
        } else {
            CnError::AllFailed(reasons.join("; "))
        }
    })
}
