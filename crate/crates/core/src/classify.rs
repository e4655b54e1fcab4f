//! MAP assignment, good/bad detection, and agreement tables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{label_levels, KnownLabels};
use crate::error::{CnError, Result};

/// Row-wise argmax (0-based). Ties go to the lowest index.
pub fn map_assign(z: &DMatrix<f64>) -> Vec<usize> {
    z.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    /// 1-based component index.
    pub group: usize,
    pub is_good: bool,
}

/// Cluster membership by MAP, then good iff `v̂` in that cluster exceeds 0.5.
pub fn detect(z: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<Detection>> {
    if z.shape() != v.shape() {
        return Err(CnError::DimensionMismatch(format!("z is {:?} but v is {:?}", z.shape(), v.shape())));
    }
    Ok(map_assign(z)
        .into_iter()
        .enumerate()
        .map(|(i, h)| Detection { group: h + 1, is_good: v[(i, h)] > 0.5 })
        .collect())
}

/// Cross-tabulation of a given partition against a fitted one.
///
/// Rows are the given labels; columns are fitted components `1..=G` followed
/// by a final "bad points" column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub row_labels: Vec<String>,
    pub groups: usize,
    pub counts: Vec<Vec<usize>>,
}

impl AgreementTable {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn bad_column(&self) -> usize {
        self.groups
    }

    pub fn row(&self, label: &str) -> Option<&[usize]> {
        self.row_labels.iter().position(|l| l == label).map(|i| self.counts[i].as_slice())
    }

    pub fn render(&self) -> String {
        let width = self.row_labels.iter().map(|l| l.len()).max().unwrap_or(0).max(8);
        let mut header = format!("{:width$}", "given");
        for g in 1..=self.groups {
            header.push_str(&format!(" {g:>5}"));
        }
        header.push_str("  bad points");
        let mut out = vec![header];
        for (label, counts) in self.row_labels.iter().zip(&self.counts) {
            let mut line = format!("{label:width$}");
            for c in &counts[..self.groups] {
                line.push_str(&format!(" {c:>5}"));
            }
            line.push_str(&format!("  {:>10}", counts[self.groups]));
            out.push(line);
        }
        out.join("\n")
    }
}

/// Agreement of `given` labels with fitted detections. Labeled rows are
/// skipped, so in classification mode only the unlabeled rows are compared.
pub fn agree(detections: &[Detection], groups: usize, given: &[String], labels: &KnownLabels) -> Result<AgreementTable> {
    if given.len() != detections.len() {
        return Err(CnError::DimensionMismatch(format!(
            "{} given labels for {} observations",
            given.len(),
            detections.len()
        )));
    }
    if !labels.is_empty() && labels.len() != detections.len() {
        return Err(CnError::DimensionMismatch("known labels do not cover the data".into()));
    }
    let compared: Vec<usize> =
        (0..given.len()).filter(|&i| labels.is_empty() || labels.get(i).is_none()).collect();
    let used: Vec<String> = compared.iter().map(|&i| given[i].clone()).collect();
    let row_labels = label_levels(&used);
    let mut counts = vec![vec![0usize; groups + 1]; row_labels.len()];
    for &i in &compared {
        let r = row_labels.iter().position(|l| *l == given[i]).expect("level collected above");
        let d = &detections[i];
        let c = if d.is_good { d.group - 1 } else { groups };
        counts[r][c] += 1;
    }
    Ok(AgreementTable { row_labels, groups, counts })
}
