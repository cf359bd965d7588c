//! Orthogonality, rank-based AUROC and per-epoch metric history.

use serde::{Deserialize, Serialize};

use crate::cav::{cosine_matrix, CavSet, CosineMatrix};
use crate::error::{CavError, Result};
use crate::matrix::{check_rows, ActivationMatrix, LabelMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub epoch: usize,
    pub per_concept_auroc: Vec<f64>,
    pub per_concept_orthogonality: Vec<f64>,
    pub macro_auroc: f64,
    pub avg_orthogonality: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsHistory {
    snapshots: Vec<MetricsSnapshot>,
}

impl MetricsHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a snapshot; epochs must be strictly increasing.
    pub fn push(&mut self, snapshot: MetricsSnapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.epoch <= last.epoch {
                return Err(CavError::InvalidConfig(format!(
                    "snapshot epoch {} does not follow {}",
                    snapshot.epoch, last.epoch
                )));
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn snapshots(&self) -> &[MetricsSnapshot] {
        &self.snapshots
    }

    pub fn first(&self) -> Option<&MetricsSnapshot> {
        self.snapshots.first()
    }

    pub fn last(&self) -> Option<&MetricsSnapshot> {
        self.snapshots.last()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub(crate) fn truncate(&mut self, len: usize) {
        self.snapshots.truncate(len);
    }
}

/// O_i = 1 − mean_{j≠i} |cos(c_i, c_j)|.
pub fn orthogonality(cos: &CosineMatrix, i: usize) -> Result<f64> {
    let n = cos.len();
    if n < 2 {
        return Err(CavError::UndefinedMetric(
            "orthogonality needs at least two concepts".into(),
        ));
    }
    if i >= n {
        return Err(CavError::InvalidMatrix(format!("concept index {i} out of range")));
    }
    let off: f64 = (0..n).filter(|&j| j != i).map(|j| cos.get(i, j).abs()).sum();
    Ok((1.0 - off / (n - 1) as f64).clamp(0.0, 1.0))
}

/// Dot product of every activation row with `cav`. Bias is not applied.
pub fn concept_scores(z: &ActivationMatrix, cav: &[f64]) -> Result<Vec<f64>> {
    if cav.len() != z.dim() {
        return Err(CavError::InvalidMatrix(format!(
            "CAV has length {} but activations have dimension {}",
            cav.len(),
            z.dim()
        )));
    }
    Ok(z.data()
        .row_iter()
        .map(|row| row.iter().zip(cav).map(|(a, b)| a * b).sum())
        .collect())
}

/// Exact AUROC from the Mann-Whitney rank sum, midranks for ties.
pub fn auroc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CavError::InvalidMatrix(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CavError::SingleClassConcept {
            concept: "label column".into(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CavError::InvalidMatrix("NaN score".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&idx| labels[idx] > 0).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// AUROC of each CAV's scores against its own label column.
pub fn per_concept_auroc(cavs: &CavSet, z: &ActivationMatrix, labels: &LabelMatrix) -> Result<Vec<f64>> {
    check_rows(z, labels)?;
    if cavs.len() != labels.concepts() {
        return Err(CavError::InvalidMatrix(format!(
            "{} CAVs for {} label columns",
            cavs.len(),
            labels.concepts()
        )));
    }
    (0..cavs.len())
        .map(|c| {
            let scores = concept_scores(z, cavs.vector(c).as_slice())?;
            auroc(&scores, labels.column(c)).map_err(|e| e.for_concept(&labels.names()[c]))
        })
        .collect()
}

pub fn per_concept_orthogonality(cavs: &CavSet) -> Result<Vec<f64>> {
    let cos = cosine_matrix(cavs)?;
    (0..cos.len()).map(|i| orthogonality(&cos, i)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Full metric snapshot for a CAV set on (Z, T).
pub fn evaluate(
    cavs: &CavSet,
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    epoch: usize,
) -> Result<MetricsSnapshot> {
    let per_concept_auroc = per_concept_auroc(cavs, z, labels)?;
    let per_concept_orthogonality = per_concept_orthogonality(cavs)?;
    Ok(MetricsSnapshot {
        epoch,
        macro_auroc: mean(&per_concept_auroc),
        avg_orthogonality: mean(&per_concept_orthogonality),
        per_concept_auroc,
        per_concept_orthogonality,
    })
}
