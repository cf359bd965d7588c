//! Activation editing along a CAV and the collateral effect on other concepts.
//!
//! Scores are raw dot products `c_jᵀz`, so a step δ along the unit target
//! direction ĉ moves concept j's score by exactly `cos(c_j, ĉ)·‖c_j‖·δ`.
//! Entangled CAVs therefore leak edits into each other; orthogonal ones do not.

use nalgebra::DMatrix;

use crate::cav::CavSet;
use crate::error::{CavError, Result};
use crate::matrix::{check_rows, ActivationMatrix, LabelMatrix};
use crate::metrics::concept_scores;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteeringMode {
    /// Add `step` times the unit CAV.
    Insert { step: f64 },
    /// Project onto the level `tau` along the unit CAV. `None` estimates the
    /// level from the target's negative samples.
    Remove { tau: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringReport {
    pub target_concept: usize,
    /// Mean |Δ score| per concept; the target's own entry is 0 and reported
    /// in `target_score_delta` instead.
    pub per_concept_score_delta: Vec<f64>,
    pub target_score_delta: f64,
}

impl SteeringReport {
    /// Sum of the non-target deltas.
    pub fn collateral(&self) -> f64 {
        self.per_concept_score_delta.iter().sum()
    }
}

/// Edited activations plus the report and the level actually used.
#[derive(Debug, Clone)]
pub struct SteeringOutcome {
    pub edited: ActivationMatrix,
    pub report: SteeringReport,
    pub tau: Option<f64>,
}

fn unit(cav: &[f64]) -> Result<Vec<f64>> {
    let norm = cav.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(CavError::DegenerateVector {
            concept: "steering target".into(),
        });
    }
    Ok(cav.iter().map(|x| x / norm).collect())
}

fn check_dim(z: &[f64], cav: &[f64]) -> Result<()> {
    if z.len() != cav.len() {
        return Err(CavError::InvalidMatrix(format!(
            "activation has length {} but CAV has length {}",
            z.len(),
            cav.len()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `z + step·ĉ`. A zero step returns `z` bit for bit.
pub fn insert_concept(z: &[f64], cav: &[f64], step: f64) -> Result<Vec<f64>> {
    check_dim(z, cav)?;
    let u = unit(cav)?;
    if step == 0.0 {
        return Ok(z.to_vec());
    }
    Ok(z.iter().zip(&u).map(|(a, b)| a + step * b).collect())
}

/// `z − ĉ(ĉᵀz − τ)`, after which `ĉᵀz′ = τ`.
///
/// A residual within the rounding error of the dot product is treated as
/// zero, which makes repeated application exactly idempotent.
pub fn remove_concept(z: &[f64], cav: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_dim(z, cav)?;
    let u = unit(cav)?;
    Ok(remove_unit(z, &u, tau))
}

fn remove_unit(z: &[f64], u: &[f64], tau: f64) -> Vec<f64> {
    let residual = dot(u, z) - tau;
    let magnitude: f64 = u.iter().zip(z).map(|(a, b)| (a * b).abs()).sum::<f64>() + tau.abs();
    let tolerance = 4.0 * (z.len() + 2) as f64 * f64::EPSILON * magnitude;
    if residual.abs() <= tolerance {
        return z.to_vec();
    }
    z.iter().zip(u).map(|(a, b)| a - b * residual).collect()
}

/// Mean projection `ĉᵀz` over samples labelled −1.
pub fn estimate_tau(z: &ActivationMatrix, t: &[i8], cav: &[f64]) -> Result<f64> {
    if t.len() != z.samples() {
        return Err(CavError::InvalidMatrix(format!(
            "{} labels for {} samples",
            t.len(),
            z.samples()
        )));
    }
    let u = unit(cav)?;
    let projections = concept_scores(z, &u)?;
    let negatives: Vec<f64> = projections
        .iter()
        .zip(t)
        .filter(|(_, &l)| l < 0)
        .map(|(p, _)| *p)
        .collect();
    if negatives.is_empty() {
        return Err(CavError::SingleClassConcept {
            concept: "steering target".into(),
        });
    }
    Ok(negatives.iter().sum::<f64>() / negatives.len() as f64)
}

/// Apply the steering op to every row, the target chosen by index.
pub fn steer(
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    cavs: &CavSet,
    target: usize,
    mode: SteeringMode,
) -> Result<SteeringOutcome> {
    check_rows(z, labels)?;
    if cavs.len() != labels.concepts() || cavs.dim() != z.dim() {
        return Err(CavError::InvalidMatrix(format!(
            "CAV set is {}x{} but data has {} concepts and dimension {}",
            cavs.len(),
            cavs.dim(),
            labels.concepts(),
            z.dim()
        )));
    }
    if target >= cavs.len() {
        return Err(CavError::InvalidMatrix(format!("target index {target} out of range")));
    }
    let name = &cavs.names()[target];
    let cav = cavs.vector(target);
    let u = unit(cav.as_slice()).map_err(|e| e.for_concept(name))?;

    let tau = match mode {
        SteeringMode::Insert { .. } => None,
        SteeringMode::Remove { tau: Some(tau) } => Some(tau),
        SteeringMode::Remove { tau: None } => Some(
            estimate_tau(z, labels.column(target), cav.as_slice()).map_err(|e| e.for_concept(name))?,
        ),
    };
    if let Some(tau) = tau {
        if !tau.is_finite() {
            return Err(CavError::InvalidConfig(format!("tau must be finite, got {tau}")));
        }
    }

    let k = z.samples();
    let m = z.dim();
    let mut edited = DMatrix::zeros(k, m);
    for i in 0..k {
        let row: Vec<f64> = z.data().row(i).iter().copied().collect();
        let out = match (mode, tau) {
            (SteeringMode::Insert { step }, _) => {
                if step == 0.0 {
                    row
                } else {
                    row.iter().zip(&u).map(|(a, b)| a + step * b).collect()
                }
            }
            (_, Some(tau)) => remove_unit(&row, &u, tau),
            (_, None) => unreachable!("removal always resolves tau"),
        };
        for (j, v) in out.into_iter().enumerate() {
            edited[(i, j)] = v;
        }
    }
    let edited = ActivationMatrix::new(edited)?;
    let report = score_deltas(z, &edited, cavs, target)?;
    Ok(SteeringOutcome {
        edited,
        report,
        tau,
    })
}

/// Mean |Δ score| per concept between two activation matrices.
fn score_deltas(
    before: &ActivationMatrix,
    after: &ActivationMatrix,
    cavs: &CavSet,
    target: usize,
) -> Result<SteeringReport> {
    let k = before.samples() as f64;
    let mut deltas = Vec::with_capacity(cavs.len());
    for c in 0..cavs.len() {
        let cav = cavs.vector(c);
        let a = concept_scores(before, cav.as_slice())?;
        let b = concept_scores(after, cav.as_slice())?;
        deltas.push(a.iter().zip(&b).map(|(x, y)| (y - x).abs()).sum::<f64>() / k);
    }
    let target_score_delta = deltas[target];
    deltas[target] = 0.0;
    Ok(SteeringReport {
        target_concept: target,
        per_concept_score_delta: deltas,
        target_score_delta,
    })
}

/// Steer every sample along the target CAV and report the score changes.
pub fn collateral_report(
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    cavs: &CavSet,
    target: usize,
    mode: SteeringMode,
) -> Result<SteeringReport> {
    steer(z, labels, cavs, target, mode).map(|o| o.report)
}
