//! Concept activation vectors (CAVs) in latent activation space.
//!
//! The crate covers the whole pipeline on plain activation matrices:
//!
//! - [`fit`]: per-concept baseline CAVs (ridge and pattern objectives).
//! - [`orthogonalize`]: joint fine-tuning of all CAVs under a data term plus a
//!   (optionally pair-weighted) non-orthogonality penalty, with AUROC-based
//!   early exit.
//! - [`metrics`]: per-concept orthogonality, rank-based AUROC and history.
//! - [`steering`]: concept insertion/removal and collateral-damage reports.
//! - [`synth`]: synthetic activations with controlled label co-occurrence and
//!   known ground-truth concept directions.
//! - [`format`]: text/binary matrix files, label files, CAV bundles and
//!   history tables.

pub mod cav;
pub mod error;
pub mod fit;
pub mod format;
pub mod matrix;
pub mod metrics;
pub mod orthogonalize;
pub mod steering;
pub mod synth;

pub use cav::{cosine, cosine_matrix, row_normalize, CavSet, CosineMatrix};
pub use error::{CavError, Result};
pub use fit::{fit_all, fit_pattern, fit_ridge, FitMethod, PatternFit, RidgeFit};
pub use matrix::{ActivationMatrix, LabelMatrix};
pub use metrics::{auroc, concept_scores, evaluate, orthogonality, MetricsHistory, MetricsSnapshot};
pub use orthogonalize::{
    optimize, EarlyExit, Init, OptimizationResult, Optimizer, OrthConfig, WeightMatrix,
};
pub use steering::{
    collateral_report, estimate_tau, insert_concept, remove_concept, steer, SteeringMode,
    SteeringOutcome, SteeringReport,
};
pub use synth::{generate, Cooccurrence, DirectionMode, GeneratorConfig, GroundTruth};
