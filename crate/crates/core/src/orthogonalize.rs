//! Joint fine-tuning of all CAVs under a data term plus a non-orthogonality
//! penalty.
//!
//! The objective for the raw n×m CAV matrix C is
//!
//! ```text
//! L(C) = L_data(C) + α · ‖W ⊙ (ĈĈᵀ − I)‖_F²
//! L_data(C) = (1/k) Σ_c ‖Z − t_c c_cᵀ − 1 b_cᵀ‖²
//! ```
//!
//! where Ĉ is C with unit rows (so ĈĈᵀ is the cosine matrix) and W is the
//! symmetric pair-weight matrix (β on target pairs, 1 elsewhere). The offsets
//! b_c are not optimisation variables: for any C the optimal offset is the
//! residual column mean, so they are eliminated in closed form. The data term
//! is averaged over samples so that step sizes do not scale with k.
//!
//! With centred activations Z̃ and centred labels t̃_c the data term reduces to
//! `(‖Z̃‖² − 2 c_c·p_c + s_c‖c_c‖²) / k` per concept, with `p_c = Z̃ᵀt̃_c` and
//! `s_c = ‖t̃_c‖²`. The optimiser uses that form; [`cav_data_loss`] evaluates
//! the residuals directly.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cav::{unit_rows, CavSet};
use crate::error::{CavError, Result};
use crate::fit::projection_bias;
use crate::matrix::{check_rows, ActivationMatrix, LabelMatrix};
use crate::metrics::{evaluate, MetricsHistory, MetricsSnapshot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Start from supplied CAVs (typically the baseline fit).
    Pretrained,
    /// Standard-normal entries, rows scaled to unit norm.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Full-batch gradient descent with a fixed learning rate.
    GradientDescent,
    /// Full-batch Adam. Step sizes do not depend on gradient scale, which
    /// keeps very large α values usable.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Early-exit thresholds on AUROC. Unset fields are ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EarlyExit {
    pub min_avg_auroc: Option<f64>,
    pub max_avg_drop: Option<f64>,
    pub max_single_drop: Option<f64>,
}

impl EarlyExit {
    pub fn is_empty(&self) -> bool {
        self.min_avg_auroc.is_none() && self.max_avg_drop.is_none() && self.max_single_drop.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init: Init,
    /// Unordered concept-index pairs that get weight `beta`.
    pub target_pairs: Vec<(usize, usize)>,
    pub beta: f64,
    pub eval_every: usize,
    pub early_exit: EarlyExit,
    pub optimizer: Optimizer,
}

impl Default for OrthConfig {
    /// lr 0.001, α 0.01, 300 epochs, fine-tuning from pretrained CAVs.
    fn default() -> Self {
        Self {
            alpha: 0.01,
            learning_rate: 0.001,
            epochs: 300,
            init: Init::Pretrained,
            target_pairs: Vec::new(),
            beta: 1.0,
            eval_every: 10,
            early_exit: EarlyExit::default(),
            optimizer: Optimizer::GradientDescent,
        }
    }
}

impl OrthConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(CavError::InvalidConfig(msg));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be finite and > 0, got {}", self.beta));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        for &(i, j) in &self.target_pairs {
            if i >= n || j >= n {
                return bad(format!("target pair ({i}, {j}) out of range for {n} concepts"));
            }
            if i == j {
                return bad(format!("target pair ({i}, {j}) must join two different concepts"));
            }
        }
        let thresholds = [
            self.early_exit.min_avg_auroc,
            self.early_exit.max_avg_drop,
            self.early_exit.max_single_drop,
        ];
        if thresholds.iter().flatten().any(|v| !v.is_finite()) {
            return bad("early-exit thresholds must be finite".into());
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
            }
        }
        Ok(())
    }

    pub fn weight_matrix(&self, n: usize) -> Result<WeightMatrix> {
        WeightMatrix::new(n, &self.target_pairs, self.beta)
    }
}

/// Symmetric pair weights: β on target pairs (both orientations), 1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    data: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn uniform(n: usize) -> Self {
        Self {
            data: DMatrix::from_element(n, n, 1.0),
        }
    }

    pub fn new(n: usize, target_pairs: &[(usize, usize)], beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(CavError::InvalidConfig(format!("beta must be > 0, got {beta}")));
        }
        let mut data = DMatrix::from_element(n, n, 1.0);
        for &(i, j) in target_pairs {
            if i >= n || j >= n || i == j {
                return Err(CavError::InvalidConfig(format!("invalid target pair ({i}, {j})")));
            }
            data[(i, j)] = beta;
            data[(j, i)] = beta;
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// ‖W ⊙ (ĈĈᵀ − I)‖² and its gradient with respect to the raw rows of C.
fn orth_loss_and_grad(
    vectors: &DMatrix<f64>,
    names: &[String],
    weights: &WeightMatrix,
    with_grad: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    let n = vectors.nrows();
    if weights.len() != n {
        return Err(CavError::InvalidMatrix(format!(
            "weight matrix is {0}x{0} but there are {n} CAVs",
            weights.len()
        )));
    }
    let unit = unit_rows(vectors, names)?;
    let gram = &unit * unit.transpose();
    // W² ⊙ (G − I) with the diagonal pinned at zero (cos(c, c) = 1 exactly)
    let weighted = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let w = weights.data[(i, j)];
            w * w * gram[(i, j)]
        }
    });
    let loss = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| {
            let d = weights.data[(i, j)] * gram[(i, j)];
            d * d
        })
        .sum();
    if !with_grad {
        return Ok((loss, None));
    }

    // dL/dĈ = 4 (W² ⊙ (G − I)) Ĉ, then back through c ↦ c/‖c‖
    let grad_unit = 4.0 * &weighted * &unit;
    let mut grad = DMatrix::zeros(n, vectors.ncols());
    for i in 0..n {
        let u = unit.row(i);
        let g = grad_unit.row(i);
        let radial = g.dot(&u);
        let norm = vectors.row(i).norm();
        grad.set_row(i, &((g - u * radial) / norm));
    }
    Ok((loss, Some(grad)))
}

/// ‖ĈĈᵀ − I‖² on row-normalised CAVs.
pub fn orth_loss(cavs: &CavSet) -> Result<f64> {
    weighted_orth_loss(cavs, &WeightMatrix::uniform(cavs.len()))
}

/// ‖W ⊙ (ĈĈᵀ − I)‖² on row-normalised CAVs.
pub fn weighted_orth_loss(cavs: &CavSet, weights: &WeightMatrix) -> Result<f64> {
    orth_loss_and_grad(cavs.vectors(), cavs.names(), weights, false).map(|(l, _)| l)
}

fn check_shapes(cavs: &CavSet, z: &ActivationMatrix, labels: &LabelMatrix) -> Result<()> {
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
    Ok(())
}

/// Per-sample mean of Σ_c ‖z_i − t_ic c_c − b_c‖², offsets at their optimum
/// b_c = z̄ − t̄_c c_c. Evaluated directly from residuals.
pub fn cav_data_loss(cavs: &CavSet, z: &ActivationMatrix, labels: &LabelMatrix) -> Result<f64> {
    check_shapes(cavs, z, labels)?;
    let zc = z.centered();
    let k = z.samples();
    let mut total = 0.0;
    for c in 0..cavs.len() {
        let t = labels.column_f64(c);
        let tc = t.add_scalar(-t.mean());
        let w = cavs.vectors().row(c);
        for i in 0..k {
            total += (zc.row(i) - w * tc[i]).norm_squared();
        }
    }
    Ok(total / k as f64)
}

/// Data term plus α times the (weighted) orthogonality penalty.
pub fn total_loss(
    cavs: &CavSet,
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    config: &OrthConfig,
) -> Result<f64> {
    config.validate(cavs.len())?;
    let data = cav_data_loss(cavs, z, labels)?;
    if config.alpha == 0.0 {
        return Ok(data);
    }
    let orth = weighted_orth_loss(cavs, &config.weight_matrix(cavs.len())?)?;
    Ok(data + config.alpha * orth)
}

/// Analytic gradient of [`total_loss`] with respect to the raw CAV matrix.
pub fn loss_gradient(
    cavs: &CavSet,
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    config: &OrthConfig,
) -> Result<DMatrix<f64>> {
    check_shapes(cavs, z, labels)?;
    config.validate(cavs.len())?;
    let objective = Objective::new(z, labels, config)?;
    objective
        .loss_and_grad(cavs.vectors(), cavs.names())
        .map(|(_, g)| g)
}

/// Precomputed sufficient statistics of the data term.
struct Objective {
    samples: f64,
    /// Σ over concepts of ‖Z̃‖², identical per concept.
    centered_energy: f64,
    /// Row c holds Z̃ᵀt̃_c.
    cross: DMatrix<f64>,
    /// ‖t̃_c‖² per concept.
    label_energy: Vec<f64>,
    weights: WeightMatrix,
    alpha: f64,
}

impl Objective {
    fn new(z: &ActivationMatrix, labels: &LabelMatrix, config: &OrthConfig) -> Result<Self> {
        let n = labels.concepts();
        let zc = z.centered();
        let mut cross = DMatrix::zeros(n, z.dim());
        let mut label_energy = Vec::with_capacity(n);
        for c in 0..n {
            let t = labels.column_f64(c);
            let tc = t.add_scalar(-t.mean());
            cross.set_row(c, &zc.tr_mul(&tc).transpose());
            label_energy.push(tc.norm_squared());
        }
        Ok(Self {
            samples: z.samples() as f64,
            centered_energy: zc.norm_squared(),
            cross,
            label_energy,
            weights: config.weight_matrix(n)?,
            alpha: config.alpha,
        })
    }

    fn loss_and_grad(&self, vectors: &DMatrix<f64>, names: &[String]) -> Result<(f64, DMatrix<f64>)> {
        let n = vectors.nrows();
        let mut loss = 0.0;
        let mut grad = DMatrix::zeros(n, vectors.ncols());
        for c in 0..n {
            let w = vectors.row(c);
            let p = self.cross.row(c);
            let s = self.label_energy[c];
            loss += self.centered_energy - 2.0 * w.dot(&p) + s * w.norm_squared();
            grad.set_row(c, &((w * (2.0 * s) - p * 2.0) / self.samples));
        }
        loss /= self.samples;
        if self.alpha > 0.0 {
            let (orth, orth_grad) = orth_loss_and_grad(vectors, names, &self.weights, true)?;
            loss += self.alpha * orth;
            if let Some(g) = orth_grad {
                grad += g * self.alpha;
            }
        }
        Ok((loss, grad))
    }
}

/// True when the latest snapshot violates any configured threshold relative
/// to the first (baseline) snapshot. Comparisons are strict.
pub fn early_exit_check(history: &MetricsHistory, thresholds: &EarlyExit) -> bool {
    let (Some(baseline), Some(current)) = (history.first(), history.last()) else {
        return false;
    };
    if let Some(min) = thresholds.min_avg_auroc {
        if current.macro_auroc < min {
            return true;
        }
    }
    if let Some(max_drop) = thresholds.max_avg_drop {
        if baseline.macro_auroc - current.macro_auroc > max_drop {
            return true;
        }
    }
    if let Some(max_drop) = thresholds.max_single_drop {
        let worst = baseline
            .per_concept_auroc
            .iter()
            .zip(&current.per_concept_auroc)
            .map(|(b, c)| b - c)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > max_drop {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub final_cavs: CavSet,
    pub history: MetricsHistory,
    pub stopped_early: bool,
    pub stop_epoch: usize,
    /// Snapshot that tripped the early-exit check, if any. Not part of
    /// `history`.
    pub rejected: Option<MetricsSnapshot>,
}

/// Random unit-row CAV matrix.
pub fn random_init(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::from_fn(n, m, |_, _| 0.0);
    // fill row-major so the draw order does not depend on storage layout
    for i in 0..n {
        for j in 0..m {
            data[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    for mut row in data.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    data
}

enum Stepper {
    Plain,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        first: DMatrix<f64>,
        second: DMatrix<f64>,
        t: i32,
    },
}

impl Stepper {
    fn new(optimizer: Optimizer, n: usize, m: usize) -> Self {
        match optimizer {
            Optimizer::GradientDescent => Stepper::Plain,
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => Stepper::Adam {
                beta1,
                beta2,
                epsilon,
                first: DMatrix::zeros(n, m),
                second: DMatrix::zeros(n, m),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) {
        match self {
            Stepper::Plain => *params -= grad * lr,
            Stepper::Adam {
                beta1,
                beta2,
                epsilon,
                first,
                second,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grad.iter())
                    .zip(first.iter_mut().zip(second.iter_mut()))
                {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + *epsilon);
                }
            }
        }
    }
}

fn finish(vectors: DMatrix<f64>, z: &ActivationMatrix, names: &[String]) -> Result<CavSet> {
    let means = z.column_means();
    let biases = vectors
        .row_iter()
        .map(|r| projection_bias(&r.transpose(), &means))
        .collect();
    CavSet::new(vectors, biases, names.to_vec())
}

/// Fine-tune CAVs on (Z, T), evaluating on the same data.
pub fn optimize(
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    config: &OrthConfig,
    initial: Option<&CavSet>,
) -> Result<OptimizationResult> {
    optimize_with_eval(z, labels, config, initial, None)
}

/// Fine-tune CAVs on (Z, T); metrics are computed on `eval` when given.
pub fn optimize_with_eval(
    z: &ActivationMatrix,
    labels: &LabelMatrix,
    config: &OrthConfig,
    initial: Option<&CavSet>,
    eval: Option<(&ActivationMatrix, &LabelMatrix)>,
) -> Result<OptimizationResult> {
    check_rows(z, labels)?;
    let n = labels.concepts();
    let m = z.dim();
    config.validate(n)?;
    let names = labels.names();
    let (eval_z, eval_labels) = eval.unwrap_or((z, labels));
    check_rows(eval_z, eval_labels)?;
    if eval_labels.concepts() != n || eval_z.dim() != m {
        return Err(CavError::InvalidMatrix(
            "evaluation data does not match training shapes".into(),
        ));
    }

    let mut vectors = match config.init {
        Init::Pretrained => {
            let init = initial.ok_or_else(|| {
                CavError::InvalidConfig("pretrained init requires initial CAVs".into())
            })?;
            check_shapes(init, z, labels)?;
            init.vectors().clone()
        }
        Init::Random { seed } => random_init(n, m, seed),
    };

    let objective = Objective::new(z, labels, config)?;
    let mut stepper = Stepper::new(config.optimizer, n, m);

    let mut history = MetricsHistory::new();
    let snapshot = evaluate(&finish(vectors.clone(), z, names)?, eval_z, eval_labels, 0)?;
    history.push(snapshot)?;
    if early_exit_check(&history, &config.early_exit) {
        // nothing compliant to fall back to: hand back the starting point
        return Ok(OptimizationResult {
            final_cavs: finish(vectors, z, names)?,
            history,
            stopped_early: true,
            stop_epoch: 0,
            rejected: None,
        });
    }
    let mut last_ok = (vectors.clone(), 0usize);

    for epoch in 1..=config.epochs {
        let (loss, grad) = objective.loss_and_grad(&vectors, names)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(CavError::NonFiniteLoss { epoch });
        }
        stepper.step(&mut vectors, &grad, config.learning_rate);
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(CavError::NonFiniteLoss { epoch });
        }

        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let cavs = finish(vectors.clone(), z, names)?;
            let snapshot = evaluate(&cavs, eval_z, eval_labels, epoch)?;
            history.push(snapshot)?;
            if early_exit_check(&history, &config.early_exit) {
                let rejected = history.last().cloned();
                history.truncate(history.len() - 1);
                let (best, stop_epoch) = last_ok;
                return Ok(OptimizationResult {
                    final_cavs: finish(best, z, names)?,
                    history,
                    stopped_early: true,
                    stop_epoch,
                    rejected,
                });
            }
            last_ok = (vectors.clone(), epoch);
        }
    }

    Ok(OptimizationResult {
        final_cavs: finish(vectors, z, names)?,
        history,
        stopped_early: false,
        stop_epoch: config.epochs,
        rejected: None,
    })
}
