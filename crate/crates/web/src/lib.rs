//! Browser demo: generate a shortcut-laden synthetic dataset, look at the
//! baseline CAV cosines, orthogonalize, and compare steering collateral.
//!
//! Every exported method returns a JSON string. The logic lives in
//! [`Session`] so it can be tested natively; [`Demo`] only converts errors.

use orthocav::{
    cosine_matrix, evaluate, fit_all, generate, optimize, steer, ActivationMatrix, CavSet, FitMethod, GeneratorConfig,
    LabelMatrix, Optimizer, OrthConfig, SteeringMode,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, orthocav::CavError>;

#[derive(Debug, Serialize)]
pub struct CavSummary {
    pub names: Vec<String>,
    /// Row-major n×n.
    pub cosines: Vec<Vec<f64>>,
    pub auroc: Vec<f64>,
    pub orthogonality: Vec<f64>,
    pub macro_auroc: f64,
    pub avg_orthogonality: f64,
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub epoch: Vec<usize>,
    pub macro_auroc: Vec<f64>,
    pub avg_orthogonality: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub curve: Curve,
    pub stopped_early: bool,
    pub result: CavSummary,
}

#[derive(Debug, Serialize)]
pub struct Collateral {
    pub names: Vec<String>,
    pub target: usize,
    pub baseline: Vec<f64>,
    pub orthogonalized: Vec<f64>,
    pub baseline_total: f64,
    pub orthogonalized_total: f64,
}

/// One generated dataset, its pattern baseline and the latest
/// orthogonalized CAVs.
pub struct Session {
    z: ActivationMatrix,
    labels: LabelMatrix,
    baseline: CavSet,
    tuned: Option<CavSet>,
}

impl Session {
    /// `n` concepts where concept `i` drives concept `i + n/2` with
    /// probability `p`.
    pub fn new(n: usize, m: usize, k: usize, p: f64, signal: f64, seed: u64) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = (0..n / 2).map(|i| (i, i + n / 2)).collect();
        let config = GeneratorConfig::independent(n, m, k, 0.1, seed)
            .with_pairs(&pairs, p)
            .with_signal(signal);
        let (z, labels, _) = generate(&config)?;
        let baseline = fit_all(&z, &labels, FitMethod::Pattern)?;
        Ok(Self { z, labels, baseline, tuned: None })
    }

    fn summarize(&self, cavs: &CavSet) -> Result<CavSummary> {
        let cos = cosine_matrix(cavs)?;
        let snap = evaluate(cavs, &self.z, &self.labels, 0)?;
        let n = cavs.len();
        Ok(CavSummary {
            names: cavs.names().to_vec(),
            cosines: (0..n).map(|i| (0..n).map(|j| cos.get(i, j)).collect()).collect(),
            auroc: snap.per_concept_auroc,
            orthogonality: snap.per_concept_orthogonality,
            macro_auroc: snap.macro_auroc,
            avg_orthogonality: snap.avg_orthogonality,
        })
    }

    pub fn baseline(&self) -> Result<CavSummary> {
        self.summarize(&self.baseline)
    }

    /// Fine-tune from the baseline and keep the result for steering.
    pub fn orthogonalize(&mut self, alpha: f64, learning_rate: f64, epochs: usize, adam: bool) -> Result<RunSummary> {
        let config = OrthConfig {
            alpha,
            learning_rate,
            epochs,
            eval_every: (epochs / 30).max(1),
            optimizer: if adam { Optimizer::adam() } else { Optimizer::GradientDescent },
            ..OrthConfig::default()
        };
        let out = optimize(&self.z, &self.labels, &config, Some(&self.baseline))?;
        let snaps = out.history.snapshots();
        let curve = Curve {
            epoch: snaps.iter().map(|s| s.epoch).collect(),
            macro_auroc: snaps.iter().map(|s| s.macro_auroc).collect(),
            avg_orthogonality: snaps.iter().map(|s| s.avg_orthogonality).collect(),
        };
        let result = self.summarize(&out.final_cavs)?;
        self.tuned = Some(out.final_cavs);
        Ok(RunSummary { curve, stopped_early: out.stopped_early, result })
    }

    /// Remove `target` from every sample with both CAV sets and report the
    /// mean score change of each other concept.
    pub fn collateral(&self, target: usize) -> Result<Collateral> {
        let tuned = self.tuned.as_ref().ok_or_else(|| {
            orthocav::CavError::InvalidConfig("run orthogonalize before comparing collateral".into())
        })?;
        let mode = SteeringMode::Remove { tau: None };
        let a = steer(&self.z, &self.labels, &self.baseline, target, mode)?.report;
        let b = steer(&self.z, &self.labels, tuned, target, mode)?.report;
        Ok(Collateral {
            names: self.baseline.names().to_vec(),
            target,
            baseline_total: a.collateral(),
            orthogonalized_total: b.collateral(),
            baseline: a.per_concept_score_delta,
            orthogonalized: b.per_concept_score_delta,
        })
    }
}

fn js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, m: usize, k: usize, p: f64, signal: f64, seed: u64) -> std::result::Result<Demo, JsError> {
        Session::new(n, m, k, p, signal, seed)
            .map(|session| Demo { session })
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn baseline(&self) -> std::result::Result<String, JsError> {
        js(self.session.baseline())
    }

    pub fn orthogonalize(&mut self, alpha: f64, lr: f64, epochs: usize, adam: bool) -> std::result::Result<String, JsError> {
        js(self.session.orthogonalize(alpha, lr, epochs, adam))
    }

    pub fn collateral(&self, target: usize) -> std::result::Result<String, JsError> {
        js(self.session.collateral(target))
    }
}
