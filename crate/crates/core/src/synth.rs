//! Synthetic activations with controlled label co-occurrence.
//!
//! Labels start as independent Bernoulli draws. Each co-occurrence rule
//! `(source, target, p)` then redraws the target column conditioned on the
//! source: +1 with probability p when the source is positive, and with the
//! rate that keeps the target's marginal unchanged otherwise. Activations
//! follow a linear model `z = Σ_c t_c s_c d_c + σε` over known unit
//! directions `d_c`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CavError, Result};
use crate::matrix::{default_names, ActivationMatrix, LabelMatrix};

const LABEL_STREAM: u64 = 0;
const DIRECTION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    #[default]
    Orthonormal,
    RandomUnit,
}

/// `P(t_target = +1 | t_source = +1) = p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub source: usize,
    pub target: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub positive_rate: Vec<f64>,
    #[serde(default)]
    pub cooccurrence: Vec<Cooccurrence>,
    pub signal_strengths: Vec<f64>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub direction_mode: DirectionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl GeneratorConfig {
    /// Independent labels at rate 0.5, unit signal, orthonormal directions.
    pub fn independent(n: usize, m: usize, k: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            m,
            n,
            k,
            seed,
            positive_rate: vec![0.5; n],
            cooccurrence: Vec::new(),
            signal_strengths: vec![1.0; n],
            noise_sigma,
            direction_mode: DirectionMode::Orthonormal,
            names: None,
        }
    }

    /// Add one co-occurrence rule per `(source, target)` pair, all at `p`.
    pub fn with_pairs(mut self, pairs: &[(usize, usize)], p: f64) -> Self {
        self.cooccurrence
            .extend(pairs.iter().map(|&(source, target)| Cooccurrence { source, target, p }));
        self
    }

    /// Same signal strength for every concept.
    pub fn with_signal(mut self, strength: f64) -> Self {
        self.signal_strengths = vec![strength; self.n];
        self
    }

    pub fn concept_names(&self) -> Vec<String> {
        self.names.clone().unwrap_or_else(|| default_names(self.n))
    }

    /// Structural checks plus analytic feasibility of every rule. Returns
    /// the order in which rules must be applied.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(CavError::InvalidConfig(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive".into());
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.direction_mode == DirectionMode::Orthonormal && self.m < self.n {
            return bad(format!(
                "orthonormal directions need m >= n, got m = {} and n = {}",
                self.m, self.n
            ));
        }
        if self.positive_rate.len() != self.n {
            return bad(format!("positive_rate has {} entries, expected {}", self.positive_rate.len(), self.n));
        }
        if let Some((i, r)) = self
            .positive_rate
            .iter()
            .enumerate()
            .find(|(_, r)| !(0.0..=1.0).contains(*r))
        {
            return bad(format!("positive_rate[{i}] = {r} is not in [0, 1]"));
        }
        if self.signal_strengths.len() != self.n {
            return bad(format!(
                "signal_strengths has {} entries, expected {}",
                self.signal_strengths.len(),
                self.n
            ));
        }
        if let Some((i, s)) = self
            .signal_strengths
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return bad(format!("signal_strengths[{i}] = {s} must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma = {} must be >= 0", self.noise_sigma));
        }
        if let Some(names) = &self.names {
            if names.len() != self.n {
                return bad(format!("names has {} entries, expected {}", names.len(), self.n));
            }
        }

        let mut has_rule = vec![false; self.n];
        let mut pairs = std::collections::HashSet::new();
        for (idx, rule) in self.cooccurrence.iter().enumerate() {
            let (i, j) = (rule.source, rule.target);
            if i >= self.n || j >= self.n {
                return bad(format!("cooccurrence[{idx}]: index out of range for {} concepts", self.n));
            }
            if i == j {
                return bad(format!("cooccurrence[{idx}]: source and target are both {i}"));
            }
            if !(0.0..=1.0).contains(&rule.p) {
                return bad(format!("cooccurrence[{idx}].p = {} is not in [0, 1]", rule.p));
            }
            if !pairs.insert((i.min(j), i.max(j))) {
                return bad(format!("cooccurrence[{idx}]: pair ({i}, {j}) listed twice"));
            }
            if std::mem::replace(&mut has_rule[j], true) {
                return bad(format!("cooccurrence[{idx}]: concept {j} is already the target of another rule"));
            }
            complementary_rate(self.positive_rate[i], self.positive_rate[j], rule.p).map_err(|reason| {
                CavError::InfeasibleCorrelation {
                    source_idx: i,
                    target: j,
                    reason,
                }
            })?;
        }
        self.rule_order()
    }

    /// Topological order of rules: a rule runs after the rule that targets
    /// its source.
    fn rule_order(&self) -> Result<Vec<usize>> {
        let mut rule_for_target = vec![None; self.n];
        for (idx, rule) in self.cooccurrence.iter().enumerate() {
            rule_for_target[rule.target] = Some(idx);
        }
        let mut order = Vec::with_capacity(self.cooccurrence.len());
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.cooccurrence.len()];
        fn visit(
            idx: usize,
            rules: &[Cooccurrence],
            rule_for_target: &[Option<usize>],
            state: &mut [u8],
            order: &mut Vec<usize>,
        ) -> Result<()> {
            match state[idx] {
                2 => return Ok(()),
                1 => {
                    return Err(CavError::InvalidConfig(
                        "cooccurrence rules form a cycle".into(),
                    ))
                }
                _ => {}
            }
            state[idx] = 1;
            if let Some(parent) = rule_for_target[rules[idx].source] {
                visit(parent, rules, rule_for_target, state, order)?;
            }
            state[idx] = 2;
            order.push(idx);
            Ok(())
        }
        for idx in 0..self.cooccurrence.len() {
            visit(idx, &self.cooccurrence, &rule_for_target, &mut state, &mut order)?;
        }
        Ok(order)
    }
}

/// Rate for the target when the source is negative, chosen so that the
/// target keeps marginal `q_target`.
fn complementary_rate(q_source: f64, q_target: f64, p: f64) -> std::result::Result<f64, String> {
    if q_source >= 1.0 {
        // the source is never negative; only p matters
        return if (p - q_target).abs() <= 1e-12 {
            Ok(q_target)
        } else {
            Err(format!(
                "source is always positive, so the target marginal would become {p} instead of {q_target}"
            ))
        };
    }
    let r = (q_target - p * q_source) / (1.0 - q_source);
    const SLACK: f64 = 1e-12;
    if !(-SLACK..=1.0 + SLACK).contains(&r) {
        return Err(format!(
            "P(target | source) = {p} with marginals {q_source} (source) and {q_target} (target) \
             needs P(target | not source) = {r:.4}, outside [0, 1]"
        ));
    }
    Ok(r.clamp(0.0, 1.0))
}

/// True concept directions used to generate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub directions: DMatrix<f64>,
    pub config: GeneratorConfig,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn sample_labels(config: &GeneratorConfig) -> Result<LabelMatrix> {
    let order = config.validate()?;
    let (n, k) = (config.n, config.k);
    let mut rng = stream(config.seed, LABEL_STREAM);
    let mut positive = vec![vec![false; k]; n];
    for sample in 0..k {
        for (c, column) in positive.iter_mut().enumerate() {
            column[sample] = rng.random::<f64>() < config.positive_rate[c];
        }
    }
    for idx in order {
        let rule = config.cooccurrence[idx];
        let r = complementary_rate(
            config.positive_rate[rule.source],
            config.positive_rate[rule.target],
            rule.p,
        )
        .expect("validated");
        let source = positive[rule.source].clone();
        for (dst, &src) in positive[rule.target].iter_mut().zip(&source) {
            let rate = if src { rule.p } else { r };
            *dst = rng.random::<f64>() < rate;
        }
    }
    let columns = positive
        .into_iter()
        .map(|col| col.into_iter().map(|p| if p { 1 } else { -1 }).collect())
        .collect();
    LabelMatrix::from_columns(columns, config.concept_names())
}

fn sample_directions(config: &GeneratorConfig) -> DMatrix<f64> {
    let (n, m) = (config.n, config.m);
    let mut rng = stream(config.seed, DIRECTION_STREAM);
    let mut gaussian = DMatrix::zeros(m, n);
    for c in 0..n {
        for j in 0..m {
            gaussian[(j, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut directions = match config.direction_mode {
        DirectionMode::Orthonormal => gaussian.qr().q().transpose(),
        DirectionMode::RandomUnit => gaussian.transpose(),
    };
    for mut row in directions.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    directions
}

pub fn sample_activations(labels: &LabelMatrix, config: &GeneratorConfig) -> Result<(ActivationMatrix, GroundTruth)> {
    config.validate()?;
    if labels.concepts() != config.n || labels.samples() != config.k {
        return Err(CavError::InvalidConfig(format!(
            "labels are {}x{} but the config asks for {}x{}",
            labels.samples(),
            labels.concepts(),
            config.k,
            config.n
        )));
    }
    let directions = sample_directions(config);
    let mut rng = stream(config.seed, NOISE_STREAM);
    let mut z = DMatrix::zeros(config.k, config.m);
    for i in 0..config.k {
        for j in 0..config.m {
            let noise: f64 = StandardNormal.sample(&mut rng);
            z[(i, j)] = config.noise_sigma * noise;
        }
        for c in 0..config.n {
            let coef = f64::from(labels.get(i, c)) * config.signal_strengths[c];
            for j in 0..config.m {
                z[(i, j)] += coef * directions[(c, j)];
            }
        }
    }
    Ok((
        ActivationMatrix::new(z)?,
        GroundTruth {
            directions,
            config: config.clone(),
        },
    ))
}

/// Labels, activations and ground truth in one call.
pub fn generate(config: &GeneratorConfig) -> Result<(ActivationMatrix, LabelMatrix, GroundTruth)> {
    let labels = sample_labels(config)?;
    let (z, truth) = sample_activations(&labels, config)?;
    Ok((z, labels, truth))
}

/// Empirical P(t_target = +1 | t_source = +1); `None` without positive sources.
pub fn conditional_frequency(labels: &LabelMatrix, source: usize, target: usize) -> Option<f64> {
    let src = labels.column(source);
    let tgt = labels.column(target);
    let given = src.iter().filter(|&&s| s > 0).count();
    if given == 0 {
        return None;
    }
    let both = src.iter().zip(tgt).filter(|(&s, &t)| s > 0 && t > 0).count();
    Some(both as f64 / given as f64)
}

/// Pearson correlation between two label columns.
pub fn label_correlation(labels: &LabelMatrix, a: usize, b: usize) -> f64 {
    let x = labels.column_f64(a);
    let y = labels.column_f64(b);
    let xc = x.add_scalar(-x.mean());
    let yc = y.add_scalar(-y.mean());
    xc.dot(&yc) / (xc.norm() * yc.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cav::cosine;
    use crate::fit::fit_pattern;
    use approx::assert_abs_diff_eq;

    fn pair_config(k: usize, p: f64) -> GeneratorConfig {
        GeneratorConfig {
            cooccurrence: vec![Cooccurrence {
                source: 0,
                target: 1,
                p,
            }],
            ..GeneratorConfig::independent(2, 4, k, 0.1, 11)
        }
    }

    #[test]
    fn independent_labels_are_uncorrelated() {
        let labels = sample_labels(&GeneratorConfig::independent(5, 8, 5000, 0.1, 3)).unwrap();
        for a in 0..5 {
            for b in a + 1..5 {
                let r = label_correlation(&labels, a, b);
                assert!(r.abs() <= 0.1, "corr({a}, {b}) = {r}");
            }
        }
    }

    #[test]
    fn conditional_frequency_hits_target() {
        let labels = sample_labels(&pair_config(20000, 0.7)).unwrap();
        let freq = conditional_frequency(&labels, 0, 1).unwrap();
        assert!((freq - 0.7).abs() <= 0.02, "{freq}");
        let marginal = labels.column(1).iter().filter(|&&t| t > 0).count() as f64 / 20000.0;
        assert!((marginal - 0.5).abs() <= 0.02, "{marginal}");
    }

    #[test]
    fn perfect_coupling_copies_the_column() {
        let labels = sample_labels(&pair_config(500, 1.0)).unwrap();
        assert_eq!(labels.column(0), labels.column(1));
    }

    #[test]
    fn infeasible_rule_is_rejected() {
        let mut cfg = pair_config(100, 0.9);
        cfg.positive_rate = vec![0.8, 0.2];
        assert!(matches!(
            sample_labels(&cfg),
            Err(CavError::InfeasibleCorrelation { source_idx: 0, target: 1, .. })
        ));
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut cfg = pair_config(100, 0.7);
        cfg.positive_rate[1] = 1.3;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("positive_rate[1]"), "{msg}");

        let mut cfg = pair_config(100, 0.7);
        cfg.m = 1;
        assert!(matches!(cfg.validate(), Err(CavError::InvalidConfig(_))));
        cfg.direction_mode = DirectionMode::RandomUnit;
        assert!(cfg.validate().is_ok());

        let mut cfg = pair_config(100, 0.7);
        cfg.cooccurrence.push(Cooccurrence {
            source: 1,
            target: 0,
            p: 0.7,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chained_rules_run_in_dependency_order() {
        let mut cfg = GeneratorConfig::independent(3, 4, 400, 0.1, 5);
        cfg.cooccurrence = vec![
            Cooccurrence {
                source: 1,
                target: 2,
                p: 1.0,
            },
            Cooccurrence {
                source: 0,
                target: 1,
                p: 1.0,
            },
        ];
        assert_eq!(cfg.validate().unwrap(), vec![1, 0]);
        let labels = sample_labels(&cfg).unwrap();
        assert_eq!(labels.column(0), labels.column(2));

        cfg.cooccurrence.push(Cooccurrence {
            source: 2,
            target: 0,
            p: 0.5,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = pair_config(300, 0.7);
        let (z1, l1, g1) = generate(&cfg).unwrap();
        let (z2, l2, g2) = generate(&cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(z1, z2);
        assert_eq!(g1, g2);
        let other = GeneratorConfig { seed: 12, ..cfg };
        assert_ne!(generate(&other).unwrap().0, z1);
    }

    #[test]
    fn noise_free_single_concept_sits_on_two_points() {
        let mut cfg = GeneratorConfig::independent(1, 3, 50, 0.0, 9);
        cfg.signal_strengths = vec![2.5];
        let (z, labels, truth) = generate(&cfg).unwrap();
        for i in 0..50 {
            let t = f64::from(labels.get(i, 0));
            for j in 0..3 {
                assert_abs_diff_eq!(z.data()[(i, j)], t * 2.5 * truth.directions[(0, j)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn directions_are_unit_and_orthonormal_when_asked() {
        let cfg = GeneratorConfig::independent(5, 7, 10, 0.1, 1);
        let d = sample_directions(&cfg);
        assert!((&d * d.transpose() - DMatrix::identity(5, 5)).amax() < 1e-12);
        let cfg = GeneratorConfig {
            direction_mode: DirectionMode::RandomUnit,
            ..cfg
        };
        let d = sample_directions(&cfg);
        for row in d.row_iter() {
            assert_abs_diff_eq!(row.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_free_pattern_recovers_directions() {
        let (z, labels, truth) = generate(&GeneratorConfig::independent(3, 6, 400, 0.0, 21)).unwrap();
        for c in 0..3 {
            let fit = fit_pattern(&z, labels.column(c)).unwrap();
            let d: Vec<f64> = truth.directions.row(c).iter().copied().collect();
            let cos = cosine(fit.weights.as_slice(), &d).unwrap();
            // exact up to the sample cross-correlation of independent labels
            assert!(cos > 0.97, "concept {c}: {cos}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = pair_config(100, 0.7);
        let text = toml::to_string(&cfg).unwrap();
        let back: GeneratorConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal = "m = 4\nn = 2\nk = 100\nseed = 1\npositive_rate = [0.5, 0.5]\n\
                       signal_strengths = [1.0, 1.0]\nnoise_sigma = 0.1\n";
        let parsed: GeneratorConfig = toml::from_str(minimal).unwrap();
        assert_eq!(parsed.direction_mode, DirectionMode::Orthonormal);
        assert!(parsed.cooccurrence.is_empty());
    }
}
