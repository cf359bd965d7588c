//! Baseline per-concept CAV estimation.
//!
//! Both estimators work on mean-centred data, which eliminates the bias term
//! in closed form:
//!
//! - ridge: minimise ‖t − Zw − b‖² + ‖w‖² (bias unregularised),
//! - pattern: minimise ‖Z − t wᵀ − 1bᵀ‖², i.e. explain the activations as a
//!   linear function of the label. The solution is the label/feature
//!   covariance rescaled by the label variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cav::CavSet;
use crate::error::{CavError, Result};
use crate::matrix::{check_rows, ActivationMatrix, LabelMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Ridge,
    Pattern,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Ridge => "ridge",
            FitMethod::Pattern => "pattern",
        }
    }
}

impl std::str::FromStr for FitMethod {
    type Err = CavError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(FitMethod::Ridge),
            "pattern" => Ok(FitMethod::Pattern),
            other => Err(CavError::InvalidConfig(format!(
                "unknown fit method `{other}` (expected ridge or pattern)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: DVector<f64>,
    pub bias: f64,
}

/// Pattern solution; `offset` is the full per-feature offset vector b.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternFit {
    pub weights: DVector<f64>,
    pub offset: DVector<f64>,
}

fn label_vector(z: &ActivationMatrix, t: &[i8]) -> Result<DVector<f64>> {
    if t.len() != z.samples() {
        return Err(CavError::InvalidMatrix(format!(
            "{} labels for {} samples",
            t.len(),
            z.samples()
        )));
    }
    if let Some(bad) = t.iter().find(|&&v| v != 1 && v != -1) {
        return Err(CavError::InvalidMatrix(format!("label {bad} is not -1 or +1")));
    }
    if !(t.contains(&1) && t.contains(&-1)) {
        return Err(CavError::SingleClassConcept {
            concept: "label column".into(),
        });
    }
    Ok(DVector::from_iterator(t.len(), t.iter().map(|&v| f64::from(v))))
}

fn centered_labels(t: &DVector<f64>) -> (DVector<f64>, f64) {
    let mean = t.mean();
    (t.add_scalar(-mean), mean)
}

/// Closed-form ridge CAV: (Z̃ᵀZ̃ + I) w = Z̃ᵀt̃, b = t̄ − z̄·w.
pub fn fit_ridge(z: &ActivationMatrix, t: &[i8]) -> Result<RidgeFit> {
    let t = label_vector(z, t)?;
    let (tc, t_mean) = centered_labels(&t);
    let zc = z.centered();
    let m = z.dim();

    let gram = zc.tr_mul(&zc) + DMatrix::<f64>::identity(m, m);
    let rhs = zc.tr_mul(&tc);
    let chol = gram.cholesky().ok_or_else(|| {
        CavError::InvalidMatrix("ridge normal matrix is not positive definite".into())
    })?;
    let weights = chol.solve(&rhs);
    let bias = t_mean - z.column_means().dot(&weights);
    Ok(RidgeFit { weights, bias })
}

/// Closed-form pattern CAV: w = Z̃ᵀt̃ / t̃ᵀt̃, b = z̄ − t̄·w.
pub fn fit_pattern(z: &ActivationMatrix, t: &[i8]) -> Result<PatternFit> {
    let t = label_vector(z, t)?;
    let (tc, t_mean) = centered_labels(&t);
    let zc = z.centered();
    // both classes present, so t̃ᵀt̃ > 0
    let weights = zc.tr_mul(&tc) / tc.norm_squared();
    let offset = z.column_means() - &weights * t_mean;
    Ok(PatternFit { weights, offset })
}

/// Scalar bias stored for a pattern CAV: projection of the activation mean
/// onto the unit CAV direction.
pub(crate) fn projection_bias(weights: &DVector<f64>, column_means: &DVector<f64>) -> f64 {
    let norm = weights.norm();
    if norm == 0.0 {
        0.0
    } else {
        weights.dot(column_means) / norm
    }
}

/// Fit one CAV per label column, independently.
pub fn fit_all(z: &ActivationMatrix, labels: &LabelMatrix, method: FitMethod) -> Result<CavSet> {
    check_rows(z, labels)?;
    let n = labels.concepts();
    let m = z.dim();
    let means = z.column_means();
    let mut vectors = DMatrix::zeros(n, m);
    let mut biases = Vec::with_capacity(n);
    for (c, name) in labels.names().iter().enumerate() {
        let (w, b) = match method {
            FitMethod::Ridge => {
                let fit = fit_ridge(z, labels.column(c)).map_err(|e| e.for_concept(name))?;
                (fit.weights, fit.bias)
            }
            FitMethod::Pattern => {
                let fit = fit_pattern(z, labels.column(c)).map_err(|e| e.for_concept(name))?;
                let bias = projection_bias(&fit.weights, &means);
                (fit.weights, bias)
            }
        };
        vectors.set_row(c, &w.transpose());
        biases.push(b);
    }
    CavSet::new(vectors, biases, labels.names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn z(rows: &[&[f64]]) -> ActivationMatrix {
        ActivationMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Max-norm of the gradient of ‖t − Zw − b‖² + ‖w‖² at (w, b).
    fn ridge_grad_max(z: &ActivationMatrix, t: &[i8], w: &DVector<f64>, b: f64) -> f64 {
        let t = DVector::from_iterator(t.len(), t.iter().map(|&v| f64::from(v)));
        let r = t - z.data() * w - DVector::from_element(z.samples(), b);
        let gw = -2.0 * z.data().tr_mul(&r) + 2.0 * w;
        let gb = -2.0 * r.sum();
        gw.amax().max(gb.abs())
    }

    /// Max-norm of the gradient of ‖Z − t wᵀ − 1bᵀ‖² at (w, b).
    fn pattern_grad_max(z: &ActivationMatrix, t: &[i8], w: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let t = DVector::from_iterator(t.len(), t.iter().map(|&v| f64::from(v)));
        let mut r = z.data() - &t * w.transpose();
        for mut row in r.row_iter_mut() {
            row -= b.transpose();
        }
        let gw = -2.0 * r.tr_mul(&t);
        let gb = -2.0 * r.row_sum().transpose();
        gw.amax().max(gb.amax())
    }

    #[test]
    fn ridge_hand_solution() {
        let data = z(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let fit = fit_ridge(&data, &[1, -1]).unwrap();
        assert_abs_diff_eq!(fit.weights[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.weights[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.bias, 0.0, epsilon = 1e-14);
        assert!(ridge_grad_max(&data, &[1, -1], &fit.weights, fit.bias) <= 1e-8);
    }

    #[test]
    fn pattern_hand_solution_and_feature_scaling() {
        let data = z(&[&[2.0, 0.0], &[2.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let t = [1, 1, -1, -1];
        let fit = fit_pattern(&data, &t).unwrap();
        assert_abs_diff_eq!(fit.weights.as_slice(), &[1.0, 0.0][..], epsilon = 1e-14);
        assert_abs_diff_eq!(fit.offset.as_slice(), &[1.0, 0.0][..], epsilon = 1e-14);
        assert!(pattern_grad_max(&data, &t, &fit.weights, &fit.offset) <= 1e-8);

        let scaled = z(&[&[20.0, 0.0], &[20.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let fit = fit_pattern(&scaled, &t).unwrap();
        assert_abs_diff_eq!(fit.weights.as_slice(), &[10.0, 0.0][..], epsilon = 1e-13);
    }

    #[test]
    fn uncorrelated_feature_gets_zero_pattern_weight() {
        // second column has zero sample covariance with t
        let data = z(&[&[1.0, 5.0], &[1.0, -5.0], &[-1.0, 5.0], &[-1.0, -5.0]]);
        let fit = fit_pattern(&data, &[1, 1, -1, -1]).unwrap();
        assert_abs_diff_eq!(fit.weights[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = z(&[&[1.0], &[2.0]]);
        assert!(matches!(
            fit_pattern(&data, &[1, 1]),
            Err(CavError::SingleClassConcept { .. })
        ));
        assert!(matches!(
            fit_ridge(&data, &[-1, -1]),
            Err(CavError::SingleClassConcept { .. })
        ));
    }

    #[test]
    fn fit_all_single_concept_matches_direct_fits() {
        let data = z(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0], &[-2.0, 1.0]]);
        let t = vec![1, -1, 1, -1];
        let labels = LabelMatrix::from_columns(vec![t.clone()], vec!["a".into()]).unwrap();

        let pat = fit_all(&data, &labels, FitMethod::Pattern).unwrap();
        let direct = fit_pattern(&data, &t).unwrap();
        assert_eq!(pat.vector(0), direct.weights);

        let ridge = fit_all(&data, &labels, FitMethod::Ridge).unwrap();
        let direct = fit_ridge(&data, &t).unwrap();
        assert_eq!(ridge.vector(0), direct.weights);
        assert_eq!(ridge.biases()[0], direct.bias);
    }

    #[test]
    fn identical_columns_give_identical_rows_and_permutation_commutes() {
        let data = z(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0], &[-2.0, 1.0], &[0.1, 0.2]]);
        let a = vec![1, -1, 1, -1, 1];
        let b = vec![1, 1, -1, -1, 1];
        let labels = LabelMatrix::from_columns(
            vec![a.clone(), a.clone(), b.clone()],
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let cavs = fit_all(&data, &labels, FitMethod::Pattern).unwrap();
        assert_eq!(cavs.row(0), cavs.row(1));

        let permuted = labels.select(&[2, 0, 1]).unwrap();
        let pc = fit_all(&data, &permuted, FitMethod::Pattern).unwrap();
        assert_eq!(pc.row(0), cavs.row(2));
        assert_eq!(pc.row(1), cavs.row(0));
        assert_eq!(pc.biases()[0], cavs.biases()[2]);
    }

    #[test]
    fn single_class_error_names_concept() {
        let data = z(&[&[1.0], &[2.0], &[3.0]]);
        // LabelMatrix already refuses single-class columns; exercise the
        // name-attaching path through the standalone fit instead.
        let err = fit_pattern(&data, &[1, 1, 1]).unwrap_err().for_concept("smiling");
        assert!(matches!(err, CavError::SingleClassConcept { concept } if concept == "smiling"));
    }

    #[test]
    fn pattern_direction_ignores_constant_offset() {
        let data = z(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0], &[-2.0, 1.0]]);
        let shifted = ActivationMatrix::new(data.data().add_scalar(7.5)).unwrap();
        let t = [1, -1, -1, 1];
        let a = fit_pattern(&data, &t).unwrap().weights;
        let b = fit_pattern(&shifted, &t).unwrap().weights;
        let cos = a.dot(&b) / (a.norm() * b.norm());
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-12);
    }
}
