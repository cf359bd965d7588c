//! Validated containers for latent activations and binary concept labels.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{CavError, Result};

/// k×m matrix of latent activations, one sample per row.
///
/// Construction rejects fewer than two samples, an empty latent dimension and
/// any non-finite entry; everything downstream relies on that.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    data: DMatrix<f64>,
}

impl ActivationMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(CavError::InvalidMatrix(format!(
                "need at least 2 samples, got {}",
                data.nrows()
            )));
        }
        if data.ncols() < 1 {
            return Err(CavError::InvalidMatrix("latent dimension is 0".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % data.nrows(), pos / data.nrows());
            return Err(CavError::InvalidMatrix(format!(
                "non-finite entry at ({row}, {col})"
            )));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(CavError::InvalidMatrix("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
    }

    /// Number of samples k.
    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    /// Latent dimension m.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.data.row(i).into_owned()
    }

    /// Column means as a length-m vector.
    pub fn column_means(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    /// Activations with column means subtracted.
    pub fn centered(&self) -> DMatrix<f64> {
        let mean = self.data.row_mean();
        let mut out = self.data.clone();
        for mut row in out.row_iter_mut() {
            row -= &mean;
        }
        out
    }
}

/// k×n matrix of concept labels in {−1, +1} plus concept names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    columns: Vec<Vec<i8>>,
    names: Vec<String>,
}

impl LabelMatrix {
    /// Build from per-concept label columns.
    pub fn from_columns(columns: Vec<Vec<i8>>, names: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(CavError::InvalidMatrix("no concepts".into()));
        }
        if columns.len() != names.len() {
            return Err(CavError::InvalidMatrix(format!(
                "{} label columns but {} names",
                columns.len(),
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(CavError::InvalidMatrix("empty concept name".into()));
            }
            if name.contains(',') || name.contains('\n') {
                return Err(CavError::InvalidMatrix(format!(
                    "concept name `{name}` contains a delimiter"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(CavError::InvalidMatrix(format!("duplicate concept name `{name}`")));
            }
        }
        let k = columns[0].len();
        for (col, name) in columns.iter().zip(&names) {
            if col.len() != k {
                return Err(CavError::InvalidMatrix(format!(
                    "label column `{name}` has {} rows, expected {k}",
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().find(|&&v| v != 1 && v != -1) {
                return Err(CavError::InvalidMatrix(format!(
                    "label {bad} in column `{name}` is not -1 or +1"
                )));
            }
            if !(col.contains(&1) && col.contains(&-1)) {
                return Err(CavError::SingleClassConcept {
                    concept: name.clone(),
                });
            }
        }
        Ok(Self { columns, names })
    }

    /// Build from sample rows (each row holds one label per concept).
    pub fn from_rows(rows: &[Vec<i8>], names: Vec<String>) -> Result<Self> {
        let n = names.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CavError::InvalidMatrix(format!(
                "label rows must have {n} entries"
            )));
        }
        let columns = (0..n).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        Self::from_columns(columns, names)
    }

    /// Number of samples k.
    pub fn samples(&self) -> usize {
        self.columns[0].len()
    }

    /// Number of concepts n.
    pub fn concepts(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, c: usize) -> &[i8] {
        &self.columns[c]
    }

    pub fn columns(&self) -> &[Vec<i8>] {
        &self.columns
    }

    pub fn get(&self, sample: usize, concept: usize) -> i8 {
        self.columns[concept][sample]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CavError::UnknownConcept {
                name: name.to_owned(),
                available: self.names.clone(),
            })
    }

    /// Label column `c` as floating-point ±1.
    pub fn column_f64(&self, c: usize) -> DVector<f64> {
        DVector::from_iterator(self.samples(), self.columns[c].iter().map(|&v| f64::from(v)))
    }

    /// Keep only the listed concepts, in the given order.
    pub fn select(&self, concepts: &[usize]) -> Result<Self> {
        let columns = concepts.iter().map(|&c| self.columns[c].clone()).collect();
        let names = concepts.iter().map(|&c| self.names[c].clone()).collect();
        Self::from_columns(columns, names)
    }
}

pub(crate) fn check_rows(z: &ActivationMatrix, labels: &LabelMatrix) -> Result<()> {
    if z.samples() != labels.samples() {
        return Err(CavError::InvalidMatrix(format!(
            "activations have {} samples but labels have {}",
            z.samples(),
            labels.samples()
        )));
    }
    Ok(())
}

/// Default names `concept_0`, `concept_1`, ...
pub fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("concept_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_tiny_matrices() {
        assert!(ActivationMatrix::from_rows(&[vec![1.0, f64::NAN], vec![0.0, 0.0]]).is_err());
        assert!(ActivationMatrix::from_rows(&[vec![1.0, f64::INFINITY], vec![0.0, 0.0]]).is_err());
        assert!(ActivationMatrix::from_rows(&[vec![1.0]]).is_err());
        assert!(ActivationMatrix::from_rows(&[vec![1.0], vec![2.0]]).is_ok());
    }

    #[test]
    fn label_validation() {
        let names = vec!["a".to_string()];
        assert!(matches!(
            LabelMatrix::from_columns(vec![vec![1, 1, 1]], names.clone()),
            Err(CavError::SingleClassConcept { concept }) if concept == "a"
        ));
        assert!(LabelMatrix::from_columns(vec![vec![1, 0, -1]], names.clone()).is_err());
        assert!(LabelMatrix::from_columns(
            vec![vec![1, -1], vec![1, -1]],
            vec!["a".into(), "a".into()]
        )
        .is_err());
        assert!(LabelMatrix::from_columns(vec![vec![1, -1]], vec!["".into()]).is_err());
        let l = LabelMatrix::from_rows(&[vec![1, -1], vec![-1, 1]], vec!["a".into(), "b".into()])
            .unwrap();
        assert_eq!(l.column(1), &[-1, 1]);
        assert_eq!(l.index_of("b").unwrap(), 1);
        assert!(matches!(l.index_of("zz"), Err(CavError::UnknownConcept { .. })));
    }

    #[test]
    fn centering() {
        let z = ActivationMatrix::from_rows(&[vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap();
        let c = z.centered();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -2.0]));
        assert_eq!(z.column_means().as_slice(), &[2.0, 2.0]);
    }
}
