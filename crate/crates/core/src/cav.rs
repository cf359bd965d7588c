//! CAV sets and the cosine geometry between them.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{CavError, Result};

/// n×m matrix of concept activation vectors (one per row) with a scalar bias
/// and a name per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct CavSet {
    vectors: DMatrix<f64>,
    biases: Vec<f64>,
    names: Vec<String>,
}

impl CavSet {
    pub fn new(vectors: DMatrix<f64>, biases: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let n = vectors.nrows();
        if n == 0 || vectors.ncols() == 0 {
            return Err(CavError::InvalidMatrix("empty CAV matrix".into()));
        }
        if biases.len() != n || names.len() != n {
            return Err(CavError::InvalidMatrix(format!(
                "{n} CAV rows but {} biases and {} names",
                biases.len(),
                names.len()
            )));
        }
        if vectors.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(CavError::InvalidMatrix("non-finite CAV entry".into()));
        }
        for (i, row) in vectors.row_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(CavError::DegenerateVector {
                    concept: names[i].clone(),
                });
            }
        }
        Ok(Self {
            vectors,
            biases,
            names,
        })
    }

    /// Number of concepts n.
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latent dimension m.
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.vectors.row(i).into_owned()
    }

    /// CAV `i` as a column vector.
    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.row(i).transpose()
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

    pub fn with_biases(mut self, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != self.len() {
            return Err(CavError::InvalidMatrix("bias count mismatch".into()));
        }
        self.biases = biases;
        Ok(self)
    }
}

/// Symmetric n×n matrix of pairwise CAV cosines with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    data: DMatrix<f64>,
}

impl CosineMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }
}

/// Cosine similarity u·v / (‖u‖‖v‖), clamped to [−1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CavError::InvalidMatrix(format!(
            "length mismatch {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>();
    let nv = v.iter().map(|x| x * x).sum::<f64>();
    if nu == 0.0 || nv == 0.0 {
        return Err(CavError::DegenerateVector {
            concept: if nu == 0.0 { "u" } else { "v" }.into(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

pub(crate) fn unit_rows(vectors: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let mut out = vectors.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(CavError::DegenerateVector {
                concept: names[i].clone(),
            });
        }
        row /= norm;
    }
    Ok(out)
}

/// Scale every CAV to unit Euclidean norm. Biases and names are kept.
pub fn row_normalize(cavs: &CavSet) -> Result<CavSet> {
    let vectors = unit_rows(&cavs.vectors, &cavs.names)?;
    CavSet::new(vectors, cavs.biases.clone(), cavs.names.clone())
}

/// Pairwise cosine matrix of a CAV set.
pub fn cosine_matrix(cavs: &CavSet) -> Result<CosineMatrix> {
    cosine_of_rows(&cavs.vectors, &cavs.names)
}

/// G_ij / sqrt(G_ii G_jj) on the raw Gram matrix. Unlike normalising first,
/// this gives exactly 1 for identical rows.
pub(crate) fn cosine_of_rows(vectors: &DMatrix<f64>, names: &[String]) -> Result<CosineMatrix> {
    let n = vectors.nrows();
    let gram = vectors * vectors.transpose();
    if let Some(i) = (0..n).find(|&i| gram[(i, i)] == 0.0) {
        return Err(CavError::DegenerateVector {
            concept: names[i].clone(),
        });
    }
    let data = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            // average the two orientations so the result is exactly symmetric
            let g = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            (g / (gram[(i, i)] * gram[(j, j)]).sqrt()).clamp(-1.0, 1.0)
        }
    });
    Ok(CosineMatrix { data })
}
