//! Input kernels and the edge-label side of the joint feature space.
//!
//! The joint feature of an (input, multilabel) pair factorizes per edge as
//! the tensor product of the input feature map and a one-hot edge-label
//! indicator, so every kernel computation reduces to the input kernel times
//! small indicator expressions. `edge_score_basis` is the building block the
//! learner and all score evaluations share.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Quadratic,
    Precomputed,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "quadratic" => Ok(KernelKind::Quadratic),
            "precomputed" => Ok(KernelKind::Precomputed),
            other => Err(Error::invalid(format!(
                "unknown kernel kind {other:?} (expected linear, quadratic or precomputed)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            KernelKind::Linear => "linear",
            KernelKind::Quadratic => "quadratic",
            KernelKind::Precomputed => "precomputed",
        };
        f.write_str(name)
    }
}

/// Symmetric positive input kernel over a set of examples.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Array2<f64>,
    kind: KernelKind,
    normalized: bool,
}

const SYMMETRY_TOL: f64 = 1e-9;

impl KernelMatrix {
    /// Computes the kernel of a feature matrix (one row per example).
    pub fn from_features(features: &Array2<f64>, kind: KernelKind, normalize: bool) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::invalid("kernel over an empty example set"));
        }
        let gram = features.dot(&features.t());
        let values = match kind {
            KernelKind::Linear => gram,
            KernelKind::Quadratic => gram.mapv(|v| (v + 1.0) * (v + 1.0)),
            KernelKind::Precomputed => {
                return Err(Error::invalid(
                    "precomputed kernels must be loaded from a matrix, not features",
                ))
            }
        };
        Self::finish(values, kind, normalize)
    }

    /// Wraps an externally supplied Gram matrix, validating symmetry and a
    /// strictly positive diagonal.
    pub fn from_gram(gram: Array2<f64>, normalize: bool) -> Result<Self> {
        if gram.nrows() == 0 {
            return Err(Error::invalid("kernel over an empty example set"));
        }
        if gram.nrows() != gram.ncols() {
            return Err(Error::dimensions(
                "gram matrix shape",
                format!("{0}x{0}", gram.nrows()),
                format!("{}x{}", gram.nrows(), gram.ncols()),
            ));
        }
        for i in 0..gram.nrows() {
            for j in (i + 1)..gram.ncols() {
                if (gram[(i, j)] - gram[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "gram matrix is not symmetric at ({i}, {j}): {} vs {}",
                        gram[(i, j)],
                        gram[(j, i)]
                    )));
                }
            }
        }
        Self::finish(gram, KernelKind::Precomputed, normalize)
    }

    fn finish(mut values: Array2<f64>, kind: KernelKind, normalize: bool) -> Result<Self> {
        // Single-column feature matrices produce a column-major product;
        // the trainer iterates contiguous rows, so rebuild if needed.
        if !values.is_standard_layout() {
            values = values.as_standard_layout().to_owned();
        }
        for i in 0..values.nrows() {
            let d = values[(i, i)];
            if !(d > 0.0) {
                return Err(Error::invalid(format!(
                    "example {i} has non-positive self-similarity {d}"
                )));
            }
        }
        if normalize {
            let diag: Vec<f64> = (0..values.nrows()).map(|i| values[(i, i)].sqrt()).collect();
            for i in 0..values.nrows() {
                for j in 0..values.ncols() {
                    values[(i, j)] /= diag[i] * diag[j];
                }
            }
        }
        Ok(KernelMatrix {
            values,
            kind,
            normalized: normalize,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Square kernel over a subset of the examples, keeping kind and
    /// normalization flags. Slicing commutes with normalization.
    pub fn square_submatrix(&self, idx: &[usize]) -> Result<KernelMatrix> {
        self.check_indices(idx)?;
        let values = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| {
            self.values[(idx[a], idx[b])]
        });
        Ok(KernelMatrix {
            values,
            kind: self.kind,
            normalized: self.normalized,
        })
    }

    /// Rectangular block of kernel values, rows indexing one subset and
    /// columns another.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<Array2<f64>> {
        self.check_indices(rows)?;
        self.check_indices(cols)?;
        Ok(Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| {
            self.values[(rows[a], cols[b])]
        }))
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        match idx.iter().find(|&&i| i >= self.n()) {
            Some(i) => Err(Error::invalid(format!(
                "example index {i} out of range 0..{}",
                self.n()
            ))),
            None => Ok(()),
        }
    }
}

/// Kernel values between new points (rows) and training points (columns),
/// consistent with [`KernelMatrix::from_features`] under the same flags.
pub fn compute_cross(
    test_features: &Array2<f64>,
    train_features: &Array2<f64>,
    kind: KernelKind,
    normalize: bool,
) -> Result<Array2<f64>> {
    if test_features.ncols() != train_features.ncols() {
        return Err(Error::dimensions(
            "feature dimension",
            train_features.ncols(),
            test_features.ncols(),
        ));
    }
    let raw = |a: &Array2<f64>, b: &Array2<f64>| -> Result<Array2<f64>> {
        let gram = a.dot(&b.t());
        match kind {
            KernelKind::Linear => Ok(gram),
            KernelKind::Quadratic => Ok(gram.mapv(|v| (v + 1.0) * (v + 1.0))),
            KernelKind::Precomputed => Err(Error::invalid(
                "cross kernel for precomputed kind needs explicit kernel rows",
            )),
        }
    };
    let mut cross = raw(test_features, train_features)?;
    if normalize {
        let self_kernel = |x: &Array2<f64>, what: &str| -> Result<Vec<f64>> {
            let mut diag = Vec::with_capacity(x.nrows());
            for i in 0..x.nrows() {
                let row = x.row(i);
                let d = match kind {
                    KernelKind::Linear => row.dot(&row),
                    KernelKind::Quadratic => {
                        let v = row.dot(&row);
                        (v + 1.0) * (v + 1.0)
                    }
                    KernelKind::Precomputed => unreachable!(),
                };
                if !(d > 0.0) {
                    return Err(Error::invalid(format!(
                        "{what} example {i} has non-positive self-similarity {d}"
                    )));
                }
                diag.push(d.sqrt());
            }
            Ok(diag)
        };
        let test_diag = self_kernel(test_features, "test")?;
        let train_diag = self_kernel(train_features, "training")?;
        for i in 0..cross.nrows() {
            for j in 0..cross.ncols() {
                cross[(i, j)] /= test_diag[i] * train_diag[j];
            }
        }
    }
    Ok(cross)
}

/// One-hot inner product between two edge labels.
pub fn edge_label_kernel(u: (usize, usize), v: (usize, usize)) -> f64 {
    if u == v {
        1.0
    } else {
        0.0
    }
}

/// Contribution of one unit of dual mass at `(training example i, edge label
/// u_e)` to the potential of edge label `y_e` for a point with input kernel
/// value `k_xxi` against example i. `y_ie` is example i's own edge label.
/// All labels are flat edge-label indices.
#[inline]
pub fn edge_score_basis(k_xxi: f64, y_ie: usize, u_e: usize, y_e: usize) -> f64 {
    let same_truth = (y_ie == y_e) as u8 as f64;
    let same_dual = (u_e == y_e) as u8 as f64;
    k_xxi * (same_truth - same_dual)
}

/// Per-node label alphabet sizes. The default pipeline is binary, but
/// inference and training only ever see sizes through this table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    sizes: Vec<usize>,
}

impl Alphabet {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("alphabet needs at least one node"));
        }
        if let Some((j, &l)) = sizes.iter().enumerate().find(|(_, &l)| l < 2) {
            return Err(Error::invalid(format!(
                "node {j} has alphabet size {l}, need at least 2"
            )));
        }
        Ok(Alphabet { sizes })
    }

    pub fn binary(k: usize) -> Self {
        Alphabet {
            sizes: vec![2; k.max(1)],
        }
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, j: usize) -> usize {
        self.sizes[j]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of labels of the edge `(j, j')`.
    pub fn pair_count(&self, j: usize, j2: usize) -> usize {
        self.sizes[j] * self.sizes[j2]
    }

    /// Flat index of the edge label `(u_j, u_j2)` on edge `(j, j')`, row
    /// major in the first endpoint.
    pub fn pair_index(&self, j2: usize, u_j: usize, u_j2: usize) -> usize {
        u_j * self.sizes[j2] + u_j2
    }

    /// Inverse of [`Alphabet::pair_index`].
    pub fn pair_decompose(&self, j2: usize, idx: usize) -> (usize, usize) {
        (idx / self.sizes[j2], idx % self.sizes[j2])
    }
}
