//! Variable-similarity kernels built from trees or squared Euclidean
//! distances.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SymEigen, PSD_CLAMP};
use crate::tree::PhyloTree;

/// Relative asymmetry tolerated in user-supplied similarity matrices.
const SYMMETRY_TOL: f64 = 1e-12;

/// A positive semidefinite similarity matrix between variables together
/// with its cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct VariableKernel {
    q: Matrix,
    eigen: SymEigen,
    trace_normalized: bool,
    scale: f64,
}

impl VariableKernel {
    /// Wraps a similarity matrix, optionally rescaling it so tr(Q) = p.
    ///
    /// Negative eigenvalues within `1e-10·λ_max` are clamped to zero; larger
    /// negatives are rejected.
    pub fn from_similarity(q: Matrix, trace_normalize: bool) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::NotSquare {
                op: "kernel",
                rows: q.rows(),
                cols: q.cols(),
            });
        }
        if !q.is_finite() {
            return Err(Error::NonFinite("kernel".into()));
        }
        if q.asymmetry() > SYMMETRY_TOL * q.max_abs().max(1.0) {
            return Err(Error::invalid(format!(
                "kernel is not symmetric (max |Q - Qᵀ| = {:e})",
                q.asymmetry()
            )));
        }
        let q = q.symmetrized()?;
        let eigen = linalg::sym_eigen(&q)?;
        Self::from_parts(q, eigen, trace_normalize, |eigenvalue, threshold| Error::NotPsd {
            eigenvalue,
            threshold,
        })
    }

    fn from_parts(
        q: Matrix,
        mut eigen: SymEigen,
        trace_normalize: bool,
        negative: impl Fn(f64, f64) -> Error,
    ) -> Result<Self> {
        let top = eigen.largest();
        if top <= 0.0 {
            return Err(Error::ZeroKernel);
        }
        let threshold = -PSD_CLAMP * top;
        if eigen.smallest() < threshold {
            return Err(negative(eigen.smallest(), threshold));
        }
        eigen.values = linalg::clamped_values(&eigen.values);

        let (q, scale) = if trace_normalize {
            let p = q.rows() as f64;
            let trace = q.trace();
            if trace <= 0.0 {
                return Err(Error::ZeroKernel);
            }
            let c = p / trace;
            eigen.values.iter_mut().for_each(|v| *v *= c);
            (q.scale(c), c)
        } else {
            (q, 1.0)
        };
        Ok(VariableKernel {
            q,
            eigen,
            trace_normalized: trace_normalize,
            scale,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn is_trace_normalized(&self) -> bool {
        self.trace_normalized
    }

    /// Factor applied to the raw similarity during normalisation.
    pub fn scale_factor(&self) -> f64 {
        self.scale
    }

    /// The kernel restricted to a subset of variables, re-normalised when
    /// this kernel was.
    pub fn restrict(&self, idx: &[usize]) -> Result<Self> {
        VariableKernel::from_similarity(self.q.select_square(idx), self.trace_normalized)
    }
}

/// Shared-ancestry kernel of a tree, trace-normalised; rows follow leaf order.
pub fn tree_to_kernel(tree: &PhyloTree) -> Result<VariableKernel> {
    if tree.leaf_count() < 2 {
        return Err(Error::invalid(format!(
            "tree kernel needs at least 2 leaves, got {}",
            tree.leaf_count()
        )));
    }
    VariableKernel::from_similarity(tree.shared_ancestry(), true)
}

/// Weighted double centring `P_w (−δ/2) P_wᵀ`, with `P_w = I − 1wᵀ`.
///
/// `weights` default to uniform `1/p`.
pub fn double_center(delta: &Matrix, weights: Option<&[f64]>) -> Result<Matrix> {
    validate_distances(delta)?;
    let p = delta.rows();
    let uniform;
    let w = match weights {
        Some(w) => {
            validate_weights(w, p)?;
            w
        }
        None => {
            uniform = vec![1.0 / p as f64; p];
            &uniform
        }
    };
    // G = −δ/2 ; (P G Pᵀ)_ij = G_ij − (Gw)_i − (Gw)_j + wᵀGw
    let g = delta.scale(-0.5);
    let gw = linalg::matvec(&g, w)?;
    let wgw = linalg::dot(w, &gw);
    Ok(Matrix::from_fn(p, p, |i, j| g[(i, j)] - gw[i] - gw[j] + wgw))
}

pub(crate) fn validate_distances(delta: &Matrix) -> Result<()> {
    if !delta.is_square() {
        return Err(Error::NotSquare {
            op: "distances",
            rows: delta.rows(),
            cols: delta.cols(),
        });
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite("distances".into()));
    }
    let p = delta.rows();
    let tol = SYMMETRY_TOL * delta.max_abs().max(1.0);
    for i in 0..p {
        if delta[(i, i)].abs() > tol {
            return Err(Error::invalid(format!("distance diagonal ({i},{i}) is not zero")));
        }
        for j in 0..p {
            if delta[(i, j)] < 0.0 {
                return Err(Error::invalid(format!("negative distance at ({i},{j})")));
            }
            if (delta[(i, j)] - delta[(j, i)]).abs() > tol {
                return Err(Error::invalid(format!("distances not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

pub(crate) fn validate_weights(w: &[f64], p: usize) -> Result<()> {
    if w.len() != p {
        return Err(Error::DimensionMismatch {
            op: "weights",
            expected: format!("length {p}"),
            found: format!("length {}", w.len()),
        });
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Kernel from a matrix of squared Euclidean distances between variables.
pub fn distances_to_kernel(delta: &Matrix, weights: Option<&[f64]>) -> Result<VariableKernel> {
    let q = double_center(delta, weights)?.symmetrized()?;
    let eigen = linalg::sym_eigen(&q)?;
    VariableKernel::from_parts(q, eigen, true, |eigenvalue, _| Error::NotEuclidean { eigenvalue })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelReport {
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub symmetric: bool,
}

/// Diagnostics for a candidate kernel matrix; never rejects on content.
pub fn check_kernel(q: &Matrix) -> Result<KernelReport> {
    if !q.is_square() {
        return Err(Error::NotSquare {
            op: "check_kernel",
            rows: q.rows(),
            cols: q.cols(),
        });
    }
    let symmetric = q.asymmetry() <= SYMMETRY_TOL * q.max_abs().max(1.0);
    let eigen = linalg::sym_eigen(q)?;
    Ok(KernelReport {
        min_eigenvalue: eigen.smallest(),
        trace: q.trace(),
        symmetric,
    })
}
