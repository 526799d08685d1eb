//! Generalized PCA of a triple (X, Q, D).
//!
//! Row scores `u_i` maximise `uᵀ D X Q Xᵀ D u` subject to `UᵀDU = I`, and
//! principal axes `v_i` maximise `vᵀ Q Xᵀ D X Q v` subject to `VᵀQV = I`.
//! The computation always eigendecomposes the n×n matrix
//! `D^{1/2} X Q Xᵀ D^{1/2}`, which is the cheap side when n ≪ p.
//!
//! No centring happens here; callers centre X as their method requires.

use log::warn;

use crate::error::{Error, Result};
use crate::kernel::VariableKernel;
use crate::linalg::{self, Matrix, SymEigen};

/// Eigenvalues below this fraction of the largest are numerically zero.
pub const RANK_TOL: f64 = 1e-12;

/// An inner product on the variable space, given by a PSD matrix M.
pub trait ColumnMetric {
    fn dim(&self) -> usize;

    /// `X · M · Xᵀ` for an n×p `X`.
    fn gram(&self, x: &Matrix) -> Result<Matrix>;

    /// `M · B` for a p×k `B`.
    fn apply(&self, b: &Matrix) -> Result<Matrix>;
}

/// The standard inner product.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl ColumnMetric for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn gram(&self, x: &Matrix) -> Result<Matrix> {
        linalg::matmul_transpose(x, x)
    }

    fn apply(&self, b: &Matrix) -> Result<Matrix> {
        Ok(b.clone())
    }
}

impl ColumnMetric for Matrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn gram(&self, x: &Matrix) -> Result<Matrix> {
        let xq = linalg::matmul(x, self)?;
        linalg::matmul_transpose(&xq, x)
    }

    fn apply(&self, b: &Matrix) -> Result<Matrix> {
        linalg::matmul(self, b)
    }
}

impl ColumnMetric for VariableKernel {
    fn dim(&self) -> usize {
        VariableKernel::dim(self)
    }

    fn gram(&self, x: &Matrix) -> Result<Matrix> {
        self.matrix().gram(x)
    }

    fn apply(&self, b: &Matrix) -> Result<Matrix> {
        self.matrix().apply(b)
    }
}

/// `V · diag(w) · Vᵀ` held in factored form.
///
/// When built with [`SpectralMetric::with_rotated`], `gram` reuses the
/// precomputed `X V` and ignores its argument's values; the caller must pass
/// the same X.
#[derive(Debug, Clone, Copy)]
pub struct SpectralMetric<'a> {
    vectors: &'a Matrix,
    weights: &'a [f64],
    rotated: Option<&'a Matrix>,
}

impl<'a> SpectralMetric<'a> {
    pub fn new(eigen: &'a SymEigen, weights: &'a [f64]) -> Self {
        SpectralMetric {
            vectors: &eigen.vectors,
            weights,
            rotated: None,
        }
    }

    pub(crate) fn with_rotated(eigen: &'a SymEigen, weights: &'a [f64], rotated: &'a Matrix) -> Self {
        SpectralMetric {
            vectors: &eigen.vectors,
            weights,
            rotated: Some(rotated),
        }
    }

    pub fn materialize(&self) -> Matrix {
        linalg::spectral_product(self.vectors, self.weights)
    }
}

impl ColumnMetric for SpectralMetric<'_> {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn gram(&self, x: &Matrix) -> Result<Matrix> {
        let owned;
        let rotated = match self.rotated {
            Some(r) if r.shape() == x.shape() => r,
            _ => {
                owned = linalg::matmul(x, self.vectors)?;
                &owned
            }
        };
        linalg::matmul_transpose(&rotated.scale_columns(self.weights), rotated)
    }

    fn apply(&self, b: &Matrix) -> Result<Matrix> {
        let coeffs = linalg::transpose_matmul(self.vectors, b)?.scale_rows(self.weights);
        linalg::matmul(self.vectors, &coeffs)
    }
}

/// Result of gPCA on a triple.
#[derive(Debug, Clone)]
pub struct GpcaResult {
    /// n×k, columns `u_i` with `u_iᵀ D u_i = 1`.
    pub row_scores: Matrix,
    /// n×k, `u_i · √λ_i` (equivalently `X Q v_i`).
    pub row_coordinates: Matrix,
    /// p×k, columns `v_i` with `v_iᵀ Q v_i = 1`.
    pub axes: Matrix,
    /// p×k, `Q v_i`: the axes mapped through the metric.
    pub metric_axes: Matrix,
    /// λ_i, descending.
    pub eigenvalues: Vec<f64>,
    /// λ_i over the total inertia `tr(D^{1/2} X Q Xᵀ D^{1/2})`.
    pub variance_fractions: Vec<f64>,
    pub total_inertia: f64,
}

impl GpcaResult {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Flips the sign of component `j` in every score and axis matrix.
    pub fn flip(&mut self, j: usize) {
        for m in [
            &mut self.row_scores,
            &mut self.row_coordinates,
            &mut self.axes,
            &mut self.metric_axes,
        ] {
            for i in 0..m.rows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Default number of components for `n` samples.
pub fn default_k(n: usize) -> usize {
    n.saturating_sub(1).clamp(1, 10)
}

/// gPCA on `(x, q, diag(d))` keeping `k` components.
///
/// `k` is truncated, with a warning, to the numerical rank of the problem.
pub fn gpca<M: ColumnMetric + ?Sized>(x: &Matrix, q: &M, d: &[f64], k: usize) -> Result<GpcaResult> {
    let (n, p) = x.shape();
    if q.dim() != p {
        return Err(Error::DimensionMismatch {
            op: "gpca",
            expected: format!("{p}x{p} metric"),
            found: format!("{0}x{0}", q.dim()),
        });
    }
    if d.len() != n {
        return Err(Error::DimensionMismatch {
            op: "gpca",
            expected: format!("{n} row weights"),
            found: format!("{}", d.len()),
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("gpca data".into()));
    }
    if d.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid("row weights must be finite and nonnegative"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }

    let root_d: Vec<f64> = d.iter().map(|w| w.sqrt()).collect();
    let gram = q.gram(x)?;
    let weighted = Matrix::from_fn(n, n, |i, j| root_d[i] * gram[(i, j)] * root_d[j]);
    let eigen = linalg::sym_eigen(&weighted)?;

    let top = eigen.largest();
    if !(top > 0.0) {
        return Err(Error::DegenerateData);
    }
    let rank = eigen.values.iter().take_while(|&&l| l > RANK_TOL * top).count();
    let k_eff = k.min(rank);
    if k_eff < k {
        warn!("gpca: requested k = {k} exceeds numerical rank {rank}; keeping {k_eff} components");
    }
    let total_inertia: f64 = weighted.trace();
    let eigenvalues: Vec<f64> = eigen.values[..k_eff].to_vec();

    // v_i = Xᵀ D^{1/2} ũ_i / √λ_i
    let tilde = eigen.vectors.leading_columns(k_eff);
    let lead = tilde.scale_rows(&root_d);
    let inv_root: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
    let axes = linalg::transpose_matmul(x, &lead)?.scale_columns(&inv_root);
    let (axes, metric_axes) = q_orthonormalize(q, axes)?;

    // u_i = D^{-1/2} ũ_i; zero-weight rows only have the projection X Q v_i / √λ_i
    let projected = if d.contains(&0.0) {
        Some(linalg::matmul(x, &metric_axes)?.scale_columns(&inv_root))
    } else {
        None
    };
    let row_scores = Matrix::from_fn(n, k_eff, |i, j| match &projected {
        Some(m) if d[i] == 0.0 => m[(i, j)],
        _ => tilde[(i, j)] / root_d[i],
    });
    let roots: Vec<f64> = eigenvalues.iter().map(|l| l.sqrt()).collect();
    let row_coordinates = row_scores.scale_columns(&roots);
    let variance_fractions = eigenvalues.iter().map(|l| l / total_inertia).collect();

    Ok(GpcaResult {
        row_scores,
        row_coordinates,
        axes,
        metric_axes,
        eigenvalues,
        variance_fractions,
        total_inertia,
    })
}

/// Symmetric correction `V (VᵀQV)^{-1/2}`, returning the corrected axes and
/// their images under Q.
fn q_orthonormalize<M: ColumnMetric + ?Sized>(q: &M, v: Matrix) -> Result<(Matrix, Matrix)> {
    let qv = q.apply(&v)?;
    let g = linalg::transpose_matmul(&v, &qv)?.symmetrized()?;
    let e = linalg::sym_eigen(&g)?;
    if !(e.smallest() > 0.5) || e.largest() > 2.0 {
        return Ok((v, qv));
    }
    let c = linalg::psd_function(&e, |l| 1.0 / l.sqrt())?;
    Ok((linalg::matmul(&v, &c)?, linalg::matmul(&qv, &c)?))
}

/// Standard PCA of an (already centred) matrix: gPCA on (X, I, I).
pub fn pca(x: &Matrix, k: usize) -> Result<GpcaResult> {
    gpca(x, &Identity(x.cols()), &vec![1.0; x.rows()], k)
}
