//! Dense real linear algebra: a row-major [`Matrix`], products, symmetric
//! eigendecomposition and spectral functions of symmetric matrices.
//!
//! Everything here is sequential and allocation-explicit so that identical
//! inputs give bit-identical outputs within one build.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense real matrix stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "Matrix::from_rows",
                    expected: format!("{cols} columns"),
                    found: format!("{} columns in row {i}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("columns of unequal length"));
        }
        Ok(Matrix::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                t.data[j * self.rows + i] = v;
            }
        }
        t
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), self.cols, |i, j| self[(idx[i], j)])
    }

    /// Principal submatrix on the listed indices.
    pub fn select_square(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        Matrix::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn scale_rows(&self, w: &[f64]) -> Matrix {
        let mut m = self.clone();
        for (i, &wi) in w.iter().enumerate() {
            m.row_mut(i).iter_mut().for_each(|v| *v *= wi);
        }
        m
    }

    pub fn scale_columns(&self, w: &[f64]) -> Matrix {
        let mut m = self.clone();
        for i in 0..m.rows {
            for (v, &wj) in m.row_mut(i).iter_mut().zip(w) {
                *v *= wj;
            }
        }
        m
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                expected: format!("{}x{}", self.rows, self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference; `f64::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |A - Aᵀ| entry.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    pub fn symmetrized(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                op: "symmetrize",
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        Ok(Matrix::from_fn(n, n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)])))
    }

    pub fn column_means(&self) -> Vec<f64> {
        self.weighted_column_means(&vec![1.0 / self.rows as f64; self.rows])
    }

    pub fn weighted_column_means(&self, w: &[f64]) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for (i, &wi) in w.iter().enumerate() {
            for (m, &v) in means.iter_mut().zip(self.row(i)) {
                *m += wi * v;
            }
        }
        means
    }

    /// Subtracts `centre` from every row.
    pub fn center_columns_by(&self, centre: &[f64]) -> Matrix {
        let mut m = self.clone();
        for i in 0..m.rows {
            for (v, &c) in m.row_mut(i).iter_mut().zip(centre) {
                *v -= c;
            }
        }
        m
    }

    pub fn center_columns(&self) -> Matrix {
        self.center_columns_by(&self.column_means())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators give the compiler room to vectorise while keeping a
    // fixed summation order.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            expected: format!("{} rows in right operand", a.cols),
            found: format!("{}x{}", b.rows, b.cols),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let crow = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, b.row(k), crow);
            }
        }
    }
    Ok(c)
}

/// `a · bᵀ`, computed from row dot products.
pub fn matmul_transpose(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            op: "matmul_transpose",
            expected: format!("{} columns in right operand", a.cols),
            found: format!("{}x{}", b.rows, b.cols),
        });
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

/// `aᵀ · b`.
pub fn transpose_matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            op: "transpose_matmul",
            expected: format!("{} rows in right operand", a.rows),
            found: format!("{}x{}", b.rows, b.cols),
        });
    }
    let mut c = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki != 0.0 {
                axpy(aki, brow, &mut c.data[i * b.cols..(i + 1) * b.cols]);
            }
        }
    }
    Ok(c)
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec",
            expected: format!("vector of length {}", a.cols),
            found: format!("length {}", x.len()),
        });
    }
    Ok((0..a.rows).map(|i| dot(a.row(i), x)).collect())
}

/// Eigendecomposition of a symmetric matrix.
///
/// `vectors` holds orthonormal eigenvectors as columns, paired with
/// `values` sorted in descending order. Each eigenvector is signed so that
/// its entry of largest magnitude is positive (earliest index on ties).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn smallest(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j)
    }

    /// V · diag(values) · Vᵀ.
    pub fn reconstruct(&self) -> Matrix {
        spectral_product(&self.vectors, &self.values)
    }

    /// Relative Frobenius error of the reconstruction against `a`.
    pub fn reconstruction_error(&self, a: &Matrix) -> f64 {
        let r = self.reconstruct();
        let denom = a.frobenius_norm().max(f64::MIN_POSITIVE);
        r.sub(a).map(|d| d.frobenius_norm() / denom).unwrap_or(f64::INFINITY)
    }

    /// max |VᵀV − I|.
    pub fn orthogonality_error(&self) -> f64 {
        let vtv = transpose_matmul(&self.vectors, &self.vectors).expect("square eigenvector matrix");
        vtv.max_abs_diff(&Matrix::identity(self.dim()))
    }
}

/// V · diag(w) · Vᵀ.
pub(crate) fn spectral_product(v: &Matrix, w: &[f64]) -> Matrix {
    let scaled = v.scale_columns(w);
    matmul_transpose(&scaled, v).expect("conforming spectral product")
}

fn check_square(a: &Matrix, op: &'static str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op,
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite(op.into()));
    }
    Ok(())
}

/// Symmetric eigendecomposition by Householder tridiagonalisation followed
/// by implicit-shift QL iterations.
///
/// The input is symmetrised as (A + Aᵀ)/2 first.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    check_square(a, "sym_eigen")?;
    let n = a.rows;
    if n == 0 {
        return Ok(SymEigen {
            vectors: Matrix::zeros(0, 0),
            values: vec![],
        });
    }
    let mut work = a.symmetrized()?;
    let (mut diag, mut off, mut basis_t) = tridiagonalize(&mut work);
    tridiagonal_ql(&mut diag, &mut off, &mut basis_t)?;
    Ok(finish(diag, &basis_t))
}

/// Reduces symmetric `a` (destroyed) to tridiagonal form `Qᵀ A Q`.
///
/// Returns the diagonal, the sub-diagonal padded with a trailing zero, and
/// `Qᵀ` in row-major order.
fn tridiagonalize(a: &mut Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let n = a.rows;
    let mut off = vec![0.0; n];
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n.saturating_sub(2));
    let mut p = vec![0.0; n];

    for k in 0..n.saturating_sub(1) {
        let start = k + 1;
        let m = n - start;
        let x: Vec<f64> = a.row(k)[start..].to_vec();
        let tail_sq: f64 = x[1..].iter().map(|v| v * v).sum();
        if m == 1 || tail_sq == 0.0 {
            off[k] = x[0];
            reflectors.push((vec![], 0.0));
            continue;
        }
        let norm = (x[0] * x[0] + tail_sq).sqrt();
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vtv = v[0] * v[0] + tail_sq;
        let beta = 2.0 / vtv;
        off[k] = alpha;

        // p = β A22 v ; w = p − (β/2)(pᵀv) v ; A22 ← A22 − v wᵀ − w vᵀ
        for i in 0..m {
            p[i] = beta * dot(&a.row(start + i)[start..], &v);
        }
        let pv = dot(&p[..m], &v);
        let half = 0.5 * beta * pv;
        for i in 0..m {
            p[i] -= half * v[i];
        }
        for i in 0..m {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut a.row_mut(start + i)[start..];
            for ((r, &vj), &wj) in row.iter_mut().zip(&v).zip(&p[..m]) {
                *r -= vi * wj + wi * vj;
            }
        }
        reflectors.push((v, beta));
    }
    let diag = a.diagonal();

    // Q = H_0 H_1 ... accumulated from the right end so each reflector only
    // touches the trailing block.
    let mut q = Matrix::identity(n);
    let mut y = vec![0.0; n];
    for (k, (v, beta)) in reflectors.iter().enumerate().rev() {
        if *beta == 0.0 {
            continue;
        }
        let start = k + 1;
        let m = n - start;
        let y = &mut y[..m];
        y.iter_mut().for_each(|t| *t = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, &q.row(start + i)[start..], y);
        }
        for (i, &vi) in v.iter().enumerate() {
            axpy(-beta * vi, y, &mut q.row_mut(start + i)[start..]);
        }
    }
    (diag, off, q.transpose())
}

/// Implicit QL on a symmetric tridiagonal matrix, rotating the rows of
/// `basis_t` alongside. On return `diag` holds the (unsorted) eigenvalues
/// and row `j` of `basis_t` the matching eigenvector.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64], basis_t: &mut Matrix) -> Result<()> {
    const MAX_ITER_PER_VALUE: usize = 60;
    let n = diag.len();
    let eps = f64::EPSILON;
    let mut shift_total = 0.0;
    let mut scale: f64 = 0.0;
    off[n - 1] = 0.0;

    for l in 0..n {
        scale = scale.max(diag[l].abs() + off[l].abs());
        let mut m = l;
        while m < n - 1 && off[m].abs() > eps * scale {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_ITER_PER_VALUE {
                    return Err(Error::NoConvergence {
                        iterations: iter - 1,
                        residual: off[l].abs(),
                        tolerance: eps * scale,
                    });
                }
                let g = diag[l];
                let mut p = (diag[l + 1] - g) / (2.0 * off[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                diag[l] = off[l] / (p + r);
                diag[l + 1] = off[l] * (p + r);
                let dl1 = diag[l + 1];
                let h = g - diag[l];
                for d in diag.iter_mut().skip(l + 2) {
                    *d -= h;
                }
                shift_total += h;

                p = diag[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = off[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * off[i];
                    let h = c * p;
                    r = p.hypot(off[i]);
                    off[i + 1] = s * r;
                    s = off[i] / r;
                    c = p / r;
                    p = c * diag[i] - s * g;
                    diag[i + 1] = h + s * (c * g + s * diag[i]);
                    rotate_rows(basis_t, i, c, s);
                }
                p = -s * s2 * c3 * el1 * off[l] / dl1;
                off[l] = s * p;
                diag[l] = c * p;
                if off[l].abs() <= eps * scale {
                    break;
                }
            }
        }
        diag[l] += shift_total;
        off[l] = 0.0;
    }
    Ok(())
}

#[inline]
fn rotate_rows(m: &mut Matrix, i: usize, c: f64, s: f64) {
    let cols = m.cols;
    let (head, tail) = m.data.split_at_mut((i + 1) * cols);
    let ri = &mut head[i * cols..];
    let rj = &mut tail[..cols];
    for (a, b) in ri.iter_mut().zip(rj.iter_mut()) {
        let h = *b;
        *b = s * *a + c * h;
        *a = c * *a - s * h;
    }
}

/// Cyclic Jacobi eigendecomposition; slower than [`sym_eigen`] but an
/// independent algorithm, accurate to high relative precision.
///
/// Sweeps stop once the off-diagonal Frobenius norm falls to
/// `1e-14 · ‖A‖_F`; more than 100 sweeps is a convergence failure.
pub fn sym_eigen_jacobi(a: &Matrix) -> Result<SymEigen> {
    const MAX_SWEEPS: usize = 100;
    check_square(a, "sym_eigen_jacobi")?;
    let n = a.rows;
    let mut m = a.symmetrized()?;
    // rows of `vt` are the accumulated eigenvectors
    let mut vt = Matrix::identity(n);
    let tol = 1e-14 * m.frobenius_norm();

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off <= tol {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                residual: off,
                tolerance: tol,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rows p, q
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                // columns p, q
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (vp, vq) = (vt[(p, k)], vt[(q, k)]);
                    vt[(p, k)] = c * vp - s * vq;
                    vt[(q, k)] = s * vp + c * vq;
                }
            }
        }
    }
    Ok(finish(m.diagonal(), &vt))
}

/// Sorts descending, fixes signs, and lays eigenvectors out as columns.
fn finish(values: Vec<f64>, rows_as_vectors: &Matrix) -> SymEigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut vectors = Matrix::zeros(n, n);
    let mut sorted = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        let v = rows_as_vectors.row(src);
        let mut best = 0;
        for (k, x) in v.iter().enumerate() {
            if x.abs() > v[best].abs() {
                best = k;
            }
        }
        let sign = if v[best] < 0.0 { -1.0 } else { 1.0 };
        for (r, &x) in v.iter().enumerate() {
            vectors[(r, col)] = sign * x;
        }
        sorted.push(values[src]);
    }
    SymEigen {
        vectors,
        values: sorted,
    }
}

/// Relative band below zero within which eigenvalues of nominally PSD
/// matrices are treated as roundoff.
pub const PSD_CLAMP: f64 = 1e-10;

/// Eigenvalues with roundoff negatives clamped to zero.
pub(crate) fn clamped_values(values: &[f64]) -> Vec<f64> {
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let band = PSD_CLAMP * top;
    values
        .iter()
        .map(|&v| if v < 0.0 && v >= -band { 0.0 } else { v })
        .collect()
}

/// V · diag(f(λ)) · Vᵀ for a scalar map `f` on the spectrum.
pub fn psd_function(e: &SymEigen, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    let weights = spectral_weights(e, f)?;
    Ok(spectral_product(&e.vectors, &weights))
}

/// f(λ_j) for each eigenvalue after clamping, erroring on non-finite output.
pub fn spectral_weights(e: &SymEigen, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    clamped_values(&e.values)
        .into_iter()
        .enumerate()
        .map(|(index, lam)| {
            let w = f(lam);
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::SpectralMap {
                    index,
                    eigenvalue: e.values[index],
                })
            }
        })
        .collect()
}
