//! C ABI over `agpca-core`.
//!
//! Objects are opaque handles created by `agpca_*_new`/`agpca_fit` and
//! released with the matching `*_free`. Every fallible call returns an
//! [`AgpcaStatus`]; on failure `agpca_last_error` describes the problem.
//! Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use agpca_core::family::{AdaptiveModel, AdaptiveResult};
use agpca_core::io::newick::parse_newick;
use agpca_core::kernel::{distances_to_kernel, tree_to_kernel, VariableKernel};
use agpca_core::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgpcaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A variable kernel with its eigendecomposition.
pub struct AgpcaKernel {
    inner: VariableKernel,
}

/// An adaptive gPCA fit.
pub struct AgpcaFit {
    inner: AdaptiveResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(v) => v,
    Err(_) => panic!("version string has an interior nul"),
};

struct Failure(AgpcaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NoConvergence { .. } | Error::SpectralMap { .. } => AgpcaStatus::Numerical,
            Error::Io { .. } | Error::Output { .. } | Error::Server { .. } => AgpcaStatus::Io,
            _ => AgpcaStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AgpcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgpcaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            AgpcaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AgpcaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AgpcaStatus::InvalidInput, message.into())
}

/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn read_matrix(data: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    if data.is_null() {
        return Err(null("matrix data"));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(Matrix::from_vec(rows, cols, slice.to_vec())?)
}

/// # Safety
/// `out` must point to `len` writable doubles.
unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Failure(
            AgpcaStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn agpca_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn agpca_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Kernel from a `p x p` symmetric positive semidefinite similarity.
///
/// # Safety
/// `q` must point to `p * p` doubles; `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn agpca_kernel_from_similarity(
    q: *const f64,
    p: usize,
    trace_normalize: bool,
    out: *mut *mut AgpcaKernel,
) -> AgpcaStatus {
    guard(|| {
        let m = read_matrix(q, p, p)?;
        let inner = VariableKernel::from_similarity(m, trace_normalize)?;
        emit(out, AgpcaKernel { inner })
    })
}

/// Trace-normalised kernel from `p x p` squared Euclidean distances.
///
/// # Safety
/// `delta` must point to `p * p` doubles; `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn agpca_kernel_from_distances(
    delta: *const f64,
    p: usize,
    out: *mut *mut AgpcaKernel,
) -> AgpcaStatus {
    guard(|| {
        let m = read_matrix(delta, p, p)?;
        let inner = distances_to_kernel(&m, None)?;
        emit(out, AgpcaKernel { inner })
    })
}

/// Shared-ancestry kernel of a Newick tree; rows follow leaf order.
///
/// # Safety
/// `newick` must be a nul-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn agpca_kernel_from_newick(newick: *const c_char, out: *mut *mut AgpcaKernel) -> AgpcaStatus {
    guard(|| {
        if newick.is_null() {
            return Err(null("newick"));
        }
        let text = CStr::from_ptr(newick)
            .to_str()
            .map_err(|_| invalid("newick text is not UTF-8"))?;
        let tree = parse_newick(text)?;
        let inner = tree_to_kernel(&tree)?;
        emit(out, AgpcaKernel { inner })
    })
}

/// Number of variables, or 0 for a null handle.
///
/// # Safety
/// `kernel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agpca_kernel_dim(kernel: *const AgpcaKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.inner.dim())
}

/// Copies the (normalised) kernel matrix into `out`.
///
/// # Safety
/// `kernel` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn agpca_kernel_matrix(kernel: *const AgpcaKernel, out: *mut f64, len: usize) -> AgpcaStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        copy_out(k.inner.matrix().as_slice(), out, len)
    })
}

/// # Safety
/// `kernel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agpca_kernel_free(kernel: *mut AgpcaKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Adaptive gPCA of the `n x p` data `x` (centred internally) with `k`
/// axes. A NaN `r` estimates it by maximum likelihood; otherwise `r` must
/// lie in [0, 1].
///
/// # Safety
/// `x` must point to `n * p` doubles, `kernel` be a live handle, and `out`
/// a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit(
    x: *const f64,
    n: usize,
    p: usize,
    kernel: *const AgpcaKernel,
    k: usize,
    r: f64,
    out: *mut *mut AgpcaFit,
) -> AgpcaStatus {
    guard(|| {
        let kernel = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        let x = read_matrix(x, n, p)?;
        let model = AdaptiveModel::new(&x, &kernel.inner)?;
        let inner = if r.is_nan() { model.run(k)? } else { model.at(r, k)? };
        emit(out, AgpcaFit { inner })
    })
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_r(fit: *const AgpcaFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.inner.fit.r_hat)
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_sigma2(fit: *const AgpcaFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.inner.fit.sigma2_hat)
}

/// Axes actually returned, which may be fewer than requested.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_k(fit: *const AgpcaFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.ordination.k())
}

/// # Safety
/// `fit` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_eigenvalues(fit: *const AgpcaFit, out: *mut f64, len: usize) -> AgpcaStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(&f.inner.ordination.eigenvalues, out, len)
    })
}

/// Sample coordinates, `n x k` row-major.
///
/// # Safety
/// `fit` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_sample_coordinates(fit: *const AgpcaFit, out: *mut f64, len: usize) -> AgpcaStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(f.inner.ordination.row_coordinates.as_slice(), out, len)
    })
}

/// Variable scores `S(r) V`, `p x k` row-major.
///
/// # Safety
/// `fit` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_variable_scores(fit: *const AgpcaFit, out: *mut f64, len: usize) -> AgpcaStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(f.inner.variable_scores.as_slice(), out, len)
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agpca_fit_free(fit: *mut AgpcaFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
