//! The one-parameter family of inner products S(r) between the kernel
//! metric (r = 0) and the identity (r = 1), its profile likelihood, and the
//! adaptive gPCA pipeline built on the two.
//!
//! Data follow `x_i ~ N(0, σ₁²Q + σ₂²I)`. With `r = σ₁²/(σ₁² + σ₂²)` and the
//! kernel spectrum `Q = V Λ Vᵀ`, the posterior inner product is
//! `S(r) = V diag(f(λ, r)) Vᵀ` with `f(λ, r) = λ / (rλ + 1 − r)`.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gpca::{self, GpcaResult, SpectralMetric};
use crate::kernel::VariableKernel;
use crate::linalg::{self, Matrix, SymEigen, PSD_CLAMP};

/// Floor applied to kernel eigenvalues inside the likelihood.
pub const LIKELIHOOD_FLOOR: f64 = 1e-8;

/// Points in the coarse search grid over [0, 1].
pub const COARSE_POINTS: usize = 201;

/// Width at which golden-section refinement stops.
pub const R_TOLERANCE: f64 = 1e-6;

/// Relative spread below which a profile counts as flat.
pub const FLAT_TOL: f64 = 1e-9;

fn check_r(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("r = {r} outside [0, 1]")));
    }
    Ok(())
}

/// `f(λ_j, r)` before normalisation. Eigenvalues within the clamp band of
/// zero map to exactly zero for every r.
pub fn raw_spectral_weights(values: &[f64], r: f64) -> Result<Vec<f64>> {
    check_r(r)?;
    let top = values.iter().fold(0.0f64, |m, v| m.max(*v));
    let zero = PSD_CLAMP * top;
    values
        .iter()
        .map(|&l| {
            if l < -zero {
                Err(Error::invalid(format!("negative kernel eigenvalue {l}")))
            } else if l <= zero {
                Ok(0.0)
            } else {
                Ok(l / (r * l + 1.0 - r))
            }
        })
        .collect()
}

/// One member of the family: `S(r) = V diag(weights) Vᵀ` with Σ weights = p.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyPoint {
    pub r: f64,
    pub weights: Vec<f64>,
}

impl FamilyPoint {
    pub fn metric<'a>(&'a self, eigen: &'a SymEigen) -> SpectralMetric<'a> {
        SpectralMetric::new(eigen, &self.weights)
    }

    /// The dense p×p matrix S(r).
    pub fn s_matrix(&self, eigen: &SymEigen) -> Matrix {
        linalg::spectral_product(&eigen.vectors, &self.weights)
    }
}

/// Family member at `r` for a kernel spectrum.
pub fn family_inner_product(kernel_eigen: &SymEigen, r: f64) -> Result<FamilyPoint> {
    let mut weights = raw_spectral_weights(&kernel_eigen.values, r)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroKernel);
    }
    let c = weights.len() as f64 / total;
    weights.iter_mut().for_each(|w| *w *= c);
    Ok(FamilyPoint { r, weights })
}

fn check_profile_inputs(t: &[f64], lambda: &[f64], r: f64, n: usize) -> Result<()> {
    check_r(r)?;
    if t.len() != lambda.len() {
        return Err(Error::DimensionMismatch {
            op: "profile",
            expected: format!("{} eigenvalues", t.len()),
            found: format!("{}", lambda.len()),
        });
    }
    if n == 0 || t.is_empty() {
        return Err(Error::invalid("profile needs n >= 1 and p >= 1"));
    }
    if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("rotated square sums must be finite and nonnegative"));
    }
    if t.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData);
    }
    Ok(())
}

/// `rλ_j + 1 − r` with the likelihood floor on λ.
fn denominators(lambda: &[f64], r: f64) -> Result<Vec<f64>> {
    lambda
        .iter()
        .enumerate()
        .map(|(index, &l)| {
            let d = r * l.max(LIKELIHOOD_FLOOR) + 1.0 - r;
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::SpectralMap { index, eigenvalue: l })
            }
        })
        .collect()
}

/// Closed-form maximiser `σ²*(r) = (1/np) Σ_j t_j / (rλ_j + 1 − r)`.
pub fn profile_sigma2(t: &[f64], lambda: &[f64], r: f64, n: usize) -> Result<f64> {
    check_profile_inputs(t, lambda, r, n)?;
    let den = denominators(lambda, r)?;
    let np = (n * t.len()) as f64;
    Ok(t.iter().zip(&den).map(|(a, b)| a / b).sum::<f64>() / np)
}

/// Profile log-likelihood ℓ(r), without the `−(np/2) log 2π` constant.
pub fn profile_loglik(t: &[f64], lambda: &[f64], r: f64, n: usize) -> Result<f64> {
    check_profile_inputs(t, lambda, r, n)?;
    let den = denominators(lambda, r)?;
    let np = (n * t.len()) as f64;
    let sigma2 = t.iter().zip(&den).map(|(a, b)| a / b).sum::<f64>() / np;
    let logdet: f64 = den.iter().map(|d| d.ln()).sum();
    Ok(-0.5 * n as f64 * logdet - 0.5 * np * sigma2.ln() - 0.5 * np)
}

/// Maximum marginal likelihood estimate of r.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyFit {
    pub r_hat: f64,
    /// σ̂² = σ₁² + σ₂².
    pub sigma2_hat: f64,
    /// σ₁² = r̂ σ̂².
    pub sigma1_sq: f64,
    /// σ₂² = (1 − r̂) σ̂².
    pub sigma2_noise_sq: f64,
    /// `(r, ℓ(r))` on the coarse grid; absent when r was fixed by the caller.
    pub profile_trace: Option<Vec<(f64, f64)>>,
}

impl FamilyFit {
    fn at(r: f64, sigma2: f64, profile_trace: Option<Vec<(f64, f64)>>) -> Self {
        FamilyFit {
            r_hat: r,
            sigma2_hat: sigma2,
            sigma1_sq: r * sigma2,
            sigma2_noise_sq: (1.0 - r) * sigma2,
            profile_trace,
        }
    }
}

fn golden_max(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > R_TOLERANCE {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    Ok((mid, f(mid)?))
}

/// Centred data rotated into the kernel eigenbasis, ready for repeated
/// evaluation across the family.
#[derive(Debug, Clone)]
pub struct AdaptiveModel<'k> {
    kernel: &'k VariableKernel,
    centered: Matrix,
    rotated: Matrix,
    column_means: Vec<f64>,
    sq_sums: Vec<f64>,
}

/// Output of the adaptive pipeline at one r.
#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub fit: FamilyFit,
    /// gPCA on `(X_c, S(r), I)`.
    pub ordination: GpcaResult,
    /// `S(r) · axes`, the variable scores on the data's own scale.
    pub variable_scores: Matrix,
}

impl<'k> AdaptiveModel<'k> {
    /// Centres the columns of `x` and rotates by the kernel eigenvectors.
    pub fn new(x: &Matrix, kernel: &'k VariableKernel) -> Result<Self> {
        if x.cols() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                op: "adaptive gpca",
                expected: format!("{} columns to match the kernel", kernel.dim()),
                found: format!("{}", x.cols()),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("data".into()));
        }
        let column_means = x.column_means();
        let centered = x.center_columns_by(&column_means);
        let rotated = linalg::matmul(&centered, &kernel.eigen().vectors)?;
        let mut sq_sums = vec![0.0; x.cols()];
        for i in 0..rotated.rows() {
            for (s, v) in sq_sums.iter_mut().zip(rotated.row(i)) {
                *s += v * v;
            }
        }
        Ok(AdaptiveModel {
            kernel,
            centered,
            rotated,
            column_means,
            sq_sums,
        })
    }

    pub fn n(&self) -> usize {
        self.centered.rows()
    }

    pub fn p(&self) -> usize {
        self.centered.cols()
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn centered(&self) -> &Matrix {
        &self.centered
    }

    /// `t_j = Σ_i x̃_ij²` for the rotated data.
    pub fn rotated_sq_sums(&self) -> &[f64] {
        &self.sq_sums
    }

    pub fn loglik(&self, r: f64) -> Result<f64> {
        profile_loglik(&self.sq_sums, &self.kernel.eigen().values, r, self.n())
    }

    pub fn sigma2(&self, r: f64) -> Result<f64> {
        profile_sigma2(&self.sq_sums, &self.kernel.eigen().values, r, self.n())
    }

    /// Coarse grid search followed by golden-section refinement.
    pub fn fit(&self) -> Result<FamilyFit> {
        let last = (COARSE_POINTS - 1) as f64;
        let trace: Vec<(f64, f64)> = (0..COARSE_POINTS)
            .map(|i| {
                let r = i as f64 / last;
                self.loglik(r).map(|l| (r, l))
            })
            .collect::<Result<_>>()?;

        let (mut best, mut lo, mut hi) = (0, f64::INFINITY, f64::NEG_INFINITY);
        for (i, &(_, l)) in trace.iter().enumerate() {
            if l > trace[best].1 {
                best = i;
            }
            lo = lo.min(l);
            hi = hi.max(l);
        }
        let r_hat = if hi - lo < FLAT_TOL * hi.abs() {
            1.0
        } else {
            let a = trace[best.saturating_sub(1)].0;
            let b = trace[(best + 1).min(COARSE_POINTS - 1)].0;
            let (r, l) = golden_max(&|r| self.loglik(r), a, b)?;
            if l >= trace[best].1 {
                r
            } else {
                trace[best].0
            }
        };
        Ok(FamilyFit::at(r_hat, self.sigma2(r_hat)?, Some(trace)))
    }

    /// gPCA on `(X_c, S(r), I)` keeping `k` components.
    pub fn ordination(&self, r: f64, k: usize) -> Result<(GpcaResult, Matrix)> {
        let point = family_inner_product(self.kernel.eigen(), r)?;
        let metric = SpectralMetric::with_rotated(self.kernel.eigen(), &point.weights, &self.rotated);
        let ordination = gpca::gpca(&self.centered, &metric, &vec![1.0; self.n()], k)?;
        let variable_scores = ordination.metric_axes.clone();
        Ok((ordination, variable_scores))
    }

    /// The pipeline at a fixed r, without a profile trace.
    pub fn at(&self, r: f64, k: usize) -> Result<AdaptiveResult> {
        let (ordination, variable_scores) = self.ordination(r, k)?;
        Ok(AdaptiveResult {
            fit: FamilyFit::at(r, self.sigma2(r)?, None),
            ordination,
            variable_scores,
        })
    }

    /// Estimates r, then runs the pipeline there.
    pub fn run(&self, k: usize) -> Result<AdaptiveResult> {
        let fit = self.fit()?;
        let (ordination, variable_scores) = self.ordination(fit.r_hat, k)?;
        Ok(AdaptiveResult {
            fit,
            ordination,
            variable_scores,
        })
    }

    /// One result per r, with each component's sign chosen so its axis has
    /// a nonnegative inner product with the same axis at the previous r.
    pub fn grid(&self, r_values: &[f64], k: usize) -> Result<Vec<AdaptiveResult>> {
        if r_values.is_empty() {
            return Err(Error::invalid("empty r grid"));
        }
        for w in r_values.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::invalid("r grid must be strictly ascending"));
            }
        }
        for &r in r_values {
            check_r(r)?;
        }
        let mut results: Vec<AdaptiveResult> = r_values.par_iter().map(|&r| self.at(r, k)).collect::<Result<_>>()?;
        for i in 1..results.len() {
            let (before, after) = results.split_at_mut(i);
            let prev = &before[i - 1].ordination.axes;
            let cur = &mut after[0];
            let shared = prev.cols().min(cur.ordination.axes.cols());
            for j in 0..shared {
                let dot = linalg::dot(&prev.column(j), &cur.ordination.axes.column(j));
                if dot < 0.0 {
                    cur.ordination.flip(j);
                    for row in 0..cur.variable_scores.rows() {
                        cur.variable_scores[(row, j)] = -cur.variable_scores[(row, j)];
                    }
                }
            }
        }
        Ok(results)
    }
}

/// Estimates r for already-centred data.
pub fn fit_r(x_centered: &Matrix, kernel: &VariableKernel) -> Result<FamilyFit> {
    AdaptiveModel::new(x_centered, kernel)?.fit()
}

/// Adaptive gPCA: centre, estimate r (unless given), then gPCA on
/// `(X_c, S(r̂), I)`.
pub fn adaptive_gpca(x: &Matrix, kernel: &VariableKernel, k: usize, r_override: Option<f64>) -> Result<AdaptiveResult> {
    if !kernel.is_trace_normalized() {
        warn!("adaptive gpca: kernel is not trace-normalised; r is relative to its scale");
    }
    let model = AdaptiveModel::new(x, kernel)?;
    match r_override {
        Some(r) => model.at(r, k),
        None => model.run(k),
    }
}

/// The adaptive pipeline over a grid of r values, sign-aligned across r.
pub fn family_grid(x: &Matrix, kernel: &VariableKernel, r_values: &[f64], k: usize) -> Result<Vec<AdaptiveResult>> {
    AdaptiveModel::new(x, kernel)?.grid(r_values, k)
}

/// `count` evenly spaced values from 0 to 1 inclusive.
pub fn uniform_grid(count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(p: usize, rng: &mut ChaCha8Rng) -> VariableKernel {
        let b = random(p, p, rng);
        let q = linalg::matmul_transpose(&b, &b)
            .unwrap()
            .add(&Matrix::identity(p).scale(0.05))
            .unwrap();
        VariableKernel::from_similarity(q, true).unwrap()
    }

    /// Direct log-likelihood of the matrix-normal model, minus the 2π term.
    fn direct_loglik(x: &Matrix, q: &Matrix, s1: f64, s2: f64) -> f64 {
        let (n, p) = x.shape();
        let cov = DMatrix::from_fn(p, p, |i, j| s1 * q[(i, j)] + if i == j { s2 } else { 0.0 });
        let chol = cov.cholesky().unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let xm = DMatrix::from_fn(p, n, |j, i| x[(i, j)]);
        let solved = chol.solve(&xm);
        let quad: f64 = xm.component_mul(&solved).sum();
        -0.5 * n as f64 * logdet - 0.5 * quad
    }

    #[test]
    fn weights_examples() {
        assert_eq!(raw_spectral_weights(&[3.0, 1.0], 0.5).unwrap(), vec![1.5, 1.0]);
        // (Q⁻¹ + I)⁻¹ for Q = diag(3, 1) has eigenvalues 3/4 and 1/2, the same
        // shape as (1.5, 1)
        let ratio = (3.0 / 4.0) / (1.0 / 2.0);
        let w = raw_spectral_weights(&[3.0, 1.0], 0.5).unwrap();
        assert!((w[0] / w[1] - ratio).abs() < 1e-15);
        assert!(raw_spectral_weights(&[1.0], 1.5).is_err());
        assert!(raw_spectral_weights(&[1.0], -0.1).is_err());
        assert_eq!(raw_spectral_weights(&[2.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn endpoints_of_the_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = random_kernel(6, &mut rng);
        let e = k.eigen();
        let zero = family_inner_product(e, 0.0).unwrap();
        let q = k.matrix();
        let s0 = zero.s_matrix(e);
        let c = q.trace() / s0.trace();
        assert!(s0.scale(c).max_abs_diff(q) < 1e-10);
        let one = family_inner_product(e, 1.0).unwrap();
        assert!(one.s_matrix(e).max_abs_diff(&Matrix::identity(6)) < 1e-10);
        assert!((zero.weights.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn sigma2_examples() {
        assert_eq!(profile_sigma2(&[6.0], &[2.0], 1.0, 3).unwrap(), 1.0);
        let t = [1.0, 2.0, 3.0];
        for r in [0.0, 0.3, 1.0] {
            assert!((profile_sigma2(&t, &[1.0; 3], r, 2).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(matches!(
            profile_sigma2(&[0.0, 0.0], &[1.0, 1.0], 0.5, 2),
            Err(Error::DegenerateData)
        ));
    }

    #[test]
    fn scalar_loglik() {
        let l = profile_loglik(&[4.0], &[1.0], 0.4, 1).unwrap();
        assert!((l - (-0.5 * 4f64.ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn profile_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..10 {
            let (n, p) = (8, 5);
            let kernel = random_kernel(p, &mut rng);
            let x = random(n, p, &mut rng);
            let model = AdaptiveModel::new(&x, &kernel).unwrap();
            let r = if case == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
            let s2 = model.sigma2(r).unwrap();
            let direct = direct_loglik(model.centered(), kernel.matrix(), r * s2, (1.0 - r) * s2);
            let profile = model.loglik(r).unwrap();
            assert!(
                (direct - profile).abs() < 1e-10 * profile.abs().max(1.0),
                "{direct} vs {profile}"
            );
        }
    }

    #[test]
    fn identity_kernel_is_flat_and_picks_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let kernel = VariableKernel::from_similarity(Matrix::identity(5), true).unwrap();
        let x = random(9, 5, &mut rng);
        let fit = fit_r(&x.center_columns(), &kernel).unwrap();
        assert_eq!(fit.r_hat, 1.0);
        let trace = fit.profile_trace.unwrap();
        assert_eq!(trace.len(), COARSE_POINTS);
        let first = trace[0].1;
        assert!(trace.iter().all(|&(_, l)| (l - first).abs() < 1e-9 * first.abs()));
    }

    #[test]
    fn refinement_beats_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kernel = random_kernel(12, &mut rng);
        let x = random(30, 12, &mut rng);
        let model = AdaptiveModel::new(&x, &kernel).unwrap();
        let fit = model.fit().unwrap();
        let best_grid = fit
            .profile_trace
            .as_ref()
            .unwrap()
            .iter()
            .fold(f64::NEG_INFINITY, |m, p| m.max(p.1));
        assert!(model.loglik(fit.r_hat).unwrap() >= best_grid);
        assert!((fit.sigma1_sq + fit.sigma2_noise_sq - fit.sigma2_hat).abs() < 1e-12 * fit.sigma2_hat);
    }

    #[test]
    fn identity_kernel_with_r_one_is_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let kernel = VariableKernel::from_similarity(Matrix::identity(7), true).unwrap();
        let x = random(10, 7, &mut rng);
        let a = adaptive_gpca(&x, &kernel, 3, Some(1.0)).unwrap();
        let b = gpca::pca(&x.center_columns(), 3).unwrap();
        for j in 0..3 {
            let (u, v) = (a.ordination.row_scores.column(j), b.row_scores.column(j));
            let s = linalg::dot(&u, &v).signum();
            assert!(u.iter().zip(&v).all(|(p, q)| (p - s * q).abs() < 1e-9));
        }
        assert!(a.fit.profile_trace.is_none());
    }

    #[test]
    fn grid_alignment_and_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let kernel = random_kernel(9, &mut rng);
        let x = random(12, 9, &mut rng);
        let rs = uniform_grid(11);
        let grid = family_grid(&x, &kernel, &rs, 3).unwrap();
        assert_eq!(grid.len(), 11);
        for pair in grid.windows(2) {
            for j in 0..3 {
                let d = linalg::dot(&pair[0].ordination.axes.column(j), &pair[1].ordination.axes.column(j));
                assert!(d >= 0.0);
            }
        }
        for (res, &r) in grid.iter().zip(&rs) {
            let direct = adaptive_gpca(&x, &kernel, 3, Some(r)).unwrap();
            for j in 0..3 {
                let (u, v) = (
                    res.ordination.row_scores.column(j),
                    direct.ordination.row_scores.column(j),
                );
                let s = linalg::dot(&u, &v).signum();
                assert!(u.iter().zip(&v).all(|(p, q)| (p - s * q).abs() < 1e-10));
            }
        }
        assert!(family_grid(&x, &kernel, &[], 2).is_err());
        assert!(family_grid(&x, &kernel, &[0.5, 0.2], 2).is_err());
    }

    #[test]
    fn spectrum_flattens_with_r() {
        let values = [4.0, 2.0, 0.5, 0.1, 0.0];
        let mut prev = f64::INFINITY;
        for r in uniform_grid(21) {
            let w = raw_spectral_weights(&values, r).unwrap();
            let ratio = w[0] / w[3];
            assert!(ratio <= prev * (1.0 + 1e-15));
            prev = ratio;
        }
        assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_columns_rejected() {
        let kernel = VariableKernel::from_similarity(Matrix::identity(3), true).unwrap();
        assert!(adaptive_gpca(&Matrix::zeros(4, 2), &kernel, 1, None).is_err());
        assert!(matches!(
            adaptive_gpca(&Matrix::zeros(4, 3), &kernel, 1, None),
            Err(Error::DegenerateData)
        ));
    }
}
