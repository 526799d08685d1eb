//! Double principal coordinates analysis of a count table with squared
//! Euclidean distances between its variables (species).
//!
//! Two routes are provided: the stepwise one (weighted MDS of the species,
//! sample barycenters, weighted PCA of the barycenters) and a single gPCA
//! on `(X P_{w_S}, P_{w_S}(−δ/2)P_{w_S}ᵀ, D_{w_L})`. They agree up to sign.

use crate::error::{Error, Result};
use crate::gpca::{self, Identity};
use crate::kernel::{double_center, validate_distances};
use crate::linalg::{self, Matrix, PSD_CLAMP};

/// MDS components below this fraction of the largest are dropped.
pub const MDS_RANK_TOL: f64 = 1e-10;

/// Relative eigenvalue gap below which components are compared as a
/// subspace rather than individually.
pub const TIE_TOL: f64 = 1e-9;

/// A nonnegative n×p count table with positive margins.
#[derive(Debug, Clone)]
pub struct CountTable {
    counts: Matrix,
    row_weights: Vec<f64>,
    col_weights: Vec<f64>,
    profiles: Matrix,
}

impl CountTable {
    pub fn new(counts: Matrix) -> Result<Self> {
        if !counts.is_finite() || counts.as_slice().iter().any(|&c| c < 0.0) {
            return Err(Error::invalid("counts must be finite and nonnegative"));
        }
        let (n, p) = counts.shape();
        let row_sums: Vec<f64> = (0..n).map(|i| counts.row(i).iter().sum()).collect();
        let mut col_sums = vec![0.0; p];
        for i in 0..n {
            for (s, c) in col_sums.iter_mut().zip(counts.row(i)) {
                *s += c;
            }
        }
        if let Some(i) = row_sums.iter().position(|&s| s <= 0.0) {
            return Err(Error::invalid(format!("sample {i} has no counts")));
        }
        if let Some(j) = col_sums.iter().position(|&s| s <= 0.0) {
            return Err(Error::invalid(format!("variable {j} has no counts")));
        }
        let total: f64 = row_sums.iter().sum();
        let row_weights: Vec<f64> = row_sums.iter().map(|s| s / total).collect();
        let col_weights: Vec<f64> = col_sums.iter().map(|s| s / total).collect();
        let inv: Vec<f64> = row_sums.iter().map(|s| 1.0 / s).collect();
        let profiles = counts.scale_rows(&inv);
        Ok(CountTable {
            counts,
            row_weights,
            col_weights,
            profiles,
        })
    }

    pub fn counts(&self) -> &Matrix {
        &self.counts
    }

    /// `w_L`: row sums over the grand total.
    pub fn row_weights(&self) -> &[f64] {
        &self.row_weights
    }

    /// `w_S`: column sums over the grand total.
    pub fn col_weights(&self) -> &[f64] {
        &self.col_weights
    }

    /// Row profiles: each row divided by its sum.
    pub fn profiles(&self) -> &Matrix {
        &self.profiles
    }

    /// Profiles centred by the `w_L`-weighted column means, which equal `w_S`.
    pub fn centered_profiles(&self) -> Matrix {
        self.profiles.center_columns_by(&self.col_weights)
    }
}

#[derive(Debug, Clone)]
pub struct DpcoaResult {
    /// Z (p×d): species positions from weighted MDS; stepwise route only.
    pub species_coordinates: Option<Matrix>,
    /// Y = XZ (n×d); stepwise route only.
    pub sample_barycenters: Option<Matrix>,
    /// n×k sample coordinates `L Λ^{1/2}`.
    pub sample_scores: Matrix,
    /// p×k species scores.
    pub species_scores: Matrix,
    pub eigenvalues: Vec<f64>,
    pub variance_fractions: Vec<f64>,
}

fn check_shapes(table: &CountTable, delta: &Matrix) -> Result<()> {
    validate_distances(delta)?;
    if delta.rows() != table.counts.cols() {
        return Err(Error::DimensionMismatch {
            op: "dpcoa",
            expected: format!("{0}x{0} distances", table.counts.cols()),
            found: format!("{}x{}", delta.rows(), delta.cols()),
        });
    }
    Ok(())
}

fn check_euclidean(values: &[f64]) -> Result<f64> {
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateData);
    }
    if let Some(&low) = values.last() {
        if low < -PSD_CLAMP * top {
            return Err(Error::NotEuclidean { eigenvalue: low });
        }
    }
    Ok(top)
}

/// Weighted classical MDS: rows of the returned Z are species positions
/// whose squared distances reproduce δ and whose `w_S`-weighted mean is 0.
pub fn weighted_mds(delta: &Matrix, weights: &[f64]) -> Result<Matrix> {
    let centered = double_center(delta, Some(weights))?;
    let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let p = weights.len();
    let b = Matrix::from_fn(p, p, |i, j| root[i] * centered[(i, j)] * root[j]);
    let e = linalg::sym_eigen(&b)?;
    let top = check_euclidean(&e.values)?;
    let d = e.values.iter().take_while(|&&l| l > MDS_RANK_TOL * top).count();
    let scale: Vec<f64> = e.values[..d].iter().map(|l| l.sqrt()).collect();
    let inv_root: Vec<f64> = root.iter().map(|r| 1.0 / r).collect();
    Ok(e.vectors.leading_columns(d).scale_columns(&scale).scale_rows(&inv_root))
}

/// Stepwise DPCoA: MDS of species, barycenters, then PCA on `(Y, I, D_{w_L})`.
pub fn dpcoa_stepwise(table: &CountTable, delta: &Matrix, k: usize) -> Result<DpcoaResult> {
    check_shapes(table, delta)?;
    let z = weighted_mds(delta, &table.col_weights)?;
    let y = linalg::matmul(&table.profiles, &z)?;
    let yc = y.center_columns_by(&y.weighted_column_means(&table.row_weights));
    let fit = gpca::gpca(&yc, &Identity(yc.cols()), &table.row_weights, k)?;
    let species_scores = linalg::matmul(&z, &fit.axes)?;
    Ok(DpcoaResult {
        species_coordinates: Some(z),
        sample_barycenters: Some(y),
        sample_scores: fit.row_coordinates,
        species_scores,
        eigenvalues: fit.eigenvalues,
        variance_fractions: fit.variance_fractions,
    })
}

/// `P_{w_S}(−δ/2)P_{w_S}ᵀ`, checked to be PSD up to the clamp band.
pub fn dpcoa_metric(delta: &Matrix, weights: &[f64]) -> Result<Matrix> {
    let q = double_center(delta, Some(weights))?;
    let e = linalg::sym_eigen(&q)?;
    check_euclidean(&e.values)?;
    Ok(q)
}

/// DPCoA as gPCA on `(X P_{w_S}, P_{w_S}(−δ/2)P_{w_S}ᵀ, D_{w_L})`.
pub fn dpcoa_gpca(table: &CountTable, delta: &Matrix, k: usize) -> Result<DpcoaResult> {
    check_shapes(table, delta)?;
    let q = dpcoa_metric(delta, &table.col_weights)?;
    let x = table.centered_profiles();
    let fit = gpca::gpca(&x, &q, &table.row_weights, k)?;
    Ok(DpcoaResult {
        species_coordinates: None,
        sample_barycenters: None,
        sample_scores: fit.row_coordinates,
        species_scores: fit.metric_axes,
        eigenvalues: fit.eigenvalues,
        variance_fractions: fit.variance_fractions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub max_sample_score_gap: f64,
    pub max_species_score_gap: f64,
    pub max_eigenvalue_gap: f64,
}

/// Consecutive index ranges of eigenvalues closer than [`TIE_TOL`]·λ_max.
fn tie_groups(values: &[f64]) -> Vec<std::ops::Range<usize>> {
    let top = values.first().copied().unwrap_or(0.0).abs();
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || (values[i - 1] - values[i]).abs() >= TIE_TOL * top {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}

/// Largest gap between two score matrices, per axis up to sign, or through
/// the projector `F Fᵀ` on blocks of tied axes.
pub fn aligned_gap(a: &Matrix, b: &Matrix, values: &[f64]) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "aligned gap",
            expected: format!("{}x{}", a.rows(), a.cols()),
            found: format!("{}x{}", b.rows(), b.cols()),
        });
    }
    let mut gap: f64 = 0.0;
    for group in tie_groups(&values[..a.cols()]) {
        if group.len() == 1 {
            let j = group.start;
            let (u, v) = (a.column(j), b.column(j));
            let s = if linalg::dot(&u, &v) < 0.0 { -1.0 } else { 1.0 };
            for (x, y) in u.iter().zip(&v) {
                gap = gap.max((x - s * y).abs());
            }
        } else {
            let idx: Vec<usize> = group.collect();
            let fa = a.select_columns(&idx);
            let fb = b.select_columns(&idx);
            let pa = linalg::matmul_transpose(&fa, &fa)?;
            let pb = linalg::matmul_transpose(&fb, &fb)?;
            gap = gap.max(pa.max_abs_diff(&pb));
        }
    }
    Ok(gap)
}

/// Runs both routes and reports how far apart they are.
pub fn dpcoa_equivalence_report(table: &CountTable, delta: &Matrix, k: usize) -> Result<EquivalenceReport> {
    let (a, b) = rayon::join(|| dpcoa_stepwise(table, delta, k), || dpcoa_gpca(table, delta, k));
    let (a, b) = (a?, b?);
    let kk = a.eigenvalues.len().min(b.eigenvalues.len());
    let lead = |m: &Matrix| m.leading_columns(kk);
    let mut eig_gap: f64 = 0.0;
    for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        eig_gap = eig_gap.max((x - y).abs());
    }
    if a.eigenvalues.len() != b.eigenvalues.len() {
        eig_gap = f64::INFINITY;
    }
    Ok(EquivalenceReport {
        max_sample_score_gap: aligned_gap(&lead(&a.sample_scores), &lead(&b.sample_scores), &a.eigenvalues)?,
        max_species_score_gap: aligned_gap(&lead(&a.species_scores), &lead(&b.species_scores), &a.eigenvalues)?,
        max_eigenvalue_gap: eig_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_counts(n: usize, p: usize, rng: &mut ChaCha8Rng) -> CountTable {
        CountTable::new(Matrix::from_fn(n, p, |_, _| rng.random_range(1..20) as f64)).unwrap()
    }

    fn random_delta(p: usize, dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let pts = Matrix::from_fn(p, dim, |_, _| rng.random_range(-1.0..1.0));
        Matrix::from_fn(p, p, |i, j| {
            pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
        })
    }

    #[test]
    fn count_table_margins() {
        let t = CountTable::new(Matrix::from_rows(&[[1.0, 3.0], [2.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(t.row_weights(), &[0.5, 0.5]);
        assert_eq!(t.col_weights(), &[0.375, 0.625]);
        assert_eq!(t.profiles().row(0), &[0.25, 0.75]);
        assert!(CountTable::new(Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap()).is_err());
        assert!(CountTable::new(Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap()).is_err());
        assert!(CountTable::new(Matrix::from_rows(&[[-1.0, 1.0]]).unwrap()).is_err());
    }

    #[test]
    fn hand_traced_two_species() {
        let t = CountTable::new(Matrix::identity(2)).unwrap();
        let delta = Matrix::from_rows(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let h = 0.5f64.sqrt();
        let a = dpcoa_stepwise(&t, &delta, 1).unwrap();
        let z = a.species_coordinates.as_ref().unwrap();
        assert_eq!(z.cols(), 1);
        assert!((z[(0, 0)].abs() - h).abs() < 1e-12 && (z[(0, 0)] + z[(1, 0)]).abs() < 1e-12);
        assert!((a.sample_scores[(0, 0)].abs() - h).abs() < 1e-12);
        assert!((a.sample_scores[(0, 0)] + a.sample_scores[(1, 0)]).abs() < 1e-12);
        let b = dpcoa_gpca(&t, &delta, 1).unwrap();
        assert!(aligned_gap(&a.sample_scores, &b.sample_scores, &a.eigenvalues).unwrap() < 1e-8);
    }

    #[test]
    fn identical_species_rejected() {
        let t = CountTable::new(Matrix::identity(3)).unwrap();
        assert!(dpcoa_stepwise(&t, &Matrix::zeros(3, 3), 1).is_err());
        assert!(dpcoa_gpca(&t, &Matrix::zeros(3, 3), 1).is_err());
    }

    #[test]
    fn barycenters_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let t = random_counts(6, 10, &mut rng);
        let delta = random_delta(10, 4, &mut rng);
        let r = dpcoa_stepwise(&t, &delta, 3).unwrap();
        let z = r.species_coordinates.unwrap();
        let y = r.sample_barycenters.unwrap();
        assert!(linalg::matmul(t.profiles(), &z).unwrap().max_abs_diff(&y) < 1e-10);
        for i in 0..10 {
            for j in 0..10 {
                let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!((d.sqrt() - delta[(i, j)].sqrt()).abs() < 1e-8);
            }
        }
        // each barycenter is a convex combination of species positions with
        // the profile as coefficients, so it lies inside every bounding slab
        for i in 0..6 {
            for c in 0..z.cols() {
                let col = z.column(c);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(y[(i, c)] >= lo - 1e-12 && y[(i, c)] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let t = random_counts(5, 7, &mut rng);
            let delta = random_delta(7, 3, &mut rng);
            let rep = dpcoa_equivalence_report(&t, &delta, 2).unwrap();
            assert!(rep.max_sample_score_gap < 1e-8, "{rep:?}");
            assert!(rep.max_species_score_gap < 1e-8, "{rep:?}");
            assert!(rep.max_eigenvalue_gap < 1e-10, "{rep:?}");
        }
    }

    #[test]
    fn minimal_k_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let t = random_counts(4, 5, &mut rng);
        let delta = random_delta(5, 2, &mut rng);
        let rep = dpcoa_equivalence_report(&t, &delta, 1).unwrap();
        assert!(rep.max_sample_score_gap < 1e-8 && rep.max_species_score_gap < 1e-8);
        assert!(dpcoa_equivalence_report(&t, &random_delta(4, 2, &mut rng), 1).is_err());
    }

    #[test]
    fn centring_by_row_and_column_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = random_counts(6, 8, &mut rng);
        let x = t.profiles();
        // X P_{w_S} with P_w = I − 1wᵀ
        let ps = Matrix::from_fn(8, 8, |i, j| if i == j { 1.0 } else { 0.0 } - t.col_weights()[j]);
        let pl = Matrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 0.0 } - t.row_weights()[j]);
        let left = linalg::matmul(x, &ps).unwrap();
        let right = linalg::matmul(&pl, x).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-14);
        assert!(left.max_abs_diff(&t.centered_profiles()) < 1e-14);
    }

    #[test]
    fn tied_axes_compared_as_subspace() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let c = 0.5f64.sqrt();
        let b = Matrix::from_rows(&[[c, c], [-c, c], [0.0, 0.0]]).unwrap();
        assert!(aligned_gap(&a, &b, &[2.0, 2.0]).unwrap() < 1e-15);
        assert!(aligned_gap(&a, &b, &[3.0, 2.0]).unwrap() > 0.1);
    }

    #[test]
    fn uniform_weights_triple() {
        // equal margins give w_L = 1/n and w_S = 1/p
        let c = Matrix::from_rows(&[[1.0, 2.0, 1.0], [2.0, 1.0, 1.0], [1.0, 1.0, 2.0]]).unwrap();
        let t = CountTable::new(c).unwrap();
        assert!(t.row_weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let delta = random_delta(3, 2, &mut rng);
        let r = dpcoa_gpca(&t, &delta, 1).unwrap();
        let x = t.profiles().center_columns();
        let q = double_center(&delta, None).unwrap();
        let plain = gpca::gpca(&x, &q, &[1.0; 3], 1).unwrap();
        // D = I/n rescales eigenvalues by 1/n and leaves coordinates alone
        assert!(aligned_gap(&r.sample_scores, &plain.row_coordinates, &r.eigenvalues).unwrap() < 1e-10);
        assert!((3.0 * r.eigenvalues[0] - plain.eigenvalues[0]).abs() < 1e-12);
    }
}
