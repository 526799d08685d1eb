//! Simulation studies comparing standard PCA, gPCA on (X, Q, I) and
//! adaptive gPCA on rank-one-plus-noise data whose principal axis is
//! structured by a random tree.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::adaptive_gpca;
use crate::gpca::{self, gpca};
use crate::kernel::{tree_to_kernel, VariableKernel};
use crate::linalg::{Matrix, SymEigen};
use crate::tree::PhyloTree;

/// Name of the generator recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha8Rng; normals: rand_distr StandardNormal (ziggurat)";

/// One step of the SplitMix64 sequence starting from `state`.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `i` under `master`.
pub fn replicate_seed(master: u64, i: u64) -> u64 {
    splitmix64(master ^ splitmix64(i))
}

/// A random rooted binary tree on leaves `t1..tp`.
///
/// Leaf labels are shuffled, then each leaf set is split at a uniformly
/// chosen point until singletons remain. Branch lengths are Uniform(0, 1).
pub fn random_tree(p: usize, seed: u64) -> Result<PhyloTree> {
    if p < 2 {
        return Err(Error::invalid(format!("random tree needs p >= 2, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (1..=p).collect();
    labels.shuffle(&mut rng);

    let mut nodes: Vec<(Option<usize>, f64, Option<String>)> = Vec::with_capacity(2 * p - 1);
    // (parent, leaf range)
    let mut stack = vec![(None, 0..p)];
    while let Some((parent, range)) = stack.pop() {
        let length = if parent.is_some() { rng.random::<f64>() } else { 0.0 };
        let id = nodes.len();
        if range.len() == 1 {
            nodes.push((parent, length, Some(format!("t{}", labels[range.start]))));
            continue;
        }
        nodes.push((parent, length, None));
        let split = range.start + rng.random_range(1..range.len());
        stack.push((Some(id), split..range.end));
        stack.push((Some(id), range.start..split));
    }
    PhyloTree::from_parents(nodes)
}

/// Non-root nodes whose descendant leaf count lies in `[lo, hi]`.
pub fn branches_with_descendants(tree: &PhyloTree, lo: usize, hi: usize) -> Vec<usize> {
    let counts = tree.descendant_counts();
    (0..tree.node_count())
        .filter(|&v| v != tree.root() && (lo..=hi).contains(&counts[v]))
        .collect()
}

/// Data `X = u vᵀ + E` with the generating vectors.
#[derive(Debug, Clone)]
pub struct SimData {
    pub x: Matrix,
    pub u_true: Vec<f64>,
    pub v_true: Vec<f64>,
}

fn normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

/// `v = V₍m₎ z` with `z ~ N(0, I_m)`.
pub(crate) fn smooth_axis(eigen: &SymEigen, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z = normals(rng, m);
    let p = eigen.dim();
    (0..p)
        .map(|i| (0..m).map(|j| eigen.vectors[(i, j)] * z[j]).sum())
        .collect()
}

fn rank_one_plus_noise(u: Vec<f64>, v: Vec<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> SimData {
    let (n, p) = (u.len(), v.len());
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, j)] = u[i] * v[j] + sigma * e;
        }
    }
    SimData {
        x,
        u_true: u,
        v_true: v,
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!("sigma = {sigma} must be finite and >= 0")));
    }
    Ok(())
}

/// Tree-smooth axis: `v ~ N(0, V₍m₎V₍m₎ᵀ)` from the top `m` kernel eigenvectors.
pub fn simulate_a(q_eigen: &SymEigen, n: usize, m: usize, sigma: f64, seed: u64) -> Result<SimData> {
    let p = q_eigen.dim();
    if m < 1 || m > p {
        return Err(Error::invalid(format!("m = {m} must lie in 1..={p}")));
    }
    check_sigma(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = normals(&mut rng, n);
    let v = smooth_axis(q_eigen, m, &mut rng);
    Ok(rank_one_plus_noise(u, v, sigma, &mut rng))
}

/// Clade axis: `v = I_b / √|b|` over the leaves descending from `branch`.
pub fn simulate_b(tree: &PhyloTree, branch: usize, n: usize, sigma: f64, seed: u64) -> Result<SimData> {
    check_sigma(sigma)?;
    let members = tree.descendant_leaves(branch)?;
    let p = tree.leaf_count();
    let c = 1.0 / (members.len() as f64).sqrt();
    let mut v = vec![0.0; p];
    for i in members {
        v[i] = c;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = normals(&mut rng, n);
    Ok(rank_one_plus_noise(u, v, sigma, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SimMode {
    /// Smooth axis from the top `m` kernel eigenvectors.
    A { m: usize },
    /// Clade indicator axis for a node of the tree.
    B { branch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub p: usize,
    pub n: usize,
    pub sigma: f64,
    pub mode: SimMode,
    pub replicates: usize,
    pub master_seed: u64,
    pub tree_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pca,
    GpcaQ,
    Adaptive,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pca, Method::GpcaQ, Method::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::GpcaQ => "gpca_q",
            Method::Adaptive => "adaptive",
        }
    }
}

/// One method on one replicate; correlations are `None` when the fit failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub replicate: usize,
    pub method: Method,
    pub axis_corr: Option<f64>,
    pub score_corr: Option<f64>,
    pub r_hat: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimAggregate {
    pub method: Method,
    pub completed: usize,
    pub failed: usize,
    pub axis_corr_mean: f64,
    pub axis_corr_se: f64,
    pub score_corr_mean: f64,
    pub score_corr_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub config: SimConfig,
    /// Leaf count under the branch in mode B, `m` in mode A.
    pub m_or_branch_size: usize,
    pub records: Vec<SimRecord>,
    pub aggregates: Vec<SimAggregate>,
}

impl SimOutcome {
    pub fn aggregate(&self, method: Method) -> &SimAggregate {
        self.aggregates
            .iter()
            .find(|a| a.method == method)
            .expect("every method is aggregated")
    }

    fn mode_name(&self) -> &'static str {
        match self.config.mode {
            SimMode::A { .. } => "A",
            SimMode::B { .. } => "B",
        }
    }
}

/// |Pearson correlation| of two vectors.
pub fn abs_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("correlation needs two vectors of equal length >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::invalid("correlation with a constant vector"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).abs().min(1.0))
}

struct Estimate {
    axis: Vec<f64>,
    score: Vec<f64>,
    r_hat: Option<f64>,
}

fn estimate(method: Method, x: &Matrix, kernel: &VariableKernel) -> Result<Estimate> {
    match method {
        Method::Pca => {
            let fit = gpca::pca(&x.center_columns(), 1)?;
            Ok(Estimate {
                axis: fit.metric_axes.column(0),
                score: fit.row_scores.column(0),
                r_hat: None,
            })
        }
        Method::GpcaQ => {
            let fit = gpca(&x.center_columns(), kernel, &vec![1.0; x.rows()], 1)?;
            Ok(Estimate {
                axis: fit.metric_axes.column(0),
                score: fit.row_scores.column(0),
                r_hat: None,
            })
        }
        Method::Adaptive => {
            let fit = adaptive_gpca(x, kernel, 1, None)?;
            Ok(Estimate {
                axis: fit.variable_scores.column(0),
                score: fit.ordination.row_scores.column(0),
                r_hat: Some(fit.fit.r_hat),
            })
        }
    }
}

fn replicate(config: &SimConfig, tree: &PhyloTree, kernel: &VariableKernel, i: usize) -> Vec<SimRecord> {
    let seed = replicate_seed(config.master_seed, i as u64);
    let data = match config.mode {
        SimMode::A { m } => simulate_a(kernel.eigen(), config.n, m, config.sigma, seed),
        SimMode::B { branch } => simulate_b(tree, branch, config.n, config.sigma, seed),
    };
    Method::ALL
        .iter()
        .map(|&method| {
            let result = match &data {
                Err(e) => Err(e.to_string()),
                Ok(d) => estimate(method, &d.x, kernel)
                    .and_then(|est| {
                        Ok((
                            abs_correlation(&est.axis, &d.v_true)?,
                            abs_correlation(&est.score, &d.u_true)?,
                            est.r_hat,
                        ))
                    })
                    .map_err(|e| e.to_string()),
            };
            match result {
                Ok((a, s, r)) => SimRecord {
                    replicate: i,
                    method,
                    axis_corr: Some(a),
                    score_corr: Some(s),
                    r_hat: r,
                    error: None,
                },
                Err(e) => SimRecord {
                    replicate: i,
                    method,
                    axis_corr: None,
                    score_corr: None,
                    r_hat: None,
                    error: Some(e),
                },
            }
        })
        .collect()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn aggregate(records: &[SimRecord]) -> Vec<SimAggregate> {
    Method::ALL
        .iter()
        .map(|&method| {
            let mine: Vec<&SimRecord> = records.iter().filter(|r| r.method == method).collect();
            let axis: Vec<f64> = mine.iter().filter_map(|r| r.axis_corr).collect();
            let score: Vec<f64> = mine.iter().filter_map(|r| r.score_corr).collect();
            let (axis_corr_mean, axis_corr_se) = mean_se(&axis);
            let (score_corr_mean, score_corr_se) = mean_se(&score);
            SimAggregate {
                method,
                completed: axis.len(),
                failed: mine.len() - axis.len(),
                axis_corr_mean,
                axis_corr_se,
                score_corr_mean,
                score_corr_se,
            }
        })
        .collect()
}

/// Runs every replicate of `config`, with the tree drawn from `tree_seed`.
pub fn run_comparison(config: &SimConfig) -> Result<SimOutcome> {
    let tree = random_tree(config.p, config.tree_seed)?;
    let kernel = tree_to_kernel(&tree)?;
    run_comparison_on(config, &tree, &kernel)
}

/// Runs every replicate of `config` on a given tree and its kernel.
pub fn run_comparison_on(config: &SimConfig, tree: &PhyloTree, kernel: &VariableKernel) -> Result<SimOutcome> {
    if tree.leaf_count() != config.p || kernel.dim() != config.p {
        return Err(Error::invalid("tree and kernel must have p leaves"));
    }
    if config.n < 2 {
        return Err(Error::invalid("simulation needs n >= 2"));
    }
    check_sigma(config.sigma)?;
    let m_or_branch_size = match config.mode {
        SimMode::A { m } => {
            if m < 1 || m > config.p {
                return Err(Error::invalid(format!("m = {m} must lie in 1..={}", config.p)));
            }
            m
        }
        SimMode::B { branch } => tree.descendant_leaves(branch)?.len(),
    };
    let records: Vec<SimRecord> = (0..config.replicates)
        .into_par_iter()
        .flat_map_iter(|i| replicate(config, tree, kernel, i))
        .collect();
    let aggregates = aggregate(&records);
    Ok(SimOutcome {
        config: config.clone(),
        m_or_branch_size,
        records,
        aggregates,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        v.to_string()
    }
}

/// Tidy per-replicate CSV; failed fits show `NA`.
pub fn write_tidy_csv<W: Write>(outcomes: &[SimOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mode",
        "m_or_branch_size",
        "sigma",
        "replicate",
        "method",
        "axis_corr",
        "score_corr",
    ])?;
    for o in outcomes {
        for r in &o.records {
            w.write_record([
                o.mode_name().to_string(),
                o.m_or_branch_size.to_string(),
                o.config.sigma.to_string(),
                r.replicate.to_string(),
                r.method.name().to_string(),
                fmt_opt(r.axis_corr),
                fmt_opt(r.score_corr),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::output("<csv>", e))?;
    Ok(())
}

/// Means and standard errors per configuration and method.
pub fn write_aggregate_csv<W: Write>(outcomes: &[SimOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mode",
        "m_or_branch_size",
        "sigma",
        "method",
        "completed",
        "failed",
        "axis_corr_mean",
        "axis_corr_se",
        "score_corr_mean",
        "score_corr_se",
    ])?;
    for o in outcomes {
        for a in &o.aggregates {
            w.write_record([
                o.mode_name().to_string(),
                o.m_or_branch_size.to_string(),
                o.config.sigma.to_string(),
                a.method.name().to_string(),
                a.completed.to_string(),
                a.failed.to_string(),
                fmt_num(a.axis_corr_mean),
                fmt_num(a.axis_corr_se),
                fmt_num(a.score_corr_mean),
                fmt_num(a.score_corr_se),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::output("<csv>", e))?;
    Ok(())
}
