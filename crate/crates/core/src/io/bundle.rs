//! Loading a data matrix together with its variable-similarity source and
//! aligning them by variable name.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::io::metadata::Metadata;
use crate::io::newick::parse_newick;
use crate::io::table::{read_matrix, standardize_columns, started_log, NamedMatrix, Orientation};
use crate::kernel::{distances_to_kernel, VariableKernel};
use crate::linalg::Matrix;
use crate::tree::PhyloTree;

/// Where the variable kernel comes from.
#[derive(Debug, Clone)]
pub enum KernelSource {
    Tree(PhyloTree),
    /// Squared Euclidean distances between variables.
    Distances(NamedMatrix),
    /// A ready-made similarity matrix.
    Similarity(NamedMatrix),
}

impl KernelSource {
    pub fn read_tree(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(KernelSource::Tree(parse_newick(&text)?))
    }

    pub fn read_distances(path: &Path) -> Result<Self> {
        Ok(KernelSource::Distances(read_square(path)?))
    }

    pub fn read_similarity(path: &Path) -> Result<Self> {
        Ok(KernelSource::Similarity(read_square(path)?))
    }

    /// Variable names in kernel order.
    pub fn names(&self) -> Vec<String> {
        match self {
            KernelSource::Tree(t) => t.leaf_names(),
            KernelSource::Distances(m) | KernelSource::Similarity(m) => m.col_names.clone(),
        }
    }

    /// Trace-normalised kernel over the variables at `idx` (kernel order).
    pub fn kernel(&self, idx: &[usize]) -> Result<VariableKernel> {
        if idx.len() < 2 {
            return Err(Error::Alignment(format!(
                "only {} shared variable(s); need at least 2",
                idx.len()
            )));
        }
        match self {
            KernelSource::Tree(t) => VariableKernel::from_similarity(t.shared_ancestry().select_square(idx), true),
            KernelSource::Distances(m) => distances_to_kernel(&m.matrix.select_square(idx), None),
            KernelSource::Similarity(m) => VariableKernel::from_similarity(m.matrix.select_square(idx), true),
        }
    }

    /// Squared distances over the variables at `idx`; patristic for trees.
    pub fn distances(&self, idx: &[usize]) -> Result<Matrix> {
        match self {
            KernelSource::Tree(t) => Ok(t.leaf_distances().select_square(idx)),
            KernelSource::Distances(m) => Ok(m.matrix.select_square(idx)),
            KernelSource::Similarity(_) => Err(Error::invalid("a similarity matrix does not define distances")),
        }
    }
}

fn read_square(path: &Path) -> Result<NamedMatrix> {
    let m = read_matrix(path, Orientation::SamplesAsRows)?;
    if m.row_names != m.col_names {
        return Err(Error::Table {
            path: path.to_path_buf(),
            row: 1,
            col: 1,
            message: "row names must equal column names in the same order".into(),
        });
    }
    Ok(m)
}

/// Fraction of samples in which each column is nonzero.
pub fn prevalence(x: &Matrix) -> Vec<f64> {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|j| (0..x.rows()).filter(|&i| x[(i, j)] != 0.0).count() as f64 / n)
        .collect()
}

fn preview(names: &[&String]) -> String {
    let shown: Vec<&str> = names.iter().take(5).map(|s| s.as_str()).collect();
    let more = names.len().saturating_sub(5);
    if more > 0 {
        format!("{} (+{more} more)", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Data and kernel sharing one variable order.
#[derive(Debug, Clone)]
pub struct Aligned {
    /// Data with columns in kernel order.
    pub data: NamedMatrix,
    /// Positions of the kept variables in the source's own order.
    pub source_index: Vec<usize>,
}

/// Matches data columns to source variables by name.
///
/// Names in `dropped` are removed from both sides first. Any remaining
/// mismatch is an error unless `prune` is set, in which case only the
/// shared names are kept.
pub fn align(data: &NamedMatrix, source_names: &[String], prune: bool, dropped: &HashSet<String>) -> Result<Aligned> {
    let col_of: HashMap<&str, usize> = data
        .col_names
        .iter()
        .enumerate()
        .filter(|(_, n)| !dropped.contains(*n))
        .map(|(j, n)| (n.as_str(), j))
        .collect();
    let source_set: HashSet<&str> = source_names.iter().map(String::as_str).collect();
    let only_data: Vec<&String> = data
        .col_names
        .iter()
        .filter(|n| !dropped.contains(*n) && !source_set.contains(n.as_str()))
        .collect();
    let only_source: Vec<&String> = source_names
        .iter()
        .filter(|n| !dropped.contains(*n) && !col_of.contains_key(n.as_str()))
        .collect();
    if !prune && (!only_data.is_empty() || !only_source.is_empty()) {
        let mut parts = Vec::new();
        if !only_data.is_empty() {
            parts.push(format!(
                "{} data variable(s) missing from the kernel source: {}",
                only_data.len(),
                preview(&only_data)
            ));
        }
        if !only_source.is_empty() {
            parts.push(format!(
                "{} kernel variable(s) missing from the data: {}",
                only_source.len(),
                preview(&only_source)
            ));
        }
        return Err(Error::Alignment(format!(
            "{}; pass --prune to keep the shared variables",
            parts.join("; ")
        )));
    }
    if prune && (!only_data.is_empty() || !only_source.is_empty()) {
        info!(
            "pruned {} data-only and {} kernel-only variable(s)",
            only_data.len(),
            only_source.len()
        );
    }
    let mut source_index = Vec::new();
    let mut data_index = Vec::new();
    for (s, name) in source_names.iter().enumerate() {
        if dropped.contains(name) {
            continue;
        }
        if let Some(&j) = col_of.get(name.as_str()) {
            source_index.push(s);
            data_index.push(j);
        }
    }
    if data_index.len() < 2 {
        return Err(Error::Alignment(format!(
            "only {} variable(s) shared between data and kernel source",
            data_index.len()
        )));
    }
    Ok(Aligned {
        data: data.select_columns(&data_index),
        source_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Transform {
    #[default]
    None,
    /// `log(x + c)`.
    Log { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Preprocess {
    pub transform: Transform,
    /// Keep variables present in at least this fraction of samples.
    pub min_prevalence: Option<f64>,
    pub standardize: bool,
}

/// A data matrix aligned to a kernel, with optional metadata.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    /// Preprocessed data, columns in kernel order.
    pub data: NamedMatrix,
    /// Raw values of the same cells before transformation.
    pub raw: NamedMatrix,
    pub source: Option<KernelSource>,
    pub source_index: Vec<usize>,
    pub metadata: Option<Metadata>,
}

impl DatasetBundle {
    /// Filters by prevalence, aligns to `source` (when given), then
    /// transforms and standardises.
    pub fn assemble(
        data: NamedMatrix,
        source: Option<KernelSource>,
        metadata: Option<Metadata>,
        prune: bool,
        pre: Preprocess,
    ) -> Result<Self> {
        let mut dropped = HashSet::new();
        if let Some(threshold) = pre.min_prevalence {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::invalid(format!("min prevalence {threshold} outside [0, 1]")));
            }
            for (name, prev) in data.col_names.iter().zip(prevalence(&data.matrix)) {
                if prev < threshold {
                    dropped.insert(name.clone());
                }
            }
            if !dropped.is_empty() {
                info!("dropped {} variable(s) below prevalence {threshold}", dropped.len());
            }
        }
        let (raw, source_index) = match &source {
            Some(s) => {
                let a = align(&data, &s.names(), prune, &dropped)?;
                (a.data, a.source_index)
            }
            None => {
                let keep: Vec<usize> = (0..data.col_names.len())
                    .filter(|&j| !dropped.contains(&data.col_names[j]))
                    .collect();
                (data.select_columns(&keep), keep)
            }
        };
        if let Some(meta) = &metadata {
            let missing = raw.row_names.iter().filter(|id| !meta.contains(id)).count();
            if missing > 0 {
                warn!("{missing} sample(s) have no metadata row");
            }
        }
        let mut x = raw.matrix.clone();
        if let Transform::Log { c } = pre.transform {
            x = started_log(&x, c)?;
        }
        if pre.standardize {
            x = standardize_columns(&x)?;
        }
        let data = NamedMatrix::new(raw.row_names.clone(), raw.col_names.clone(), x)?;
        Ok(DatasetBundle {
            data,
            raw,
            source,
            source_index,
            metadata,
        })
    }

    /// The kernel over the kept variables.
    pub fn kernel(&self) -> Result<VariableKernel> {
        match &self.source {
            Some(s) => s.kernel(&self.source_index),
            None => Err(Error::invalid("no kernel source given")),
        }
    }

    pub fn distances(&self) -> Result<Matrix> {
        match &self.source {
            Some(s) => s.distances(&self.source_index),
            None => Err(Error::invalid("no distance source given")),
        }
    }
}
