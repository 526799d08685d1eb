//! Read-only HTTP service over a precomputed family grid.
//!
//! Every response body is rendered once at startup, so requests only copy
//! bytes out of immutable state.

use std::collections::{BTreeSet, HashSet};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::json::{read_ordination, to_json_bytes, OrdinationDoc, VariableEntry};

/// Default count for `--top-loadings` without a value.
pub const DEFAULT_TOP_LOADINGS: usize = 500;

const INDEX_HTML: &str = include_str!("server_index.html");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMeta {
    pub schema_version: u32,
    pub method: String,
    pub r_values: Vec<f64>,
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub metadata_columns: Vec<String>,
    pub variance_fractions: Vec<Vec<f64>>,
    pub r_hat: Option<f64>,
    pub variables_shown: usize,
    pub variables_total: usize,
}

#[derive(Debug)]
pub struct GridService {
    meta: GridMeta,
    meta_body: Bytes,
    entries: Vec<Bytes>,
    profile: Bytes,
    assets: Option<PathBuf>,
}

fn norm(coords: &[f64]) -> f64 {
    coords.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Names of the `count` variables with the largest loading norm.
fn top_variables(variables: &[VariableEntry], count: usize) -> HashSet<String> {
    let mut ranked: Vec<(f64, &str)> = variables.iter().map(|v| (norm(&v.coords), v.name.as_str())).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ranked
        .into_iter()
        .take(count)
        .map(|(_, name)| name.to_string())
        .collect()
}

impl GridService {
    /// Validates a grid document and renders all bodies. With
    /// `top_loadings`, variable lists are thinned to the variables with the
    /// largest loadings at r̂.
    pub fn new(doc: OrdinationDoc, top_loadings: Option<usize>) -> Result<Self> {
        let mut grid = match doc.grid {
            Some(g) if !g.is_empty() => g,
            _ => {
                return Err(Error::invalid(
                    "input has no grid entries; produce it with `agpca grid`",
                ))
            }
        };
        if grid.windows(2).any(|w| !(w[0].r < w[1].r)) {
            return Err(Error::invalid("grid r values must be strictly ascending"));
        }
        let k = grid[0].eigenvalues.len();
        let n = grid[0].samples.len();
        let p = grid[0].variables.len();
        for (i, e) in grid.iter().enumerate() {
            if e.samples.len() != n || e.variables.len() != p {
                return Err(Error::invalid(format!(
                    "grid entry {i} has a different shape from entry 0"
                )));
            }
        }

        let shown = match top_loadings {
            Some(count) if count < p => {
                let reference = if doc.variables.len() == p {
                    &doc.variables
                } else {
                    let target = doc.r.unwrap_or(grid[0].r);
                    let nearest = grid
                        .iter()
                        .min_by(|a, b| (a.r - target).abs().total_cmp(&(b.r - target).abs()))
                        .expect("grid is nonempty");
                    &nearest.variables
                };
                let keep = top_variables(reference, count);
                for e in &mut grid {
                    e.variables.retain(|v| keep.contains(&v.name));
                }
                count
            }
            _ => p,
        };

        let metadata_columns: BTreeSet<String> = grid[0]
            .samples
            .iter()
            .flat_map(|s| s.metadata.keys().cloned())
            .collect();
        let meta = GridMeta {
            schema_version: doc.schema_version,
            method: doc.method.clone(),
            r_values: grid.iter().map(|e| e.r).collect(),
            k,
            n,
            p,
            metadata_columns: metadata_columns.into_iter().collect(),
            variance_fractions: grid.iter().map(|e| e.variance_fractions.clone()).collect(),
            r_hat: doc.r,
            variables_shown: shown,
            variables_total: p,
        };
        let entries = grid
            .iter()
            .map(|e| to_json_bytes(e).map(Bytes::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridService {
            meta_body: Bytes::from(to_json_bytes(&meta)?),
            meta,
            entries,
            profile: Bytes::from(to_json_bytes(&doc.profile_trace)?),
            assets: None,
        })
    }

    pub fn load(path: &Path, top_loadings: Option<usize>) -> Result<Self> {
        Self::new(read_ordination(path)?, top_loadings)
    }

    /// Serves static files from `dir` instead of the built-in page.
    pub fn with_assets(mut self, dir: PathBuf) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::invalid(format!(
                "assets directory {} does not exist",
                dir.display()
            )));
        }
        self.assets = Some(dir);
        Ok(self)
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn json_body(status: StatusCode, body: Bytes) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, "application/json; charset=utf-8")],
        body,
    )
        .into_response()
}

fn json_error(status: StatusCode, message: String) -> Response {
    let body = serde_json::to_vec(&json!({ "error": message })).expect("plain JSON object");
    json_body(status, Bytes::from(body))
}

async fn meta(State(s): State<Arc<GridService>>) -> Response {
    json_body(StatusCode::OK, s.meta_body.clone())
}

async fn profile(State(s): State<Arc<GridService>>) -> Response {
    json_body(StatusCode::OK, s.profile.clone())
}

async fn ordination(State(s): State<Arc<GridService>>, UrlPath(index): UrlPath<String>) -> Response {
    match index.parse::<usize>().ok().and_then(|i| s.entries.get(i)) {
        Some(body) => json_body(StatusCode::OK, body.clone()),
        None => json_error(
            StatusCode::NOT_FOUND,
            format!(
                "no ordination at index {index:?}; valid indices are 0..{}",
                s.entries.len()
            ),
        ),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json; charset=utf-8",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

fn asset(dir: &Path, rel: &str) -> Option<Response> {
    let rel = Path::new(rel.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut path = dir.join(rel);
    if path.is_dir() {
        path = path.join("index.html");
    }
    let bytes = std::fs::read(&path).ok()?;
    Some((StatusCode::OK, [(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn index(State(s): State<Arc<GridService>>) -> Response {
    match &s.assets {
        Some(dir) => asset(dir, "index.html")
            .unwrap_or_else(|| json_error(StatusCode::NOT_FOUND, "assets directory has no index.html".into())),
        None => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
            INDEX_HTML,
        )
            .into_response(),
    }
}

async fn fallback(State(s): State<Arc<GridService>>, uri: Uri) -> Response {
    let path = uri.path();
    if !path.starts_with("/api/") {
        if let Some(resp) = s.assets.as_deref().and_then(|dir| asset(dir, path)) {
            return resp;
        }
    }
    json_error(StatusCode::NOT_FOUND, format!("no route for {path}"))
}

/// GET-only routes; other methods get 405.
pub fn router(service: Arc<GridService>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/meta", get(meta))
        .route("/api/profile", get(profile))
        .route("/api/ordination/{index}", get(ordination))
        .fallback(fallback)
        .with_state(service)
}

pub async fn serve(listener: tokio::net::TcpListener, service: Arc<GridService>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
