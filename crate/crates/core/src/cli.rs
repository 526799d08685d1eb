//! The `agpca` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::dpcoa::{dpcoa_gpca, dpcoa_stepwise, CountTable};
use crate::error::{Error, Result};
use crate::family::AdaptiveModel;
use crate::gpca::{default_k, pca};
use crate::io::bundle::{DatasetBundle, KernelSource, Preprocess, Transform};
use crate::io::json::{write_ordination, Labels, OrdinationDoc};
use crate::io::metadata::Metadata;
use crate::io::table::{read_matrix, write_matrix, NamedMatrix, Orientation};
use crate::kernel::tree_to_kernel;
use crate::manifest::Recorder;
#[cfg(test)]
use crate::server::DEFAULT_TOP_LOADINGS;
use crate::server::{self, GridService};
use crate::sim::{branches_with_descendants, random_tree, run_comparison_on, write_aggregate_csv, write_tidy_csv};
use crate::sim::{SimConfig, SimMode, SimOutcome};

const DEFAULT_TOP_LOADINGS_ARG: &str = "500";

#[derive(Debug, Parser)]
#[command(name = "agpca", version, about = "Adaptive generalized PCA with variable kernels")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the trace-normalised variable kernel as CSV.
    Kernel(KernelArgs),
    /// Estimate r and write the adaptive ordination.
    Fit(FitArgs),
    /// Write ordinations over a grid of r values.
    Grid(GridArgs),
    /// Double principal coordinate analysis of a count table.
    Dpcoa(DpcoaArgs),
    /// Standard PCA of the centred data.
    Pca(PcaArgs),
    /// Run simulation A or B and write tidy and aggregate CSV.
    Sim(SimArgs),
    /// Serve a grid file to the explorer.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DistanceSource {
    /// Newick tree over the variables.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Square CSV of squared Euclidean distances between variables.
    #[arg(long)]
    pub distances: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct KernelSourceArgs {
    /// Newick tree over the variables.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Square CSV of squared Euclidean distances between variables.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Square CSV similarity matrix between variables.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Data table: samples by variables with a header row and row names.
    #[arg(long)]
    pub data: PathBuf,
    /// The data file has samples as columns.
    #[arg(long)]
    pub samples_as_columns: bool,
    /// Per-sample annotations keyed by sample id.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Drop variables present in fewer than this fraction of samples.
    #[arg(long)]
    pub min_prevalence: Option<f64>,
    /// Drop data variables missing from the kernel source instead of failing.
    #[arg(long)]
    pub prune: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformKind {
    None,
    Log,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Transform applied to the data before centring.
    #[arg(long, value_enum, default_value_t = TransformKind::None)]
    pub transform: TransformKind,
    /// Constant c in log(x + c).
    #[arg(long, default_value_t = 1.0)]
    pub log_constant: f64,
    /// Scale every variable to unit standard deviation.
    #[arg(long)]
    pub standardize: bool,
}

impl TransformArgs {
    fn transform(&self) -> Transform {
        match self.transform {
            TransformKind::None => Transform::None,
            TransformKind::Log => Transform::Log { c: self.log_constant },
        }
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[command(flatten)]
    pub source: DistanceSource,
    /// Kernel CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub source: KernelSourceArgs,
    #[command(flatten)]
    pub pre: TransformArgs,
    /// Number of axes; defaults to min(n - 1, 10).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Use this r instead of the likelihood estimate.
    #[arg(long, value_parser = parse_unit)]
    pub r: Option<f64>,
    /// Ordination JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// An ascending list of r values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RGrid(pub Vec<f64>);

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub source: KernelSourceArgs,
    #[command(flatten)]
    pub pre: TransformArgs,
    /// Number of axes at every grid point; defaults to min(n - 1, 10).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// "start:end:step" within [0, 1].
    #[arg(long, value_parser = parse_r_grid, default_value = "0:1:0.01")]
    pub r_grid: RGrid,
    /// Grid JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DpcoaRoute {
    /// Weighted MDS of the species, then weighted PCA of the barycentres.
    Stepwise,
    /// A single generalized PCA with the DPCoA metric.
    Triple,
}

#[derive(Debug, Args)]
pub struct DpcoaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub source: DistanceSource,
    /// Number of axes; defaults to min(n - 1, 10).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[arg(long, value_enum, default_value_t = DpcoaRoute::Stepwise)]
    pub route: DpcoaRoute,
    /// Ordination JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub pre: TransformArgs,
    /// Number of axes; defaults to min(n - 1, 10).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Ordination JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModeArg {
    A,
    B,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, value_enum, ignore_case = true)]
    pub mode: SimModeArg,
    /// Leaves of the random tree; 100 for mode A and 300 for mode B.
    #[arg(long)]
    pub p: Option<usize>,
    /// Samples per replicate.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
    pub sigma: Vec<f64>,
    /// Mode A: number of leading kernel eigenvectors in the true axis.
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,100")]
    pub m: Vec<usize>,
    /// Mode B: smallest clade size considered.
    #[arg(long, default_value_t = 50)]
    pub branch_min: usize,
    /// Mode B: largest clade size considered.
    #[arg(long, default_value_t = 200)]
    pub branch_max: usize,
    /// Mode B: keep at most this many clades, evenly spread by size.
    #[arg(long)]
    pub max_branches: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Master seed for the replicates.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub tree_seed: u64,
    /// Tidy per-replicate CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Aggregate CSV; defaults to the tidy path with `.aggregate.csv`.
    #[arg(long)]
    pub aggregate_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Grid JSON written by `agpca grid`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Keep only the N variables with the largest loadings at r̂.
    #[arg(long, num_args = 0..=1, default_missing_value = DEFAULT_TOP_LOADINGS_ARG)]
    pub top_loadings: Option<usize>,
    /// Directory of static explorer files served under /.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

fn parse_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// Parses "start:end:step"; the end point is included when the step lands
/// on it up to rounding.
pub fn parse_r_grid(s: &str) -> std::result::Result<RGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected start:end:step, got {s:?}"));
    }
    let start = parse_unit(parts[0])?;
    let end = parse_unit(parts[1])?;
    let step: f64 = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("step {:?} is not a number", parts[2]))?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(format!("step must be positive, got {step}"));
    }
    if end < start {
        return Err(format!("end {end} is below start {start}"));
    }
    let intervals = ((end - start) / step + 1e-9).floor();
    if intervals > 100_000.0 {
        return Err(format!("grid {s:?} has more than 100000 points"));
    }
    let count = intervals as usize + 1;
    let mut values: Vec<f64> = (0..count).map(|i| start + i as f64 * step).collect();
    if let Some(last) = values.last_mut() {
        if (*last - end).abs() <= 1e-9 * step {
            *last = end;
        }
    }
    Ok(RGrid(values))
}

fn k_or_default(k: Option<u64>, n: usize) -> usize {
    k.map_or_else(|| default_k(n), |k| k as usize)
}

fn orientation(input: &InputArgs) -> Orientation {
    if input.samples_as_columns {
        Orientation::SamplesAsColumns
    } else {
        Orientation::SamplesAsRows
    }
}

fn read_source(
    tree: Option<&Path>,
    distances: Option<&Path>,
    kernel: Option<&Path>,
    rec: &mut Recorder,
) -> Result<KernelSource> {
    let (path, source) = match (tree, distances, kernel) {
        (Some(p), None, None) => (p, KernelSource::read_tree(p)?),
        (None, Some(p), None) => (p, KernelSource::read_distances(p)?),
        (None, None, Some(p)) => (p, KernelSource::read_similarity(p)?),
        _ => return Err(Error::invalid("give exactly one of --tree, --distances, --kernel")),
    };
    rec.input(path)?;
    Ok(source)
}

fn load_bundle(
    input: &InputArgs,
    source: Option<KernelSource>,
    pre: Preprocess,
    rec: &mut Recorder,
) -> Result<DatasetBundle> {
    rec.input(&input.data)?;
    let data = read_matrix(&input.data, orientation(input))?;
    let metadata = match &input.metadata {
        Some(p) => {
            rec.input(p)?;
            Some(Metadata::read(p)?)
        }
        None => None,
    };
    let bundle = DatasetBundle::assemble(data, source, metadata, input.prune, pre)?;
    info!(
        "loaded {} samples x {} variables",
        bundle.data.row_names.len(),
        bundle.data.col_names.len()
    );
    Ok(bundle)
}

fn labels(bundle: &DatasetBundle) -> Labels<'_> {
    Labels {
        sample_ids: &bundle.data.row_names,
        variable_names: &bundle.data.col_names,
        metadata: bundle.metadata.as_ref(),
    }
}

fn preprocess(input: &InputArgs, pre: &TransformArgs) -> Preprocess {
    Preprocess {
        transform: pre.transform(),
        min_prevalence: input.min_prevalence,
        standardize: pre.standardize,
    }
}

fn cmd_kernel(args: &KernelArgs, rec: &mut Recorder) -> Result<()> {
    let source = read_source(args.source.tree.as_deref(), args.source.distances.as_deref(), None, rec)?;
    let names = source.names();
    let all: Vec<usize> = (0..names.len()).collect();
    let kernel = source.kernel(&all)?;
    let named = NamedMatrix::new(names.clone(), names, kernel.matrix().clone())?;
    write_matrix(&named, &args.out)?;
    rec.finish(&[&args.out])
}

fn cmd_fit(args: &FitArgs, rec: &mut Recorder) -> Result<()> {
    let s = &args.source;
    let source = read_source(s.tree.as_deref(), s.distances.as_deref(), s.kernel.as_deref(), rec)?;
    let bundle = load_bundle(&args.input, Some(source), preprocess(&args.input, &args.pre), rec)?;
    let kernel = bundle.kernel()?;
    let k = k_or_default(args.k, bundle.data.matrix.rows());
    let model = AdaptiveModel::new(&bundle.data.matrix, &kernel)?;
    let result = match args.r {
        Some(r) => model.at(r, k)?,
        None => model.run(k)?,
    };
    info!("r = {}, sigma2 = {}", result.fit.r_hat, result.fit.sigma2_hat);
    let doc = OrdinationDoc::from_adaptive(&result, labels(&bundle))?;
    write_ordination(&doc, &args.out)?;
    rec.finish(&[&args.out])
}

fn cmd_grid(args: &GridArgs, rec: &mut Recorder) -> Result<()> {
    let s = &args.source;
    let source = read_source(s.tree.as_deref(), s.distances.as_deref(), s.kernel.as_deref(), rec)?;
    let bundle = load_bundle(&args.input, Some(source), preprocess(&args.input, &args.pre), rec)?;
    let kernel = bundle.kernel()?;
    let k = k_or_default(args.k, bundle.data.matrix.rows());
    let model = AdaptiveModel::new(&bundle.data.matrix, &kernel)?;
    let best = model.run(k)?;
    let grid = model.grid(&args.r_grid.0, k)?;
    let mut doc = OrdinationDoc::from_adaptive(&best, labels(&bundle))?;
    doc.grid = Some(
        grid.iter()
            .map(|g| OrdinationDoc::grid_entry(g, labels(&bundle)))
            .collect::<Result<Vec<_>>>()?,
    );
    write_ordination(&doc, &args.out)?;
    rec.finish(&[&args.out])
}

fn cmd_dpcoa(args: &DpcoaArgs, rec: &mut Recorder) -> Result<()> {
    let source = read_source(args.source.tree.as_deref(), args.source.distances.as_deref(), None, rec)?;
    let pre = Preprocess {
        min_prevalence: args.input.min_prevalence,
        ..Preprocess::default()
    };
    let bundle = load_bundle(&args.input, Some(source), pre, rec)?;
    let delta = bundle.distances()?;
    let table = CountTable::new(bundle.data.matrix.clone())?;
    let k = k_or_default(args.k, table.counts().rows());
    let result = match args.route {
        DpcoaRoute::Stepwise => dpcoa_stepwise(&table, &delta, k)?,
        DpcoaRoute::Triple => dpcoa_gpca(&table, &delta, k)?,
    };
    let doc = OrdinationDoc::from_dpcoa(&result, labels(&bundle))?;
    write_ordination(&doc, &args.out)?;
    rec.finish(&[&args.out])
}

fn cmd_pca(args: &PcaArgs, rec: &mut Recorder) -> Result<()> {
    let bundle = load_bundle(&args.input, None, preprocess(&args.input, &args.pre), rec)?;
    let x = bundle.data.matrix.center_columns();
    let k = k_or_default(args.k, x.rows());
    let result = pca(&x, k)?;
    let doc = OrdinationDoc::from_gpca("pca", &result, labels(&bundle))?;
    write_ordination(&doc, &args.out)?;
    rec.finish(&[&args.out])
}

/// `count` indices spread evenly over `0..len`.
fn spread(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    if count == 1 {
        return vec![len / 2];
    }
    (0..count)
        .map(|i| (i * (len - 1) + (count - 1) / 2) / (count - 1))
        .collect()
}

fn sim_outcomes(args: &SimArgs, rec: &mut Recorder) -> Result<Vec<SimOutcome>> {
    let p = args.p.unwrap_or(match args.mode {
        SimModeArg::A => 100,
        SimModeArg::B => 300,
    });
    rec.seed(args.seed);
    let tree = random_tree(p, args.tree_seed)?;
    let kernel = tree_to_kernel(&tree)?;
    let modes: Vec<SimMode> = match args.mode {
        SimModeArg::A => args.m.iter().map(|&m| SimMode::A { m }).collect(),
        SimModeArg::B => {
            let mut branches = branches_with_descendants(&tree, args.branch_min, args.branch_max);
            if branches.is_empty() {
                return Err(Error::invalid(format!(
                    "no clade has between {} and {} leaves",
                    args.branch_min, args.branch_max
                )));
            }
            if let Some(max) = args.max_branches {
                let counts = tree.descendant_counts();
                branches.sort_by_key(|&b| (counts[b], b));
                branches = spread(branches.len(), max).into_iter().map(|i| branches[i]).collect();
            }
            branches.into_iter().map(|branch| SimMode::B { branch }).collect()
        }
    };
    let mut outcomes = Vec::new();
    for mode in &modes {
        for &sigma in &args.sigma {
            let config = SimConfig {
                p,
                n: args.n,
                sigma,
                mode: *mode,
                replicates: args.replicates,
                master_seed: args.seed,
                tree_seed: args.tree_seed,
            };
            info!("running {mode:?} sigma = {sigma}");
            outcomes.push(run_comparison_on(&config, &tree, &kernel)?);
        }
    }
    Ok(outcomes)
}

fn aggregate_path(tidy: &Path) -> PathBuf {
    let stem = tidy
        .file_stem()
        .map(|s| s.to_os_string())
        .unwrap_or_else(|| OsString::from("sim"));
    let mut name = stem;
    name.push(".aggregate.csv");
    tidy.with_file_name(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::output(path, e))
}

fn cmd_sim(args: &SimArgs, rec: &mut Recorder) -> Result<()> {
    if args.replicates == 0 {
        return Err(Error::invalid("--replicates must be at least 1"));
    }
    let outcomes = sim_outcomes(args, rec)?;
    let agg = args.aggregate_out.clone().unwrap_or_else(|| aggregate_path(&args.out));
    write_tidy_csv(&outcomes, create(&args.out)?)?;
    write_aggregate_csv(&outcomes, create(&agg)?)?;
    rec.finish(&[&args.out, &agg])
}

fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let mut service = GridService::load(&args.input, args.top_loadings)?;
    if let Some(dir) = &args.assets {
        service = service.with_assets(dir.clone())?;
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|_| Error::invalid(format!("bad listen address {}:{}", args.host, args.port)))?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::server("<runtime>", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::server(addr.to_string(), e))?;
        let local = listener.local_addr().map_err(|e| Error::server(addr.to_string(), e))?;
        info!(
            "{} grid points, {} of {} variables shown",
            service.len(),
            service.meta().variables_shown,
            service.meta().variables_total
        );
        println!("listening on http://{local}");
        server::serve(listener, Arc::new(service))
            .await
            .map_err(|e| Error::server(local.to_string(), e))
    })
}

pub fn run(cli: &Cli, command_line: Vec<String>) -> Result<()> {
    let mut rec = Recorder::start(command_line);
    match &cli.command {
        Command::Kernel(a) => cmd_kernel(a, &mut rec),
        Command::Fit(a) => cmd_fit(a, &mut rec),
        Command::Grid(a) => cmd_grid(a, &mut rec),
        Command::Dpcoa(a) => cmd_dpcoa(a, &mut rec),
        Command::Pca(a) => cmd_pca(a, &mut rec),
        Command::Sim(a) => cmd_sim(a, &mut rec),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code:
/// 0 on success, 2 for invalid input or usage, 1 otherwise.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli, std::env::args().collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_r_grid("0:1:0.5").unwrap().0, vec![0.0, 0.5, 1.0]);
        let g = parse_r_grid("0:1:0.01").unwrap().0;
        assert_eq!(g.len(), 101);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert_eq!(parse_r_grid("0.2:0.2:0.1").unwrap().0, vec![0.2]);
        assert_eq!(parse_r_grid("0:1:0.3").unwrap().0.len(), 4);
        for bad in ["0:1", "0:1:0", "1:0:0.1", "0:2:0.5", "a:1:0.1", "0:1:-1", "0:1:1e-9"] {
            assert!(parse_r_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn spread_is_even() {
        assert_eq!(spread(10, 3), vec![0, 5, 9]);
        assert_eq!(spread(3, 10), vec![0, 1, 2]);
        assert_eq!(spread(5, 1), vec![2]);
    }

    #[test]
    fn aggregate_sibling() {
        assert_eq!(aggregate_path(Path::new("out/a.csv")), Path::new("out/a.aggregate.csv"));
    }

    #[test]
    fn top_loadings_default() {
        let cli = Cli::try_parse_from(["agpca", "serve", "--input", "g.json", "--top-loadings"]).unwrap();
        match cli.command {
            Command::Serve(a) => assert_eq!(a.top_loadings, Some(DEFAULT_TOP_LOADINGS)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn sources_are_exclusive() {
        assert!(Cli::try_parse_from(["agpca", "kernel", "--out", "k.csv"]).is_err());
        assert!(Cli::try_parse_from(["agpca", "kernel", "--tree", "t", "--distances", "d", "--out", "k"]).is_err());
        assert!(Cli::try_parse_from(["agpca", "fit", "--data", "x", "--kernel", "q", "--out", "o"]).is_ok());
    }
}
