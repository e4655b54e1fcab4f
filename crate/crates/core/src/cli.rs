//! The `cnmixt` command line: `fit`, `simulate` and `density`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::data::{read_csv, KnownLabels};
use crate::engine::FitOptions;
use crate::error::{CnError, Result};
use crate::grid::{fit_grid, GridConfig};
use crate::init::{InitKind, InitStrategy};
use crate::mvn::{log_dcn, ContaminationParams, GaussianParams};
use crate::report::{build_report, summary};
use crate::selection::Criterion;
use crate::simulate::{simulate, write_csv};
use crate::structures::StructureCode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALL_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cnmixt", version, about = "Mixtures of contaminated normal distributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a grid of structures and group counts and write a JSON report.
    Fit(FitArgs),
    /// Write the two-group artificial dataset with uniform noise as CSV.
    Simulate(SimulateArgs),
    /// Evaluate a contaminated normal density at a batch of points.
    Density(DensityArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Headed CSV; every column except the label column must be numeric.
    pub data: PathBuf,
    /// Column holding true labels. Excluded from the fit and used for the agreement table.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Comma-separated structure codes, or `all`.
    #[arg(long, default_value = "all")]
    pub models: String,
    /// Numbers of groups: a list (`1,2,4`) or a range (`1-4`).
    #[arg(long = "G", default_value = "1-3")]
    pub groups: String,
    /// random.soft, random.hard, kmeans, mixt or manual.
    #[arg(long, default_value = "mixt")]
    pub init: InitKind,
    /// Fixed α per group; a single value is replicated.
    #[arg(long, value_delimiter = ',')]
    pub alpha_fix: Vec<f64>,
    /// Lower bound on α per group, or `none` for no bound.
    #[arg(long, default_value = "0.5")]
    pub alpha_min: String,
    /// Fixed η per group; a single value is replicated.
    #[arg(long, value_delimiter = ',')]
    pub eta_fix: Vec<f64>,
    /// Upper bound on η per group.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub eta_max: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 1-based rows with known group membership.
    #[arg(long, value_delimiter = ',')]
    pub ind_label: Vec<usize>,
    /// 1-based groups of the rows in `--ind-label`.
    #[arg(long, value_delimiter = ',')]
    pub label: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub iter_max: usize,
    /// Aitken stopping threshold.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// Eigenvalue floor for every scale matrix.
    #[arg(long, default_value_t = 1e-100)]
    pub eps: f64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "CNMIXT_WORKERS")]
    pub parallel: Option<usize>,
    /// Extra random.soft starts per candidate; the best log-likelihood is kept.
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    /// Criterion used for the selected model and its per-observation output.
    #[arg(long, default_value = "BIC")]
    pub criterion: Criterion,
    /// Headed CSV with the n × G starting posteriors (manual init).
    #[arg(long)]
    pub start_z: Option<PathBuf>,
    /// Headed CSV with the n × G starting good-point posteriors.
    #[arg(long)]
    pub start_v: Option<PathBuf>,
    /// Report path; the JSON goes to stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// JSON file with `mu`, `sigma` (rows), `alpha` and `eta`.
    #[arg(long)]
    pub params: PathBuf,
    /// A comma-separated point; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Vec<String>,
    /// Headed CSV of points, evaluated after any `--point`.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Print log-densities instead of densities.
    #[arg(long)]
    pub log: bool,
}

#[derive(Debug, Deserialize)]
pub struct DensityParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub alpha: f64,
    pub eta: f64,
}

/// Parses `1-4`, `1:4` or `1,2,4`.
pub fn parse_groups(s: &str) -> Result<Vec<usize>> {
    let bad = || CnError::InvalidParameter(format!("cannot parse G list '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once(['-', ':']) {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

pub fn parse_models(s: &str) -> Result<Vec<StructureCode>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(StructureCode::ALL.to_vec());
    }
    let codes = s
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<StructureCode>>>()?;
    if codes.is_empty() {
        return Err(CnError::InvalidParameter("no models requested".into()));
    }
    Ok(codes)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CnError::InvalidParameter(format!("{what}: '{v}' is not a number"))))
        .collect()
}

fn non_empty(v: &[f64]) -> Option<Vec<f64>> {
    (!v.is_empty()).then(|| v.to_vec())
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(read_csv(path, None)?.data.to_matrix())
}

/// Builds the grid configuration and returns it with the dataset and truth labels.
pub fn fit_config(args: &FitArgs) -> Result<(crate::data::Dataset, GridConfig, Option<Vec<String>>)> {
    let csv = read_csv(&args.data, args.label_column.as_deref())?;
    let data = csv.data;
    if data.p() < 2 {
        return Err(CnError::Input(format!("need at least 2 numeric columns, found {}", data.p())));
    }
    let alpha_min = match args.alpha_min.trim() {
        s if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("null") => None,
        s => Some(parse_list(s, "--alpha-min")?),
    };
    let options = FitOptions {
        alpha_fix: non_empty(&args.alpha_fix),
        alpha_min,
        eta_fix: non_empty(&args.eta_fix),
        eta_max: args.eta_max.clone(),
        iter_max: args.iter_max,
        threshold: args.threshold,
        eps: args.eps,
        seed: args.seed,
    };
    let mut config = GridConfig::new(&data);
    config.codes = parse_models(&args.models)?;
    config.groups = parse_groups(&args.groups)?;
    config.options = options;
    config.restarts = args.restarts;
    config.workers = args.parallel;
    config.labels = if args.ind_label.is_empty() && args.label.is_empty() {
        KnownLabels::none(data.n())
    } else {
        KnownLabels::from_positions(data.n(), &args.ind_label, &args.label)?
    };
    let start_v = args.start_v.as_deref().map(read_matrix).transpose()?;
    config.init = match (args.init, &args.start_z) {
        (InitKind::Manual, Some(z)) => InitStrategy::manual(read_matrix(z)?, start_v),
        (InitKind::Manual, None) => {
            return Err(CnError::InvalidParameter("--init manual needs --start-z".into()));
        }
        (kind, _) => InitStrategy { start_v, ..InitStrategy::new(kind) },
    };
    Ok((data, config, csv.truth))
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CnError::Input(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_err(e: io::Error) -> CnError {
    CnError::Input(format!("write failed: {e}"))
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let (data, config, truth) = fit_config(args)?;
    info!("{} rows, {} columns", data.n(), data.p());
    let run = fit_grid(&data, &config)?;
    let report = build_report(&data, &config, &run, args.criterion, truth.as_deref())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CnError::Input(e.to_string()))?;
    let mut out = output_writer(args.output.as_deref())?;
    writeln!(out, "{json}").and_then(|_| out.flush()).map_err(write_err)?;
    // The summary is informational; a closed pipe is not an error.
    let text = summary(&report);
    let _ = if args.output.is_some() {
        writeln!(io::stdout(), "{text}")
    } else {
        writeln!(io::stderr(), "{text}")
    };
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let sim = simulate(args.seed);
    write_csv(&sim, output_writer(args.output.as_deref())?)
}

pub fn load_density_params(path: &Path) -> Result<(GaussianParams, ContaminationParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| CnError::Input(format!("cannot read {}: {e}", path.display())))?;
    let raw: DensityParams =
        serde_json::from_str(&text).map_err(|e| CnError::Input(format!("malformed parameters in {}: {e}", path.display())))?;
    let p = raw.mu.len();
    if p == 0 || raw.sigma.len() != p || raw.sigma.iter().any(|r| r.len() != p) {
        return Err(CnError::Input(format!("sigma must be {p} x {p} to match mu")));
    }
    let sigma = DMatrix::from_fn(p, p, |i, j| raw.sigma[i][j]);
    Ok((GaussianParams::new(DVector::from_vec(raw.mu), sigma)?, ContaminationParams::new(raw.alpha, raw.eta)?))
}

pub fn cmd_density(args: &DensityArgs) -> Result<()> {
    let (gauss, cont) = load_density_params(&args.params)?;
    let mut rows: Vec<Vec<f64>> = args.point.iter().map(|s| parse_list(s, "--point")).collect::<Result<_>>()?;
    if let Some(path) = &args.points {
        let x = read_matrix(path)?;
        rows.extend(x.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()));
    }
    if rows.is_empty() {
        return Err(CnError::InvalidParameter("no points given; use --point or --points".into()));
    }
    let mut out = BufWriter::new(io::stdout().lock());
    for row in &rows {
        let ld = log_dcn(row, &gauss, cont)?;
        writeln!(out, "{}", if args.log { ld } else { ld.exp() }).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

pub fn exit_code(e: &CnError) -> i32 {
    match e {
        CnError::AllFailed(_) => EXIT_ALL_FAILED,
        _ => EXIT_CONFIG,
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Density(a) => cmd_density(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
