//! `psar`: build weights, simulate, fit, replicate and run inference from the
//! command line. Exit status is 0 on success, 2 on usage errors and 1 on
//! runtime failures.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use psar::fit::{fit, FitMode, FitOptions, FitResult};
use psar::inference::{aic, asymptotic_covariance, confidence_intervals, lrt, morans_i, Interval, LrtResult, MoranResult};
use psar::io::{read_json, read_table_file, write_column_file, write_dataset_file, write_json};
use psar::likelihood::LikelihoodWorkspace;
use psar::simulation::{asymptotic_se_at_truth, monte_carlo_with, qq_data, read_mc_column, write_qq_csv, SimConfig, Simulator};
use psar::weights::{
    build_knn, build_lattice_adjacency, build_minimum_distance, build_sphere_of_influence, read_gal_file,
    row_standardize, spectrum_and_bounds, write_gal_file, AdjacencyMatrix, ContiguityRule, LatticeSpec, PointSet,
    WeightMatrix,
};
use psar::{DensityFamily, Dataset, Error, Layout, ModelSpec, ParameterVector, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "psar", version, about = "Spatial autoregression with a neural-network covariate effect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a contiguity or point-based neighbor structure and write it as GAL.
    Weights(WeightsArgs),
    /// Generate one dataset from a simulation config.
    Simulate(SimulateArgs),
    /// Fit the model by maximum likelihood.
    Fit(FitArgs),
    /// Run a Monte Carlo study from a simulation config.
    Mc(McArgs),
    /// Standard errors, intervals, residual Moran's I, AIC and LRT for a fit.
    Infer(InferArgs),
    /// Normal QQ data for one parameter of a Monte Carlo summary.
    Qq(QqArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Queen,
    Rook,
    Bishop,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    MinDistance,
    Knn,
    Soi,
}

#[derive(clap::Args)]
struct WeightsArgs {
    /// Lattice size as ROWSxCOLS, e.g. 50x50.
    #[arg(long, conflicts_with = "points", required_unless_present = "points")]
    lattice: Option<String>,
    #[arg(long, value_enum, default_value = "queen")]
    rule: Rule,
    /// CSV of point coordinates with header `x,y`.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "soi", requires = "points")]
    scheme: Scheme,
    /// Neighbor count for `--scheme knn`.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Check that rows can be standardized and report the admissible rho interval.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the injected errors.
    #[arg(long)]
    eps: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Also write the lattice adjacency as GAL.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Normal,
    T,
    Laplace,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Joint,
    Alternating,
}

impl From<Mode> for FitMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Joint => FitMode::Joint,
            Mode::Alternating => FitMode::Alternating,
        }
    }
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// GAL adjacency; rows are standardized before fitting.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_enum)]
    family: Family,
    /// Degrees of freedom, required with `--family t`.
    #[arg(long)]
    df: Option<f64>,
    #[arg(long)]
    neurons: usize,
    #[arg(long, value_enum, default_value = "joint")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add a constant column to the linear part.
    #[arg(long)]
    intercept: bool,
    /// Give each neuron a centering offset.
    #[arg(long)]
    neuron_bias: bool,
    /// Drop the linear covariate effects.
    #[arg(long)]
    no_linear: bool,
    /// Network-block starting draws per alternating pass.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the replicate count in the config.
    #[arg(long)]
    replicates: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "joint")]
    mode: Mode,
    #[arg(long)]
    threads: Option<usize>,
    /// Side of a square lattice on which asymptotic standard errors are
    /// estimated at the truth (e.g. 100 for n = 10000).
    #[arg(long)]
    asymptotic_side: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct InferArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Nested null-model fit for a likelihood-ratio test.
    #[arg(long)]
    null_fit: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct QqArgs {
    #[arg(long)]
    mc: PathBuf,
    #[arg(long, default_value = "rho")]
    param: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_lattice(s: &str, rule: Rule) -> Result<LatticeSpec> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidInput(format!("lattice '{s}' must look like ROWSxCOLS")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidInput(format!("lattice '{s}' must look like ROWSxCOLS")))
    };
    let rule = match rule {
        Rule::Queen => ContiguityRule::Queen,
        Rule::Rook => ContiguityRule::Rook,
        Rule::Bishop => ContiguityRule::Bishop,
    };
    LatticeSpec::new(parse(r)?, parse(c)?, rule)
}

fn read_points(path: &Path) -> Result<PointSet> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["x", "y"] {
        return Err(Error::InvalidInput("points header must be 'x,y'".into()));
    }
    let mut coords = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("point row {}: '{}' is not a number", i + 1, &rec[k])))
        };
        coords.push([get(0)?, get(1)?]);
    }
    PointSet::new(coords)
}

fn load_weights(path: &Path) -> Result<WeightMatrix> {
    let adj = read_gal_file(path)?;
    row_standardize(&adj)?.with_spectrum()
}

fn load_data(data: &Path, weights: &Path) -> Result<Dataset> {
    read_table_file(data)?.into_dataset(load_weights(weights)?)
}

fn family_from(family: Family, df: Option<f64>) -> Result<DensityFamily> {
    match (family, df) {
        (Family::T, Some(df)) => DensityFamily::scaled_t(df),
        (Family::T, None) => Err(Error::InvalidInput("--family t requires --df".into())),
        (_, Some(_)) => Err(Error::InvalidInput("--df is only accepted with --family t".into())),
        (Family::Normal, None) => Ok(DensityFamily::Normal),
        (Family::Laplace, None) => Ok(DensityFamily::Laplace),
    }
}

fn run_weights(a: WeightsArgs) -> Result<()> {
    let adj: AdjacencyMatrix = match (&a.lattice, &a.points) {
        (Some(l), _) => build_lattice_adjacency(&parse_lattice(l, a.rule)?)?,
        (None, Some(p)) => {
            let pts = read_points(p)?;
            match a.scheme {
                Scheme::MinDistance => build_minimum_distance(&pts)?,
                Scheme::Knn => build_knn(&pts, a.k)?,
                Scheme::Soi => build_sphere_of_influence(&pts)?,
            }
        }
        (None, None) => unreachable!("clap requires --lattice or --points"),
    };
    if a.standardize {
        let w = row_standardize(&adj)?;
        let (_, interval) = spectrum_and_bounds(&w)?;
        println!("rho interval ({}, {})", interval.lower, interval.upper);
    }
    write_gal_file(&adj, &a.out)
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let config: SimConfig = read_json(&a.config)?;
    let sim = Simulator::new(config)?;
    let s = sim.replicate(a.replicate)?;
    if let Some(path) = &a.weights_out {
        write_gal_file(&build_lattice_adjacency(&sim.config().lattice)?, path)?;
    }
    if let Some(path) = &a.eps {
        write_column_file(path, "eps", &s.eps)?;
    }
    write_dataset_file(&a.out, &s.data)
}

fn run_fit(a: FitArgs) -> Result<()> {
    let family = family_from(a.family, a.df)?;
    let data = load_data(&a.data, &a.weights)?;
    let layout = Layout {
        covariates: data.covariates(),
        hidden: a.neurons,
        linear: !a.no_linear,
        intercept: a.intercept,
        neuron_bias: a.neuron_bias,
    };
    let options = FitOptions {
        mode: a.mode.into(),
        seed: a.seed,
        restarts: a.restarts,
        ..FitOptions::default()
    };
    let result = fit(&data, &ModelSpec::new(layout, family)?, &options)?;
    if !result.converged {
        eprintln!("warning: optimizer stopped at the iteration limit");
    }
    if !result.identification.is_clean() {
        eprintln!("warning: identification restrictions violated: {:?}", result.identification);
    }
    write_json(&a.out, &result)
}

fn run_mc(a: McArgs) -> Result<()> {
    let mut config: SimConfig = read_json(&a.config)?;
    if let Some(m) = a.replicates {
        config.replicates = m;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let options = FitOptions {
        mode: a.mode.into(),
        ..FitOptions::default()
    };
    let sim = Simulator::new(config.clone())?;
    let mut summary = monte_carlo_with(&sim, &options, a.threads)?;
    if let Some(side) = a.asymptotic_side {
        if config.family.has_curvature() {
            let big = SimConfig {
                lattice: LatticeSpec::new(side, side, config.lattice.rule)?,
                ..config.clone()
            };
            let n = config.lattice.len();
            summary.asymptotic_se = Some(asymptotic_se_at_truth(&Simulator::new(big)?, 0, n)?);
        } else {
            eprintln!("note: asymptotic standard errors are unavailable for {} errors", config.family.name());
        }
    }
    for note in &summary.notes {
        eprintln!("note: {note}");
    }
    summary.write_csv(BufWriter::new(File::create(&a.out)?))
}

#[derive(Serialize)]
struct Report {
    names: Vec<String>,
    estimates: Vec<f64>,
    loglik: f64,
    se: Option<Vec<f64>>,
    intervals: Option<Vec<Interval>>,
    level: f64,
    covariance_note: Option<String>,
    moran: MoranResult,
    aic: f64,
    lrt: Option<LrtResult>,
}

fn run_infer(a: InferArgs) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::InvalidInput(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let fitted: FitResult = read_json(&a.fit)?;
    let data = load_data(&a.data, &a.weights)?;
    let theta: &ParameterVector = &fitted.theta;
    let family = fitted.spec.family;
    let ws = LikelihoodWorkspace::new(&data, theta.layout, family)?;
    let flat = theta.to_flat();
    let loglik = ws.value(&flat)?;
    let resid = ws.residuals(&flat)?;
    let (se, intervals, covariance_note) = match asymptotic_covariance(theta, &data, &family) {
        Ok(cov) => {
            let ci = confidence_intervals(&cov, theta, a.level)?;
            let note = (!cov.warnings.is_empty()).then(|| cov.warnings.join("; "));
            (Some(cov.se), Some(ci), note)
        }
        Err(Error::Unsupported(msg)) => (None, None, Some(msg)),
        Err(e) => return Err(e),
    };
    if let Some(note) = &covariance_note {
        eprintln!("note: {note}");
    }
    let lrt = match &a.null_fit {
        Some(path) => {
            let null: FitResult = read_json(path)?;
            let df = fitted.parameter_count().checked_sub(null.parameter_count()).filter(|&d| d > 0).ok_or_else(|| {
                Error::InvalidInput("the null fit must have fewer parameters than the fit".into())
            })?;
            let r = lrt(null.loglik, loglik, df)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            Some(r)
        }
        None => None,
    };
    let report = Report {
        names: theta.layout.names(),
        estimates: flat,
        loglik,
        se,
        intervals,
        level: a.level,
        covariance_note,
        moran: morans_i(&resid, data.weights())?,
        aic: aic(loglik, fitted.parameter_count()),
        lrt,
    };
    write_json(&a.out, &report)
}

fn run_qq(a: QqArgs) -> Result<()> {
    let values = read_mc_column(File::open(&a.mc)?, &a.param)?;
    let pairs = qq_data(&values)?;
    write_qq_csv(BufWriter::new(File::create(&a.out)?), &pairs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Weights(a) => run_weights(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::Mc(a) => run_mc(a),
        Command::Infer(a) => run_infer(a),
        Command::Qq(a) => run_qq(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
