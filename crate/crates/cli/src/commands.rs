use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{ArgGroup, Args, Parser, Subcommand};
use mam_core::sbf::{fit, select_bandwidth, DEFAULT_BANDWIDTH_CONSTANTS, DOMAIN_SLACK};
use mam_core::sim::{run_benchmark, BandwidthPolicy, Setting, SimConfig, SimReport};
use mam_core::spd::fractional_anisotropy;
use mam_core::{AdditiveFit, Error, FitOptions, Geometry, GridSpec, KernelFamily, KernelSpec, Metric, SampleTable, SpdMatrix};
use serde::Serialize;

use crate::model::{ModelFile, Rescale};
use crate::table::{csv_bytes, fmt_f64, read_numeric, response_headers, split_labeled, write_atomic};
use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "mam", version, about = "Additive regression for SPD matrix responses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo benchmark on synthetic data
    Simulate(SimulateArgs),
    /// Fit an additive model to a CSV file
    Fit(FitArgs),
    /// Predict SPD responses for new predictor rows
    Predict(PredictArgs),
    /// Prediction RMSE on labeled data
    Eval(EvalArgs),
    /// Tabulate the fitted component functions w_k(x)
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Data-generating setting: I, II or III
    #[arg(long)]
    pub setting: Setting,
    #[arg(long, default_value_t = 3)]
    pub q: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub snr: f64,
    #[arg(long, default_value = "log_cholesky")]
    pub metric: Metric,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Report JSON path
    #[arg(long)]
    pub out: PathBuf,
    /// Per-replicate CSV path [default: report path with a .reps.csv suffix]
    #[arg(long)]
    pub reps_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_size: usize,
    #[arg(long, default_value_t = 100_000)]
    pub calibration_draws: usize,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    /// Use h = c·n^(-1/5) with this c instead of cross-validation
    #[arg(long)]
    pub bandwidth_constant: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("bandwidth").required(true).args(["bandwidths", "cv"])))]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "log_cholesky")]
    pub metric: Metric,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub q: usize,
    /// One bandwidth for all predictors, or one per predictor
    #[arg(long, value_delimiter = ',')]
    pub bandwidths: Option<Vec<f64>>,
    /// Choose a common bandwidth h = c·n^(-1/5) by K-fold cross-validation
    #[arg(long)]
    pub cv: bool,
    /// Candidate constants c for --cv
    #[arg(long, value_delimiter = ',')]
    pub cv_constants: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Seed for the cross-validation fold assignment
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Min-max rescale each predictor column to [0, 1]
    #[arg(long)]
    pub rescale: bool,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    /// Stop backfitting once a sweep changes the components by at most this
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV whose first q columns are predictors
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with q predictor columns followed by the response lower triangle
    #[arg(long)]
    pub data: PathBuf,
    /// Write the metrics JSON here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation points per component [default: the model grid]
    #[arg(long)]
    pub points: Option<usize>,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Fit(args) => fit_cmd(&args),
        Command::Predict(args) => predict(&args),
        Command::Eval(args) => eval(&args),
        Command::Export(args) => export(&args),
    }
}

/// Maps library errors onto exit codes.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::NoConvergence { .. } => Failure::NO_CONVERGENCE,
        Error::InvalidInput(_)
        | Error::BandwidthOutOfRange(_)
        | Error::OutOfDomain { .. }
        | Error::DimensionMismatch { .. }
        | Error::NotPositiveDefinite(_)
        | Error::NotSymmetric(_)
        | Error::EmptySample => Failure::USAGE,
        Error::BaseMismatch | Error::DegenerateDensity { .. } => Failure::GENERAL,
    };
    Failure::new(code, e)
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(Failure::general)
}

// ---------------------------------------------------------------------------
// simulate

pub fn sim_config(args: &SimulateArgs) -> SimConfig {
    let mut config = SimConfig::new(args.setting, args.q, args.n, args.snr);
    config.m = args.m;
    config.metric = args.metric;
    config.reps = args.reps;
    config.seed = args.seed;
    config.test_size = args.test_size;
    config.calibration_draws = args.calibration_draws;
    config.grid_points = args.grid_points;
    config.bandwidth = match args.bandwidth_constant {
        Some(constant) => BandwidthPolicy::Fixed { constant },
        None => BandwidthPolicy::CrossValidated {
            constants: DEFAULT_BANDWIDTH_CONSTANTS.to_vec(),
            folds: args.folds,
        },
    };
    config
}

fn reps_path(args: &SimulateArgs) -> PathBuf {
    args.reps_out.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
        args.out.with_file_name(format!("{stem}.reps.csv"))
    })
}

pub fn report_csv(report: &SimReport) -> anyhow::Result<Vec<u8>> {
    let headers: Vec<String> = ["rep", "rmse", "bandwidth", "sweeps", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .reps
        .iter()
        .map(|r| {
            vec![
                r.rep.to_string(),
                r.rmse.map(fmt_f64).unwrap_or_default(),
                r.bandwidth.map(fmt_f64).unwrap_or_default(),
                r.sweeps.map(|s| s.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    csv_bytes(&headers, &rows)
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let config = sim_config(args);
    config.validate().map_err(classify)?;
    if let BandwidthPolicy::Fixed { constant } = config.bandwidth {
        if !(constant > 0.0) {
            return Err(Failure::usage(anyhow::anyhow!("--bandwidth-constant must be positive")));
        }
    }
    let report = run_benchmark(&config).map_err(classify)?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(Failure::general)?;
    json.push(b'\n');
    let csv = report_csv(&report).map_err(Failure::general)?;
    write_out(&args.out, &json)?;
    write_out(&reps_path(args), &csv)?;
    println!(
        "rmse_mean = {:.4}  rmse_se = {:.4}  succeeded = {}/{}  sigma = {:.4}  ({:.1} s)",
        report.rmse_mean,
        report.rmse_se,
        report.succeeded,
        config.reps,
        report.sigma,
        report.wall_clock_secs
    );
    if report.single_rep {
        println!("single replicate: standard error is not defined and reported as 0");
    }
    if 2 * report.no_convergence > config.reps {
        return Err(Failure::new(
            Failure::SIMULATION,
            anyhow::anyhow!("{} of {} replicates did not converge", report.no_convergence, config.reps),
        ));
    }
    if report.succeeded == 0 {
        return Err(Failure::general(anyhow::anyhow!("every replicate failed")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

fn check_domain(xs: &[Vec<f64>]) -> Result<(), Failure> {
    for (i, x) in xs.iter().enumerate() {
        for (k, &v) in x.iter().enumerate() {
            if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&v) {
                return Err(Failure::usage(anyhow::anyhow!(
                    "row {}: x{} = {v} lies outside [0, 1]",
                    i + 1,
                    k + 1
                )));
            }
        }
    }
    Ok(())
}

/// Fits a model to labeled rows; shared by the command and the tests.
pub fn fit_rows(
    args: &FitArgs,
    mut xs: Vec<Vec<f64>>,
    ys: Vec<SpdMatrix>,
) -> Result<(AdditiveFit, Option<Rescale>), Failure> {
    let rescale = if args.rescale {
        let r = Rescale::from_rows(&xs).map_err(Failure::usage)?;
        xs = xs.iter().map(|x| r.apply(x)).collect();
        Some(r)
    } else {
        None
    };
    check_domain(&xs)?;
    let sample = SampleTable::from_rows(&xs, ys).map_err(classify)?;
    let grid = GridSpec::new(args.grid_points).map_err(classify)?;
    let bandwidths = if args.cv {
        let constants = args.cv_constants.clone().unwrap_or_else(|| DEFAULT_BANDWIDTH_CONSTANTS.to_vec());
        let choice = select_bandwidth(&sample, args.metric, KernelFamily::Epanechnikov, grid, &constants, args.folds, args.seed)
            .map_err(classify)?;
        println!("cross-validation chose c = {} (h = {:.4})", choice.constant, choice.bandwidths[0]);
        choice.bandwidths
    } else {
        let given = args.bandwidths.clone().unwrap_or_default();
        match given.len() {
            1 => vec![given[0]; args.q],
            n if n == args.q => given,
            n => {
                return Err(Failure::usage(anyhow::anyhow!(
                    "--bandwidths needs 1 or {} values, got {n}",
                    args.q
                )))
            }
        }
    };
    let mut options = FitOptions::new(KernelSpec::epanechnikov(bandwidths).map_err(classify)?).with_grid(grid);
    options.tol = args.tol;
    options.max_sweeps = args.max_sweeps;
    let fitted = fit(&sample, args.metric, &options).map_err(classify)?;
    Ok((fitted, rescale))
}

fn fit_cmd(args: &FitArgs) -> Result<(), Failure> {
    let table = read_numeric(&args.data)?;
    let (xs, ys) = split_labeled(&table, args.q, args.m)?;
    let (fitted, rescale) = fit_rows(args, xs, ys)?;
    let d = fitted.diagnostics;
    println!(
        "sweeps = {}  final change = {:.3e}  centering = {:.3e}  fixed-point residual = {:.3e}",
        d.sweeps, d.final_change, d.centering, d.fixed_point_residual
    );
    let model = ModelFile::from_fit(&fitted, rescale);
    write_out(&args.out, &model.to_json().map_err(Failure::general)?)
}

// ---------------------------------------------------------------------------
// predict / eval / export

pub fn load_model(path: &Path) -> Result<(ModelFile, AdditiveFit), Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::usage)?;
    let model = ModelFile::from_json(&bytes)
        .with_context(|| format!("{} is not a model file", path.display()))
        .map_err(Failure::usage)?;
    let fitted = model
        .to_fit()
        .with_context(|| format!("{} holds an inconsistent model", path.display()))
        .map_err(Failure::usage)?;
    Ok((model, fitted))
}

fn prepare_x(model: &ModelFile, xs: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, Failure> {
    let xs = match &model.rescale {
        Some(r) => xs.iter().map(|x| r.apply(x)).collect(),
        None => xs,
    };
    check_domain(&xs)?;
    Ok(xs)
}

fn spd_row(p: &SpdMatrix) -> Vec<String> {
    let mut row: Vec<String> = p.lower_triangle().into_iter().map(fmt_f64).collect();
    if p.dim() == 3 {
        row.push(fmt_f64(fractional_anisotropy(p).expect("3 × 3")));
    }
    row
}

fn spd_headers(m: usize) -> Vec<String> {
    let mut h = response_headers(m);
    if m == 3 {
        h.push("fa".into());
    }
    h
}

fn predict(args: &PredictArgs) -> Result<(), Failure> {
    let (model, fitted) = load_model(&args.model)?;
    let table = read_numeric(&args.data)?;
    if table.width() < model.q {
        return Err(Failure::usage(anyhow::anyhow!(
            "the model has {} predictors, the file has {} columns",
            model.q,
            table.width()
        )));
    }
    let xs = prepare_x(&model, table.rows.iter().map(|r| r[..model.q].to_vec()).collect())?;
    let rows = xs
        .iter()
        .map(|x| fitted.predict(x).map(|p| spd_row(&p)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(classify)?;
    let bytes = csv_bytes(&spd_headers(model.m), &rows).map_err(Failure::general)?;
    write_out(&args.out, &bytes)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub rmse: f64,
    pub distances: Vec<f64>,
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let (model, fitted) = load_model(&args.model)?;
    let table = read_numeric(&args.data)?;
    let (xs, ys) = split_labeled(&table, model.q, model.m)?;
    let xs = prepare_x(&model, xs)?;
    let test = SampleTable::from_rows(&xs, ys).map_err(classify)?;
    let distances = fitted.prediction_distances(&test).map_err(classify)?;
    let rmse = fitted.evaluate_rmse(&test).map_err(classify)?;
    let report = EvalReport {
        n: distances.len(),
        rmse,
        distances,
    };
    let mut json = serde_json::to_vec_pretty(&report).map_err(Failure::general)?;
    json.push(b'\n');
    match &args.out {
        Some(path) => {
            write_out(path, &json)?;
            println!("rmse = {}", fmt_f64(rmse));
            Ok(())
        }
        None => {
            print!("{}", String::from_utf8_lossy(&json));
            Ok(())
        }
    }
}

fn export(args: &ExportArgs) -> Result<(), Failure> {
    let (model, fitted) = load_model(&args.model)?;
    let points = args.points.unwrap_or(fitted.grid.points);
    if points < 2 {
        return Err(Failure::usage(anyhow::anyhow!("--points must be at least 2")));
    }
    let mut headers = vec!["component".to_string(), "x".to_string()];
    headers.extend(spd_headers(model.m));
    headers.push("det".into());
    let mut rows = Vec::with_capacity(model.q * points);
    for k in 0..model.q {
        for i in 0..points {
            let x = i as f64 / (points - 1) as f64;
            let w = fitted.component_to_group(k, x).map_err(classify)?;
            let mut row = vec![(k + 1).to_string(), fmt_f64(x)];
            row.extend(spd_row(&w));
            row.push(fmt_f64(w.determinant()));
            rows.push(row);
        }
    }
    let bytes = csv_bytes(&headers, &rows).map_err(Failure::general)?;
    write_out(&args.out, &bytes)?;
    // distance of each component range from the identity, a quick effect-size summary
    for k in 0..model.q {
        let id = SpdMatrix::identity(model.m);
        let mut largest = 0.0f64;
        for i in 0..points {
            let x = i as f64 / (points - 1) as f64;
            let w = fitted.component_to_group(k, x).map_err(classify)?;
            largest = largest.max(fitted.metric.distance(&id, &w).map_err(classify)?);
        }
        println!("component {}: max d(I, w(x)) = {:.4}", k + 1, largest);
    }
    Ok(())
}
