//! Monte-Carlo benchmark harness for additive SPD regression.
//!
//! Responses follow Y = μ ⊕ w(X) ⊕ ζ with μ = I, X uniform on [0, 1]^q,
//! w(X) = exp_Lie(f(X)), and Lie-log noise drawn isotropically in an
//! orthonormal basis at the identity. The noise scale is calibrated to a
//! target signal-to-noise ratio. Each replicate draws its own train/test
//! pair from a ChaCha8 substream keyed by (seed, replicate), so reports are
//! reproducible regardless of how replicates are scheduled across threads.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, LieGroup, Metric, TangentBasis};
use crate::sbf::{fit, rate_bandwidth, select_bandwidth, AdditiveFit, FitOptions, SampleTable, DEFAULT_BANDWIDTH_CONSTANTS};
use crate::smoothing::{GridSpec, KernelFamily, KernelSpec};
use crate::spd::{SpdMatrix, SymmetricMatrix};

/// Stream id reserved for noise-scale calibration; replicate r uses r + 1.
const CALIBRATION_STREAM: u64 = 0;

/// Bandwidth constant c in h = c·n^(-1/5) used by the rate probe.
pub const DEFAULT_RATE_CONSTANT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    I,
    II,
    III,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Setting::I => "I",
            Setting::II => "II",
            Setting::III => "III",
        };
        f.write_str(s)
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Setting::I),
            "II" | "2" => Ok(Setting::II),
            "III" | "3" => Ok(Setting::III),
            other => Err(Error::InvalidInput(format!("unknown setting `{other}`"))),
        }
    }
}

/// exp(−|j−l|/q)·sin(2qπ(x − (j+l)/q)), with 1-based j, l.
pub fn g_entry(x: f64, j: usize, l: usize, q: usize) -> f64 {
    let qf = q as f64;
    let jl = (j + l) as f64;
    (-(j.abs_diff(l) as f64) / qf).exp() * (2.0 * qf * PI * (x - jl / qf)).sin()
}

/// The regression function f: [0, 1]^q → Sym(m) of a simulation setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalModel {
    pub setting: Setting,
    pub q: usize,
    pub m: usize,
    /// Multiplies f; 0 gives a pure-noise model.
    pub scale: f64,
}

impl SignalModel {
    pub fn new(setting: Setting, q: usize, m: usize) -> Result<Self> {
        let min_q = if setting == Setting::I { 1 } else { 2 };
        if q < min_q || m == 0 {
            return Err(Error::InvalidInput(format!(
                "setting {setting} needs q >= {min_q} and m >= 1 (got q = {q}, m = {m})"
            )));
        }
        Ok(Self {
            setting,
            q,
            m,
            scale: 1.0,
        })
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn entrywise(&self, g: impl Fn(usize, usize) -> f64) -> SymmetricMatrix {
        let m = self.m;
        SymmetricMatrix::from_matrix_unchecked(DMatrix::from_fn(m, m, |a, b| self.scale * g(a + 1, b + 1)))
    }

    /// Additive component f_k(x_k) of setting I (also the additive part of II for k ≥ 3).
    pub fn additive_component(&self, x: f64) -> SymmetricMatrix {
        self.entrywise(|j, l| g_entry(x, j, l, self.q))
    }

    pub fn eval(&self, x: &[f64]) -> SymmetricMatrix {
        let q = self.q;
        match self.setting {
            Setting::I => self.entrywise(|j, l| x.iter().map(|&xk| g_entry(xk, j, l, q)).sum()),
            Setting::II => self.entrywise(|j, l| {
                g_entry(x[0], j, l, q) * g_entry(x[1], j, l, q)
                    + x[2..].iter().map(|&xk| g_entry(xk, j, l, q)).sum::<f64>()
            }),
            Setting::III => self.entrywise(|j, l| {
                let f12 = (-((j + l) as f64) * (x[0] + x[1])).exp();
                f12 * x[2..].iter().map(|&xk| (2.0 * PI * xk).sin()).product::<f64>()
            }),
        }
    }
}

/// Orthonormal basis of the tangent space at the identity used for noise.
pub fn noise_basis(metric: Metric, m: usize) -> Result<TangentBasis> {
    TangentBasis::orthonormal(&metric, &SpdMatrix::identity(m))
}

/// ζ with lie_log ζ = Σ_j Z_j v_j, Z_j ~ N(0, σ²).
pub fn draw_noise<R: Rng + ?Sized>(
    sigma: f64,
    metric: Metric,
    basis: &TangentBasis,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let z: Vec<f64> = (0..basis.dim())
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    metric.lie_exp(&basis.vector(&z))
}

/// E‖lie_log w(X)‖²_e by Monte Carlo over uniform X.
pub fn signal_energy(model: &SignalModel, metric: Metric, draws: usize, rng: &mut impl Rng) -> Result<f64> {
    let id = SpdMatrix::identity(model.m);
    let mut acc = 0.0;
    let mut x = vec![0.0; model.q];
    for _ in 0..draws {
        x.iter_mut().for_each(|v| *v = rng.random());
        let f = crate::geometry::TangentVector::new(id.clone(), model.eval(&x))?;
        acc += metric.inner(&id, &f, &f)?;
    }
    Ok(acc / draws as f64)
}

/// σ such that E‖lie_log w‖²_e / (D σ²) equals `snr`, D = m(m+1)/2.
pub fn calibrate_sigma(
    model: &SignalModel,
    metric: Metric,
    snr: f64,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::InvalidInput(format!("snr must be positive, got {snr}")));
    }
    let d = (model.m * (model.m + 1) / 2) as f64;
    let energy = signal_energy(model, metric, draws, rng)?;
    Ok((energy / (d * snr)).sqrt())
}

/// One simulated draw with its signal and noise parts.
#[derive(Debug, Clone)]
pub struct Observation {
    pub x: Vec<f64>,
    pub signal: SpdMatrix,
    pub noise: SpdMatrix,
    pub response: SpdMatrix,
}

pub fn draw_observation<R: Rng + ?Sized>(
    model: &SignalModel,
    sigma: f64,
    metric: Metric,
    basis: &TangentBasis,
    rng: &mut R,
) -> Result<Observation> {
    let x: Vec<f64> = (0..model.q).map(|_| rng.random()).collect();
    let id = SpdMatrix::identity(model.m);
    // μ = I, so transport from μ to e is the identity map
    let signal = metric.lie_exp(&crate::geometry::TangentVector::new(id, model.eval(&x))?)?;
    let noise = draw_noise(sigma, metric, basis, rng)?;
    let response = metric.group_op(&signal, &noise)?;
    Ok(Observation {
        x,
        signal,
        noise,
        response,
    })
}

/// Training table with noisy responses and a test table of noise-free
/// responses μ ⊕ w(x̃).
pub fn generate_tables(
    model: &SignalModel,
    sigma: f64,
    metric: Metric,
    n: usize,
    test_size: usize,
    rng: &mut impl Rng,
) -> Result<(SampleTable, SampleTable)> {
    let basis = noise_basis(metric, model.m)?;
    let mut table = |rows: usize, noisy: bool| -> Result<SampleTable> {
        let mut xs = Vec::with_capacity(rows);
        let mut ys = Vec::with_capacity(rows);
        for _ in 0..rows {
            let obs = draw_observation(model, sigma, metric, &basis, &mut *rng)?;
            ys.push(if noisy { obs.response } else { obs.signal });
            xs.push(obs.x);
        }
        SampleTable::from_rows(&xs, ys)
    };
    let train = table(n, true)?;
    let test = table(test_size, false)?;
    Ok((train, test))
}

/// How each replicate picks its bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    /// h = c·n^(-1/5) with c fixed.
    Fixed { constant: f64 },
    /// K-fold cross-validation over the listed constants.
    CrossValidated { constants: Vec<f64>, folds: usize },
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::CrossValidated {
            constants: DEFAULT_BANDWIDTH_CONSTANTS.to_vec(),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: Setting,
    pub q: usize,
    pub n: usize,
    pub snr: f64,
    pub m: usize,
    pub metric: Metric,
    pub reps: usize,
    pub seed: u64,
    pub test_size: usize,
    pub calibration_draws: usize,
    pub grid_points: usize,
    pub bandwidth: BandwidthPolicy,
}

impl SimConfig {
    pub fn new(setting: Setting, q: usize, n: usize, snr: f64) -> Self {
        Self {
            setting,
            q,
            n,
            snr,
            m: 3,
            metric: Metric::LogCholesky,
            reps: 100,
            seed: 0,
            test_size: 1000,
            calibration_draws: 100_000,
            grid_points: 101,
            bandwidth: BandwidthPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidInput(format!("n must be at least 10, got {}", self.n)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidInput(format!("snr must be positive, got {}", self.snr)));
        }
        if self.reps < 1 || self.test_size < 1 || self.calibration_draws < 1 {
            return Err(Error::InvalidInput("reps, test size and calibration draws must be positive".into()));
        }
        GridSpec::new(self.grid_points)?;
        SignalModel::new(self.setting, self.q, self.m)?;
        Ok(())
    }

    pub fn model(&self) -> Result<SignalModel> {
        SignalModel::new(self.setting, self.q, self.m)
    }

    /// RNG for replicate `rep` (0-based).
    pub fn rep_rng(&self, rep: usize) -> ChaCha8Rng {
        stream_rng(self.seed, rep as u64 + 1)
    }

    pub fn calibration_rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, CALIBRATION_STREAM)
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Result of one Monte-Carlo replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub rmse: Option<f64>,
    pub bandwidth: Option<f64>,
    pub sweeps: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub sigma: f64,
    pub rmse_mean: f64,
    /// Sample SD of replicate RMSEs over √reps; 0 when fewer than two succeeded.
    pub rmse_se: f64,
    pub single_rep: bool,
    pub succeeded: usize,
    pub failed: usize,
    pub no_convergence: usize,
    pub reps: Vec<RepOutcome>,
    /// Kept out of the serialized report so identical runs give identical files.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn fit_with_policy(
    train: &SampleTable,
    metric: Metric,
    grid: GridSpec,
    policy: &BandwidthPolicy,
    seed: u64,
) -> Result<(AdditiveFit, f64)> {
    let q = train.predictors();
    let h = match policy {
        BandwidthPolicy::Fixed { constant } => rate_bandwidth(*constant, train.len()),
        BandwidthPolicy::CrossValidated { constants, folds } => {
            select_bandwidth(train, metric, KernelFamily::Epanechnikov, grid, constants, *folds, seed)?
                .bandwidths[0]
        }
    };
    let options = FitOptions::new(KernelSpec::epanechnikov(vec![h; q])?).with_grid(grid);
    Ok((fit(train, metric, &options)?, h))
}

fn run_rep(config: &SimConfig, model: &SignalModel, sigma: f64, rep: usize) -> RepOutcome {
    let mut rng = config.rep_rng(rep);
    let outcome = (|| {
        let (train, test) = generate_tables(model, sigma, config.metric, config.n, config.test_size, &mut rng)?;
        let grid = GridSpec::new(config.grid_points)?;
        let cv_seed = rng.random::<u64>();
        let (fitted, h) = fit_with_policy(&train, config.metric, grid, &config.bandwidth, cv_seed)?;
        Ok::<_, Error>((fitted.evaluate_rmse(&test)?, h, fitted.diagnostics.sweeps))
    })();
    match outcome {
        Ok((rmse, h, sweeps)) => RepOutcome {
            rep,
            rmse: Some(rmse),
            bandwidth: Some(h),
            sweeps: Some(sweeps),
            error: None,
        },
        Err(e) => RepOutcome {
            rep,
            rmse: None,
            bandwidth: None,
            sweeps: None,
            error: Some(e.to_string()),
        },
    }
}

/// Calibrates σ, runs all replicates (in parallel on the current rayon pool)
/// and aggregates prediction RMSE.
pub fn run_benchmark(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let started = Instant::now();
    let model = config.model()?;
    let sigma = calibrate_sigma(
        &model,
        config.metric,
        config.snr,
        config.calibration_draws,
        &mut config.calibration_rng(),
    )?;
    let reps: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_rep(config, &model, sigma, rep))
        .collect();
    let rmses: Vec<f64> = reps.iter().filter_map(|r| r.rmse).collect();
    let succeeded = rmses.len();
    let no_convergence = reps
        .iter()
        .filter(|r| r.error.as_deref().is_some_and(|e| e.contains("did not converge")))
        .count();
    let (rmse_mean, rmse_se) = mean_and_se(&rmses);
    Ok(SimReport {
        config: config.clone(),
        sigma,
        rmse_mean,
        rmse_se,
        single_rep: config.reps == 1,
        succeeded,
        failed: config.reps - succeeded,
        no_convergence,
        reps,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Mean and standard error (sample SD / √len); SE is 0 below two values.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// ∫_a^b ‖τ_{μ̂,I} f̂_k(x) − f_k(x)‖²_I dx by the trapezoid rule on `points`
/// equispaced nodes; the true predictor density is uniform.
pub fn integrated_error(
    fitted: &AdditiveFit,
    truth: &SignalModel,
    k: usize,
    a: f64,
    b: f64,
    points: usize,
) -> Result<f64> {
    let metric = fitted.metric;
    let id = SpdMatrix::identity(fitted.response_dim());
    // transport is linear: move the basis once
    let moved: Vec<SymmetricMatrix> = fitted
        .basis
        .vectors()
        .iter()
        .map(|v| {
            let u = crate::geometry::TangentVector::new(fitted.mu_hat.clone(), v.clone())?;
            Ok(metric.transport(&fitted.mu_hat, &id, &u)?.into_value())
        })
        .collect::<Result<_>>()?;
    let step = (b - a) / (points - 1) as f64;
    let mut acc = 0.0;
    for i in 0..points {
        let x = a + step * i as f64;
        let c = fitted.component_coordinates(k, x)?;
        let mut diff = -truth.additive_component(x).into_matrix();
        for (cd, v) in c.iter().zip(&moved) {
            diff += v.as_matrix() * *cd;
        }
        let e = crate::geometry::TangentVector::new(id.clone(), SymmetricMatrix::from_matrix_unchecked(diff))?;
        let sq = metric.inner(&id, &e, &e)?;
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        acc += w * sq;
    }
    Ok(acc * step)
}

/// Largest interior ([2h_k, 1 − 2h_k]) integrated squared error over components.
pub fn interior_ise(fitted: &AdditiveFit, truth: &SignalModel, points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..fitted.predictors() {
        let h = fitted.kernel.bandwidths[k];
        let (a, b) = (2.0 * h, 1.0 - 2.0 * h);
        if a >= b {
            return Err(Error::InvalidInput(format!("bandwidth {h} leaves no interior")));
        }
        worst = worst.max(integrated_error(fitted, truth, k, a, b, points)?);
    }
    Ok(worst)
}

/// Largest integrated squared error over the whole domain [0, 1].
pub fn full_ise(fitted: &AdditiveFit, truth: &SignalModel, points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..fitted.predictors() {
        worst = worst.max(integrated_error(fitted, truth, k, 0.0, 1.0, points)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sample_sizes: Vec<usize>,
    pub bandwidth_constant: f64,
    pub sigma: f64,
    /// Mean interior ISE per sample size.
    pub interior_ise: Vec<f64>,
    /// Mean whole-domain ISE per sample size.
    pub full_ise: Vec<f64>,
    /// Least-squares slope of log interior ISE against log n.
    pub slope: f64,
    pub full_slope: f64,
    pub failed: usize,
}

/// Least-squares slope of y on x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Empirical convergence rate of the additive components under setting I
/// with bandwidth h = c·n^(-1/5) for the fixed constant `bandwidth_constant`.
/// σ is calibrated from `config` and held fixed across sample sizes.
pub fn rate_probe(
    config: &SimConfig,
    sample_sizes: &[usize],
    bandwidth_constant: f64,
) -> Result<RateReport> {
    config.validate()?;
    if config.setting != Setting::I {
        return Err(Error::InvalidInput("rate probe needs an additive (setting I) truth".into()));
    }
    let model = config.model()?;
    let sigma = calibrate_sigma(
        &model,
        config.metric,
        config.snr,
        config.calibration_draws,
        &mut config.calibration_rng(),
    )?;
    rate_probe_with(config, &model, sigma, sample_sizes, bandwidth_constant)
}

/// [`rate_probe`] with an explicit truth and noise scale.
pub fn rate_probe_with(
    config: &SimConfig,
    model: &SignalModel,
    sigma: f64,
    sample_sizes: &[usize],
    bandwidth_constant: f64,
) -> Result<RateReport> {
    let grid = GridSpec::new(config.grid_points)?;
    let policy = BandwidthPolicy::Fixed {
        constant: bandwidth_constant,
    };
    let mut interior = Vec::with_capacity(sample_sizes.len());
    let mut full = Vec::with_capacity(sample_sizes.len());
    let mut failed = 0;
    for (idx, &n) in sample_sizes.iter().enumerate() {
        let results: Vec<Result<(f64, f64)>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(config.seed, ((idx as u64) << 32) | (rep as u64 + 1));
                let (train, _) = generate_tables(model, sigma, config.metric, n, 1, &mut rng)?;
                let (fitted, _) = fit_with_policy(&train, config.metric, grid, &policy, 0)?;
                Ok((
                    interior_ise(&fitted, model, config.grid_points)?,
                    full_ise(&fitted, model, config.grid_points)?,
                ))
            })
            .collect();
        let ok: Vec<(f64, f64)> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        failed += results.len() - ok.len();
        if ok.is_empty() {
            return Err(results.into_iter().find_map(|r| r.err()).unwrap());
        }
        interior.push(ok.iter().map(|v| v.0).sum::<f64>() / ok.len() as f64);
        full.push(ok.iter().map(|v| v.1).sum::<f64>() / ok.len() as f64);
    }
    let log_n: Vec<f64> = sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let log_int: Vec<f64> = interior.iter().map(|v| v.ln()).collect();
    let log_full: Vec<f64> = full.iter().map(|v| v.ln()).collect();
    Ok(RateReport {
        sample_sizes: sample_sizes.to_vec(),
        bandwidth_constant,
        sigma,
        slope: ls_slope(&log_n, &log_int),
        full_slope: ls_slope(&log_n, &log_full),
        interior_ise: interior,
        full_ise: full,
        failed,
    })
}
