//! Smooth-backfitting estimation of additive SPD regression.
//!
//! Given responses Y_i and predictors x_i ∈ [0, 1]^q, [`fit`]:
//!
//! 1. computes the sample Fréchet mean μ̂,
//! 2. lifts each response to coordinates of Log_μ̂ Y_i in an orthonormal basis
//!    of the tangent space at μ̂,
//! 3. solves the smooth-backfitting integral equations on a grid by
//!    Gauss-Seidel sweeps with per-sweep centering,
//!
//! and the returned [`AdditiveFit`] maps components back to the group through
//! transport to the identity and the Lie exponential.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, LieGroup, Metric, TangentBasis, TangentVector};
use crate::smoothing::{estimate_densities, marginal_regressor, GridSpec, KernelFamily, KernelSpec};
use crate::spd::SpdMatrix;

/// Predictor values this far outside [0, 1] are clamped rather than rejected.
pub const DOMAIN_SLACK: f64 = 1e-9;

/// Bandwidth constants c in h = c·n^(-1/5) tried by cross-validation.
pub const DEFAULT_BANDWIDTH_CONSTANTS: [f64; 9] = [0.05, 0.075, 0.1, 0.15, 0.25, 0.5, 0.75, 1.0, 1.5];

/// n observations (x_i, Y_i), predictors in [0, 1]^q.
#[derive(Debug, Clone)]
pub struct SampleTable {
    design: DMatrix<f64>,
    responses: Vec<SpdMatrix>,
}

fn check_unit_interval(axis: usize, value: f64) -> Result<f64> {
    if value.is_finite() && (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&value) {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(Error::OutOfDomain { axis, value })
    }
}

impl SampleTable {
    pub fn new(design: DMatrix<f64>, responses: Vec<SpdMatrix>) -> Result<Self> {
        if design.nrows() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: design.nrows(),
                found: responses.len(),
            });
        }
        if let Some(first) = responses.first() {
            for y in &responses {
                if y.dim() != first.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: first.dim(),
                        found: y.dim(),
                    });
                }
            }
        }
        let mut design = design;
        for k in 0..design.ncols() {
            for i in 0..design.nrows() {
                design[(i, k)] = check_unit_interval(k, design[(i, k)])?;
            }
        }
        Ok(Self { design, responses })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: Vec<SpdMatrix>) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: bad.len(),
            });
        }
        let design = DMatrix::from_fn(rows.len(), q, |i, k| rows[i][k]);
        Self::new(design, responses)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn predictors(&self) -> usize {
        self.design.ncols()
    }

    /// Matrix size m of the responses (0 for an empty table).
    pub fn response_dim(&self) -> usize {
        self.responses.first().map_or(0, SpdMatrix::dim)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn responses(&self) -> &[SpdMatrix] {
        &self.responses
    }

    pub fn x(&self, i: usize) -> Vec<f64> {
        self.design.row(i).iter().copied().collect()
    }

    pub fn subset(&self, rows: &[usize]) -> SampleTable {
        let design = DMatrix::from_fn(rows.len(), self.predictors(), |i, k| self.design[(rows[i], k)]);
        let responses = rows.iter().map(|&i| self.responses[i].clone()).collect();
        SampleTable { design, responses }
    }
}

/// Solver settings for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl FitOptions {
    pub fn new(kernel: KernelSpec) -> Self {
        Self {
            kernel,
            grid: GridSpec::default(),
            tol: 1e-6,
            max_sweeps: 200,
        }
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = grid;
        self
    }
}

/// Convergence and constraint diagnostics of a backfitting solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveDiagnostics {
    pub sweeps: usize,
    pub final_change: f64,
    /// max over k and coordinates of |∫ f̂_k p̂_k|.
    pub centering: f64,
    /// sup-norm gap between the components and one application of the
    /// right-hand side of the backfitting equations.
    pub fixed_point_residual: f64,
    /// Euclidean norm of the response-coordinate mean.
    pub mean_residual: f64,
}

/// The discretized smooth-backfitting system for one design and response set.
///
/// Components are M × D matrices (grid nodes × tangent coordinates).
#[derive(Debug, Clone)]
pub struct SbfSystem {
    grid: GridSpec,
    weights: DVector<f64>,
    marginals: Vec<DVector<f64>>,
    m_hat: Vec<DMatrix<f64>>,
    mean: DVector<f64>,
    /// projections[k][j] = diag(1/p̂_k) · p̂_kj · diag(w), empty for j = k.
    projections: Vec<Vec<DMatrix<f64>>>,
}

impl SbfSystem {
    /// Builds densities and marginal regressors from data. `responses` is n × D.
    pub fn from_data(
        design: &DMatrix<f64>,
        responses: &DMatrix<f64>,
        kernel: &KernelSpec,
        grid: &GridSpec,
    ) -> Result<Self> {
        let dens = estimate_densities(design, kernel, grid)?;
        let q = dens.axes();
        for k in 0..q {
            dens.check_positive(k)?;
        }
        let m_hat = (0..q)
            .map(|k| marginal_regressor(&dens, responses, k))
            .collect::<Result<Vec<_>>>()?;
        let mean = responses.row_mean().transpose();
        Self::from_parts(*grid, dens.marginal.clone(), |k, j| dens.joint(k, j), m_hat, mean)
    }

    /// Assembles a system from explicit densities and marginal regressors.
    pub fn from_parts(
        grid: GridSpec,
        marginals: Vec<DVector<f64>>,
        joint: impl Fn(usize, usize) -> DMatrix<f64>,
        m_hat: Vec<DMatrix<f64>>,
        mean: DVector<f64>,
    ) -> Result<Self> {
        let q = marginals.len();
        if m_hat.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: m_hat.len(),
            });
        }
        let weights = grid.weights();
        for (k, p) in marginals.iter().enumerate() {
            if let Some(node) = p.iter().position(|&v| !(v >= crate::smoothing::DENSITY_FLOOR)) {
                return Err(Error::DegenerateDensity {
                    axis: k,
                    node,
                    value: p[node],
                });
            }
        }
        let mut projections = Vec::with_capacity(q);
        for k in 0..q {
            let mut row = Vec::with_capacity(q);
            for j in 0..q {
                if j == k {
                    row.push(DMatrix::zeros(0, 0));
                    continue;
                }
                let mut t = joint(k, j);
                for a in 0..t.nrows() {
                    let inv = 1.0 / marginals[k][a];
                    for b in 0..t.ncols() {
                        t[(a, b)] *= inv * weights[b];
                    }
                }
                row.push(t);
            }
            projections.push(row);
        }
        Ok(Self {
            grid,
            weights,
            marginals,
            m_hat,
            mean,
            projections,
        })
    }

    pub fn axes(&self) -> usize {
        self.marginals.len()
    }

    pub fn coords(&self) -> usize {
        self.mean.len()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn marginal_density(&self, k: usize) -> &DVector<f64> {
        &self.marginals[k]
    }

    pub fn marginal_regressor(&self, k: usize) -> &DMatrix<f64> {
        &self.m_hat[k]
    }

    pub fn zero_state(&self) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.grid.points, self.coords()); self.axes()]
    }

    /// p̂_k-weighted grid mean of a component, one entry per coordinate.
    pub fn weighted_mean(&self, k: usize, f: &DMatrix<f64>) -> DVector<f64> {
        let wp = self.weights.component_mul(&self.marginals[k]);
        f.transpose() * &wp / wp.sum()
    }

    /// Right-hand side of equation k given the other components, re-centered.
    fn update(&self, k: usize, state: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut f = self.m_hat[k].clone();
        for mut row in f.row_iter_mut() {
            row -= self.mean.transpose();
        }
        for (j, fj) in state.iter().enumerate() {
            if j != k {
                f -= &self.projections[k][j] * fj;
            }
        }
        let centre = self.weighted_mean(k, &f);
        for mut row in f.row_iter_mut() {
            row -= centre.transpose();
        }
        f
    }

    /// Largest Euclidean row norm of a − b.
    fn sup_change(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// One Gauss-Seidel pass over k = 1..q. Returns the sup-norm change.
    pub fn sweep(&self, state: &mut [DMatrix<f64>]) -> f64 {
        let mut change = 0.0f64;
        for k in 0..self.axes() {
            let next = self.update(k, state);
            change = change.max(Self::sup_change(&next, &state[k]));
            state[k] = next;
        }
        change
    }

    /// Sweeps from zero until the sup change is at most `tol`.
    pub fn solve(&self, tol: f64, max_sweeps: usize) -> Result<(Vec<DMatrix<f64>>, SolveDiagnostics)> {
        let mut state = self.zero_state();
        let mut change = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            change = self.sweep(&mut state);
            sweeps += 1;
            if change <= tol {
                break;
            }
        }
        if !(change <= tol) {
            return Err(Error::NoConvergence { sweeps, change });
        }
        let diagnostics = SolveDiagnostics {
            sweeps,
            final_change: change,
            ..self.diagnose(&state)
        };
        Ok((state, diagnostics))
    }

    /// Centering and fixed-point residuals of a candidate solution.
    pub fn diagnose(&self, state: &[DMatrix<f64>]) -> SolveDiagnostics {
        let mut centering = 0.0f64;
        let mut fixed = 0.0f64;
        for k in 0..self.axes() {
            centering = centering.max(self.weighted_mean(k, &state[k]).amax());
            fixed = fixed.max(Self::sup_change(&self.update(k, state), &state[k]));
        }
        SolveDiagnostics {
            centering,
            fixed_point_residual: fixed,
            mean_residual: self.mean.norm(),
            ..Default::default()
        }
    }
}

/// Applies one backfitting sweep to a copy of `state`; returns the new state
/// and its sup-norm change.
pub fn backfit_sweep(system: &SbfSystem, state: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, f64) {
    let mut next = state.to_vec();
    let change = system.sweep(&mut next);
    (next, change)
}

/// A fitted additive model.
#[derive(Debug, Clone)]
pub struct AdditiveFit {
    pub metric: Metric,
    pub mu_hat: SpdMatrix,
    pub basis: TangentBasis,
    pub grid: GridSpec,
    pub kernel: KernelSpec,
    /// Per predictor, an M × D matrix of tangent coordinates at the grid nodes.
    pub components: Vec<DMatrix<f64>>,
    pub diagnostics: SolveDiagnostics,
}

/// Lifts responses to coordinates of Log_μ Y_i in `basis`. Returns n × D.
pub fn tangent_coordinates(
    metric: &Metric,
    basis: &TangentBasis,
    responses: &[SpdMatrix],
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(responses.len(), basis.dim());
    for (i, y) in responses.iter().enumerate() {
        let u = metric.riem_log(basis.base(), y)?;
        out.set_row(i, &basis.coordinates(&u)?.transpose());
    }
    Ok(out)
}

/// Estimates μ̂ and the additive components.
pub fn fit(sample: &SampleTable, metric: Metric, options: &FitOptions) -> Result<AdditiveFit> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.len() < 10 || sample.predictors() == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 observations and one predictor, got n = {}, q = {}",
            sample.len(),
            sample.predictors()
        )));
    }
    let mu_hat = metric.frechet_mean(sample.responses())?;
    let basis = TangentBasis::orthonormal(&metric, &mu_hat)?;
    let coords = tangent_coordinates(&metric, &basis, sample.responses())?;
    let system = SbfSystem::from_data(sample.design(), &coords, &options.kernel, &options.grid)?;
    let (components, diagnostics) = system.solve(options.tol, options.max_sweeps)?;
    Ok(AdditiveFit {
        metric,
        mu_hat,
        basis,
        grid: options.grid,
        kernel: options.kernel.clone(),
        components,
        diagnostics,
    })
}

impl AdditiveFit {
    pub fn predictors(&self) -> usize {
        self.components.len()
    }

    pub fn response_dim(&self) -> usize {
        self.mu_hat.dim()
    }

    /// Tangent coordinates of f̂_k(x), linearly interpolated between nodes.
    pub fn component_coordinates(&self, k: usize, x: f64) -> Result<DVector<f64>> {
        let x = check_unit_interval(k, x)?;
        let comp = &self.components[k];
        Ok(DVector::from_fn(comp.ncols(), |d, _| {
            let col: Vec<f64> = comp.column(d).iter().copied().collect();
            self.grid.interpolate(&col, x)
        }))
    }

    /// f̂_k(x) as a tangent vector at μ̂.
    pub fn component_tangent(&self, k: usize, x: f64) -> Result<TangentVector> {
        Ok(self.basis.vector(self.component_coordinates(k, x)?.as_slice()))
    }

    /// ŵ_k(x) = exp_Lie(τ_{μ̂,e} f̂_k(x)).
    pub fn component_to_group(&self, k: usize, x: f64) -> Result<SpdMatrix> {
        let f = self.component_tangent(k, x)?;
        let at_identity = self
            .metric
            .transport(&self.mu_hat, &self.metric.identity(self.response_dim()), &f)?;
        self.metric.lie_exp(&at_identity)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.predictors() {
            return Err(Error::DimensionMismatch {
                expected: self.predictors(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// μ̂ ⊕ ŵ_1(x_1) ⊕ ⋯ ⊕ ŵ_q(x_q).
    pub fn predict(&self, x: &[f64]) -> Result<SpdMatrix> {
        self.check_point(x)?;
        let mut acc = self.mu_hat.clone();
        for (k, &xk) in x.iter().enumerate() {
            acc = self.metric.group_op(&acc, &self.component_to_group(k, xk)?)?;
        }
        Ok(acc)
    }

    /// Exp_μ̂(Σ_k f̂_k(x_k)); agrees with [`Self::predict`] for the shipped geometries.
    pub fn predict_tangent(&self, x: &[f64]) -> Result<SpdMatrix> {
        self.check_point(x)?;
        let mut coords = DVector::zeros(self.basis.dim());
        for (k, &xk) in x.iter().enumerate() {
            coords += self.component_coordinates(k, xk)?;
        }
        self.metric
            .riem_exp(&self.mu_hat, &self.basis.vector(coords.as_slice()))
    }

    /// Geodesic distance from the prediction at each test row to its response.
    pub fn prediction_distances(&self, test: &SampleTable) -> Result<Vec<f64>> {
        (0..test.len())
            .map(|i| {
                let pred = self.predict(&test.x(i))?;
                self.metric.distance(&pred, &test.responses()[i])
            })
            .collect()
    }

    /// sqrt of the mean squared geodesic prediction error.
    pub fn evaluate_rmse(&self, test: &SampleTable) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::EmptySample);
        }
        let d = self.prediction_distances(test)?;
        Ok((d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt())
    }
}

/// Outcome of bandwidth cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthChoice {
    pub constant: f64,
    pub bandwidths: Vec<f64>,
    /// (constant, out-of-fold sum of squared distances); infinite when a fold failed.
    pub scores: Vec<(f64, f64)>,
}

/// h = c·n^(-1/5), capped at 0.5.
pub fn rate_bandwidth(constant: f64, n: usize) -> f64 {
    (constant * (n as f64).powf(-0.2)).min(0.5)
}

/// K-fold cross-validation over bandwidth constants, one common constant for
/// all axes, minimizing the out-of-fold sum of squared geodesic errors.
pub fn select_bandwidth(
    sample: &SampleTable,
    metric: Metric,
    family: KernelFamily,
    grid: GridSpec,
    constants: &[f64],
    folds: usize,
    seed: u64,
) -> Result<BandwidthChoice> {
    let n = sample.len();
    let q = sample.predictors();
    if folds < 2 || folds > n {
        return Err(Error::InvalidInput(format!("cannot split {n} rows into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % folds;
        }
        f
    };
    let mut scores = Vec::with_capacity(constants.len());
    let mut last_err = None;
    for &c in constants {
        let h = rate_bandwidth(c, n);
        let options = FitOptions::new(KernelSpec::new(family, vec![h; q])?).with_grid(grid);
        let mut loss = 0.0;
        for fold in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            let outcome = fit(&sample.subset(&train), metric, &options)
                .and_then(|f| f.prediction_distances(&sample.subset(&held)));
            match outcome {
                Ok(d) => loss += d.iter().map(|v| v * v).sum::<f64>(),
                Err(e) => {
                    last_err = Some(e);
                    loss = f64::INFINITY;
                    break;
                }
            }
        }
        scores.push((c, loss));
    }
    let best = scores
        .iter()
        .filter(|(_, l)| l.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some(&(c, _)) => Ok(BandwidthChoice {
            constant: c,
            bandwidths: vec![rate_bandwidth(c, n); q],
            scores,
        }),
        None => Err(last_err.unwrap_or(Error::InvalidInput("no bandwidth candidates".into()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::SymmetricMatrix;
    use nalgebra::dmatrix;
    use rand::Rng;

    fn design(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, q, |_, _| rng.random::<f64>())
    }

    #[test]
    fn constant_responses_give_zero_components() {
        let p = SpdMatrix::new(dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let sample = SampleTable::new(design(40, 2, 1), vec![p.clone(); 40]).unwrap();
        for metric in [Metric::LogCholesky, Metric::LogEuclidean] {
            let opts = FitOptions::new(KernelSpec::epanechnikov(vec![0.2, 0.2]).unwrap());
            let f = fit(&sample, metric, &opts).unwrap();
            assert!((f.mu_hat.as_matrix() - p.as_matrix()).norm() < 1e-12);
            assert!(f.components.iter().all(|c| c.amax() < 1e-12));
            let pred = f.predict(&[0.3, 0.9]).unwrap();
            assert!((pred.as_matrix() - p.as_matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn single_predictor_is_centered_marginal_regressor() {
        let x = design(60, 1, 2);
        let resp = DMatrix::from_fn(60, 2, |i, d| (x[(i, 0)] * 6.0 + d as f64).sin());
        let resp = {
            let mean = resp.row_mean();
            let mut r = resp;
            for mut row in r.row_iter_mut() {
                row -= &mean;
            }
            r
        };
        let kernel = KernelSpec::epanechnikov(vec![0.15]).unwrap();
        let grid = GridSpec::default();
        let system = SbfSystem::from_data(&x, &resp, &kernel, &grid).unwrap();
        let (comp, diag) = system.solve(1e-10, 10).unwrap();
        assert!(diag.sweeps <= 2);
        let m = system.marginal_regressor(0).clone();
        let centre = system.weighted_mean(0, &m);
        for a in 0..grid.points {
            for d in 0..2 {
                assert!((comp[0][(a, d)] - (m[(a, d)] - centre[d])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_state_and_zero_responses_stay_zero() {
        let x = design(30, 3, 3);
        let resp = DMatrix::zeros(30, 1);
        let kernel = KernelSpec::epanechnikov(vec![0.25; 3]).unwrap();
        let system = SbfSystem::from_data(&x, &resp, &kernel, &GridSpec::new(21).unwrap()).unwrap();
        let (next, change) = backfit_sweep(&system, &system.zero_state());
        assert_eq!(change, 0.0);
        assert!(next.iter().all(|c| c.amax() == 0.0));
    }

    #[test]
    fn product_densities_converge_in_one_sweep() {
        // p̂_kj = p̂_k p̂_j exactly: every cross projection annihilates centered components.
        let grid = GridSpec::new(21).unwrap();
        let nodes = grid.nodes();
        let w = grid.weights();
        let raw: Vec<DVector<f64>> = vec![
            DVector::from_iterator(21, nodes.iter().map(|u| 1.0 + 0.5 * (u - 0.5))),
            DVector::from_iterator(21, nodes.iter().map(|u| 0.7 + 0.6 * u * u)),
        ];
        let marginals: Vec<DVector<f64>> = raw.iter().map(|p| p / w.dot(p)).collect();
        let m_hat: Vec<DMatrix<f64>> = vec![
            DMatrix::from_fn(21, 2, |a, d| (3.0 * nodes[a]).sin() + d as f64),
            DMatrix::from_fn(21, 2, |a, d| nodes[a].powi(2) - 0.1 * d as f64),
        ];
        let mg = marginals.clone();
        let system = SbfSystem::from_parts(
            grid,
            marginals,
            move |k, j| &mg[k] * mg[j].transpose(),
            m_hat.clone(),
            DVector::zeros(2),
        )
        .unwrap();
        let mut state = system.zero_state();
        system.sweep(&mut state);
        for k in 0..2 {
            let centre = system.weighted_mean(k, &m_hat[k]);
            for a in 0..21 {
                for d in 0..2 {
                    assert!((state[k][(a, d)] - (m_hat[k][(a, d)] - centre[d])).abs() < 1e-12);
                }
            }
        }
        let change = system.sweep(&mut state);
        assert!(change < 1e-12);
    }

    #[test]
    fn converged_sweep_is_idempotent() {
        let x = design(80, 3, 4);
        let resp = DMatrix::from_fn(80, 3, |i, d| (x[(i, d)] * 5.0).cos() + x[(i, (d + 1) % 3)]);
        let kernel = KernelSpec::epanechnikov(vec![0.2; 3]).unwrap();
        let system = SbfSystem::from_data(&x, &resp, &kernel, &GridSpec::new(41).unwrap()).unwrap();
        let tol = 1e-8;
        let (state, diag) = system.solve(tol, 200).unwrap();
        let (_, change) = backfit_sweep(&system, &state);
        assert!(change <= tol);
        assert!(diag.centering < 1e-12);
        assert!(diag.fixed_point_residual <= tol);
    }

    #[test]
    fn no_convergence_is_reported() {
        let x = design(80, 3, 5);
        let resp = DMatrix::from_fn(80, 1, |i, _| x[(i, 0)] + x[(i, 1)]);
        let kernel = KernelSpec::epanechnikov(vec![0.2; 3]).unwrap();
        let system = SbfSystem::from_data(&x, &resp, &kernel, &GridSpec::new(21).unwrap()).unwrap();
        assert!(matches!(
            system.solve(1e-14, 1),
            Err(Error::NoConvergence { sweeps: 1, .. })
        ));
    }

    #[test]
    fn sample_table_validation() {
        let ys = vec![SpdMatrix::identity(2); 2];
        let bad = dmatrix![0.5; 1.2];
        assert!(matches!(
            SampleTable::new(bad, ys.clone()),
            Err(Error::OutOfDomain { axis: 0, .. })
        ));
        let slack = dmatrix![-1e-12; 1.0 + 1e-12];
        let t = SampleTable::new(slack, ys.clone()).unwrap();
        assert_eq!(t.design()[(0, 0)], 0.0);
        assert_eq!(t.design()[(1, 0)], 1.0);
        assert!(SampleTable::new(dmatrix![0.5], ys).is_err());
    }

    #[test]
    fn fit_requires_ten_rows() {
        let sample = SampleTable::new(design(5, 1, 6), vec![SpdMatrix::identity(2); 5]).unwrap();
        let opts = FitOptions::new(KernelSpec::epanechnikov(vec![0.3]).unwrap());
        assert!(fit(&sample, Metric::LogCholesky, &opts).is_err());
    }

    fn scalar_fit() -> AdditiveFit {
        // m = 1: both metrics are log coordinates on the positive reals
        let x = design(50, 1, 7);
        let ys = (0..50)
            .map(|i| SpdMatrix::from_diagonal(&[(1.0 + (6.0 * x[(i, 0)]).sin()).exp()]).unwrap())
            .collect();
        let sample = SampleTable::new(x, ys).unwrap();
        let opts = FitOptions::new(KernelSpec::epanechnikov(vec![0.15]).unwrap());
        fit(&sample, Metric::LogEuclidean, &opts).unwrap()
    }

    #[test]
    fn scalar_prediction_closed_form() {
        let f = scalar_fit();
        for &x in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            // with m = 1 the orthonormal basis at μ̂ is {μ̂}, so coordinates are log increments
            let fx = f.component_coordinates(0, x).unwrap()[0];
            let want = (f.mu_hat.as_matrix()[(0, 0)].ln() + fx).exp();
            assert!((f.predict(&[x]).unwrap().as_matrix()[(0, 0)] - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn component_to_group_roundtrip_and_zero() {
        let f = scalar_fit();
        let mut zero = f.clone();
        for c in &mut zero.components {
            c.fill(0.0);
        }
        let w = zero.component_to_group(0, 0.4).unwrap();
        assert!((w.as_matrix() - DMatrix::identity(1, 1)).norm() < 1e-15);
        let w = f.component_to_group(0, 0.4).unwrap();
        let back = f
            .metric
            .transport(&SpdMatrix::identity(1), &f.mu_hat, &f.metric.lie_log(&w).unwrap())
            .unwrap();
        let direct = f.component_tangent(0, 0.4).unwrap();
        assert!((back.value().as_matrix() - direct.value().as_matrix()).norm() < 1e-9);
    }

    #[test]
    fn out_of_domain_prediction() {
        let f = scalar_fit();
        assert!(matches!(f.predict(&[1.1]), Err(Error::OutOfDomain { axis: 0, .. })));
        assert!(f.predict(&[1.0 + 1e-12]).is_ok());
        assert!(matches!(
            f.predict(&[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rmse_examples() {
        let f = scalar_fit();
        let xs = [0.2, 0.5, 0.8];
        let preds: Vec<SpdMatrix> = xs.iter().map(|&x| f.predict(&[x]).unwrap()).collect();
        let exact = SampleTable::new(DMatrix::from_column_slice(3, 1, &xs), preds.clone()).unwrap();
        assert!(f.evaluate_rmse(&exact).unwrap() < 1e-12);

        // shift each response by a known log amount: distances 0.1, 0.2, 0.4
        let shifts = [0.1, -0.2, 0.4];
        let moved: Vec<SpdMatrix> = preds
            .iter()
            .zip(shifts)
            .map(|(p, s)| SpdMatrix::from_diagonal(&[p.as_matrix()[(0, 0)] * f64::exp(s)]).unwrap())
            .collect();
        let test = SampleTable::new(DMatrix::from_column_slice(3, 1, &xs), moved).unwrap();
        let want = ((0.01 + 0.04 + 0.16) / 3.0f64).sqrt();
        assert!((f.evaluate_rmse(&test).unwrap() - want).abs() < 1e-12);

        let one = test.subset(&[2]);
        assert!((f.evaluate_rmse(&one).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(f.evaluate_rmse(&test.subset(&[])), Err(Error::EmptySample));
    }

    #[test]
    fn predict_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = design(120, 2, 8);
        let ys: Vec<SpdMatrix> = (0..120)
            .map(|i| {
                let s = SymmetricMatrix::new(dmatrix![
                    (6.0 * x[(i, 0)]).sin(), 0.3 * x[(i, 1)];
                    0.3 * x[(i, 1)], (4.0 * x[(i, 1)]).cos() + 0.1 * rng.random::<f64>()
                ])
                .unwrap();
                crate::spd::sym_exp(&s)
            })
            .collect();
        let sample = SampleTable::new(x, ys).unwrap();
        for metric in [Metric::LogCholesky, Metric::LogEuclidean] {
            let opts = FitOptions::new(KernelSpec::epanechnikov(vec![0.15, 0.15]).unwrap());
            let f = fit(&sample, metric, &opts).unwrap();
            for _ in 0..100 {
                let pt = [rng.random::<f64>(), rng.random::<f64>()];
                let a = f.predict(&pt).unwrap();
                let b = f.predict_tangent(&pt).unwrap();
                assert!((a.as_matrix() - b.as_matrix()).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn cross_validation_picks_a_finite_candidate() {
        let x = design(60, 1, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ys = (0..60)
            .map(|i| {
                let v = (6.0 * x[(i, 0)]).sin() + 0.3 * (rng.random::<f64>() - 0.5);
                SpdMatrix::from_diagonal(&[v.exp()]).unwrap()
            })
            .collect();
        let sample = SampleTable::new(x, ys).unwrap();
        let choice = select_bandwidth(
            &sample,
            Metric::LogCholesky,
            KernelFamily::Epanechnikov,
            GridSpec::default(),
            &[0.25, 0.5, 1.5],
            5,
            1,
        )
        .unwrap();
        assert_eq!(choice.scores.len(), 3);
        let best = choice.scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        assert!(choice.scores.iter().any(|s| s.0 == choice.constant && s.1 == best));
        assert_eq!(choice.bandwidths, vec![rate_bandwidth(choice.constant, 60)]);
    }
}
