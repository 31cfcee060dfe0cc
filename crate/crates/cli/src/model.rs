//! On-disk representation of a fitted model.

use anyhow::{bail, ensure, Context};
use mam_core::sbf::SolveDiagnostics;
use mam_core::{AdditiveFit, GridSpec, KernelFamily, KernelSpec, Metric, SpdMatrix, SymmetricMatrix, TangentBasis};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Per-column min-max map onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Rescale {
    pub fn from_rows(rows: &[Vec<f64>]) -> anyhow::Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; q];
        let mut max = vec![f64::NEG_INFINITY; q];
        for row in rows {
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        for k in 0..q {
            ensure!(max[k] > min[k], "column x{} is constant and cannot be rescaled", k + 1);
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| (v - self.min[k]) / (self.max[k] - self.min[k]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sweeps: usize,
    pub final_change: f64,
    pub centering: f64,
    pub fixed_point_residual: f64,
    pub mean_residual: f64,
}

impl From<SolveDiagnostics> for Diagnostics {
    fn from(d: SolveDiagnostics) -> Self {
        Self {
            sweeps: d.sweeps,
            final_change: d.final_change,
            centering: d.centering,
            fixed_point_residual: d.fixed_point_residual,
            mean_residual: d.mean_residual,
        }
    }
}

impl From<Diagnostics> for SolveDiagnostics {
    fn from(d: Diagnostics) -> Self {
        Self {
            sweeps: d.sweeps,
            final_change: d.final_change,
            centering: d.centering,
            fixed_point_residual: d.fixed_point_residual,
            mean_residual: d.mean_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub metric: Metric,
    pub m: usize,
    pub q: usize,
    /// Rows of the full m × m matrix.
    pub mu_hat: Vec<Vec<f64>>,
    pub grid_nodes: Vec<f64>,
    pub kernel: KernelFamily,
    pub bandwidths: Vec<f64>,
    /// Orthonormal tangent basis at μ̂, each vector as rows of an m × m matrix.
    pub basis: Vec<Vec<Vec<f64>>>,
    /// Per predictor, grid nodes × basis coordinates.
    pub components: Vec<Vec<Vec<f64>>>,
    pub rescale: Option<Rescale>,
    pub diagnostics: Diagnostics,
}

fn rows_of(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> anyhow::Result<DMatrix<f64>> {
    ensure!(
        rows.len() == nrows && rows.iter().all(|r| r.len() == ncols),
        "{what} must be {nrows} × {ncols}"
    );
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn from_fit(fit: &AdditiveFit, rescale: Option<Rescale>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            metric: fit.metric,
            m: fit.response_dim(),
            q: fit.predictors(),
            mu_hat: rows_of(fit.mu_hat.as_matrix()),
            grid_nodes: fit.grid.nodes(),
            kernel: fit.kernel.family,
            bandwidths: fit.kernel.bandwidths.clone(),
            basis: fit.basis.vectors().iter().map(|v| rows_of(v.as_matrix())).collect(),
            components: fit.components.iter().map(rows_of).collect(),
            rescale,
            diagnostics: fit.diagnostics.into(),
        }
    }

    pub fn to_fit(&self) -> anyhow::Result<AdditiveFit> {
        if self.format_version != FORMAT_VERSION {
            bail!("unsupported model format version {}", self.format_version);
        }
        let (m, q) = (self.m, self.q);
        let d = m * (m + 1) / 2;
        let mu_hat = SpdMatrix::new(matrix_of(&self.mu_hat, m, m, "mu_hat")?).context("mu_hat")?;
        let vectors = self
            .basis
            .iter()
            .map(|v| Ok(SymmetricMatrix::new(matrix_of(v, m, m, "basis vector")?)?))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let basis = TangentBasis::from_vectors(mu_hat.clone(), vectors)?;
        let grid = GridSpec::new(self.grid_nodes.len())?;
        let expected = grid.nodes();
        ensure!(
            self.grid_nodes.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12),
            "grid nodes must be equispaced on [0, 1]"
        );
        ensure!(self.components.len() == q, "expected {q} components");
        let components = self
            .components
            .iter()
            .map(|c| matrix_of(c, grid.points, d, "component"))
            .collect::<anyhow::Result<Vec<_>>>()?;
        ensure!(self.bandwidths.len() == q, "expected {q} bandwidths");
        if let Some(r) = &self.rescale {
            ensure!(r.min.len() == q && r.max.len() == q, "rescale map must have {q} columns");
        }
        Ok(AdditiveFit {
            metric: self.metric,
            mu_hat,
            basis,
            grid,
            kernel: KernelSpec::new(self.kernel, self.bandwidths.clone())?,
            components,
            diagnostics: self.diagnostics.into(),
        })
    }

    pub fn to_json(&self) -> anyhow::Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> anyhow::Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}
