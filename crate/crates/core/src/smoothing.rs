//! Boundary-normalized kernel smoothing on [0, 1] per predictor axis.
//!
//! Densities and marginal regressors are represented on an equispaced grid
//! and integrated with the trapezoid rule. On the grid each observation's
//! kernel weights are renormalized so that their trapezoid integral is
//! exactly one; this keeps the discrete marginal/joint density relations
//! (∫p̂_k = 1, ∫p̂_kj dx_j = p̂_k) exact, which the backfitting system relies
//! on. [`normalized_kernel`] gives the continuous closed-form version used for
//! pointwise evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density values below this at a grid node make the Nadaraya-Watson ratio undefined.
pub const DENSITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Epanechnikov,
    Quartic,
}

impl KernelFamily {
    /// Base kernel on [-1, 1].
    pub fn eval(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        match self {
            KernelFamily::Epanechnikov => 0.75 * s,
            KernelFamily::Quartic => 0.9375 * s * s,
        }
    }

    /// Antiderivative of the base kernel, with value 0 at u = 0.
    fn primitive(self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        let u3 = u * u * u;
        match self {
            KernelFamily::Epanechnikov => 0.75 * (u - u3 / 3.0),
            KernelFamily::Quartic => 0.9375 * (u - 2.0 * u3 / 3.0 + u3 * u * u / 5.0),
        }
    }

    /// Mass of the base kernel between a and b.
    pub fn mass(self, a: f64, b: f64) -> f64 {
        self.primitive(b) - self.primitive(a)
    }
}

/// Kernel family plus one bandwidth per predictor axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidths: Vec<f64>) -> Result<Self> {
        for &h in &bandwidths {
            check_bandwidth(h)?;
        }
        Ok(Self { family, bandwidths })
    }

    pub fn epanechnikov(bandwidths: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Epanechnikov, bandwidths)
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h <= 0.5 {
        Ok(())
    } else {
        Err(Error::BandwidthOutOfRange(h))
    }
}

/// Equispaced grid on [0, 1] with endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 101 }
    }
}

impl GridSpec {
    pub fn new(points: usize) -> Result<Self> {
        if points < 11 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 11 points, got {points}"
            )));
        }
        Ok(Self { points })
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.points - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points).map(|a| a as f64 / last).collect()
    }

    /// Trapezoid-rule weights matching [`Self::nodes`].
    pub fn weights(&self) -> DVector<f64> {
        let mut w = DVector::from_element(self.points, self.spacing());
        w[0] *= 0.5;
        w[self.points - 1] *= 0.5;
        w
    }

    /// Linear interpolation of node values `values` at x ∈ [0, 1].
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let pos = x.clamp(0.0, 1.0) * (self.points - 1) as f64;
        let lo = (pos.floor() as usize).min(self.points - 2);
        let t = pos - lo as f64;
        values[lo] * (1.0 - t) + values[lo + 1] * t
    }
}

/// K_h(x, xi) = h⁻¹K((x − xi)/h) / ∫₀¹ h⁻¹K((w − xi)/h) dw, closed-form normalizer.
pub fn normalized_kernel(family: KernelFamily, x: f64, xi: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    let raw = family.eval((x - xi) / h) / h;
    if raw == 0.0 {
        return Ok(0.0);
    }
    let mass = family.mass(-xi / h, (1.0 - xi) / h);
    Ok(raw / mass)
}

/// Kernel-weight rows: entry (i, a) is K_h(u_a, x_i), renormalized so each
/// row integrates to one under the grid's trapezoid rule.
pub fn kernel_matrix(
    family: KernelFamily,
    values: &[f64],
    h: f64,
    grid: &GridSpec,
) -> Result<DMatrix<f64>> {
    check_bandwidth(h)?;
    let nodes = grid.nodes();
    let w = grid.weights();
    let mut k = DMatrix::zeros(values.len(), nodes.len());
    for (i, &xi) in values.iter().enumerate() {
        let mut total = 0.0;
        for (a, &u) in nodes.iter().enumerate() {
            let v = family.eval((u - xi) / h) / h;
            k[(i, a)] = v;
            total += v * w[a];
        }
        if !(total > 0.0) {
            return Err(Error::InvalidInput(format!(
                "bandwidth {h} is too small for a {}-point grid",
                grid.points
            )));
        }
        for a in 0..nodes.len() {
            k[(i, a)] /= total;
        }
    }
    Ok(k)
}

/// Marginal and pairwise kernel density estimates on the grid.
#[derive(Debug, Clone)]
pub struct DensityEstimates {
    pub grid: GridSpec,
    /// Per axis, the n × M kernel-weight matrix.
    pub kernels: Vec<DMatrix<f64>>,
    /// Per axis, p̂_k at the grid nodes.
    pub marginal: Vec<DVector<f64>>,
    /// p̂_kj at node pairs for k < j, stored row-major in (k, j) order.
    joint: Vec<DMatrix<f64>>,
    q: usize,
}

impl DensityEstimates {
    pub fn axes(&self) -> usize {
        self.q
    }

    pub fn sample_size(&self) -> usize {
        self.kernels.first().map_or(0, |k| k.nrows())
    }

    fn pair_index(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < j && j < self.q);
        // pairs (0,1),(0,2),..,(0,q-1),(1,2),...
        k * (2 * self.q - k - 1) / 2 + (j - k - 1)
    }

    /// p̂_kj(u_a, u_b) with rows indexed by axis k's nodes; k ≠ j.
    pub fn joint(&self, k: usize, j: usize) -> DMatrix<f64> {
        assert_ne!(k, j, "joint density needs two distinct axes");
        if k < j {
            self.joint[self.pair_index(k, j)].clone()
        } else {
            self.joint[self.pair_index(j, k)].transpose()
        }
    }

    /// First grid node where p̂_k falls below the floor.
    pub fn check_positive(&self, k: usize) -> Result<()> {
        match self.marginal[k].iter().position(|&p| !(p >= DENSITY_FLOOR)) {
            Some(node) => Err(Error::DegenerateDensity {
                axis: k,
                node,
                value: self.marginal[k][node],
            }),
            None => Ok(()),
        }
    }
}

/// p̂_k and p̂_kj from an n × q design with entries in [0, 1].
pub fn estimate_densities(
    design: &DMatrix<f64>,
    kernel: &KernelSpec,
    grid: &GridSpec,
) -> Result<DensityEstimates> {
    let n = design.nrows();
    let q = design.ncols();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if kernel.bandwidths.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: kernel.bandwidths.len(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let kernels = (0..q)
        .map(|k| {
            let col: Vec<f64> = design.column(k).iter().copied().collect();
            kernel_matrix(kernel.family, &col, kernel.bandwidths[k], grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let marginal = kernels
        .iter()
        .map(|km| km.row_sum().transpose() * inv_n)
        .collect();
    let mut joint = Vec::with_capacity(q * q.saturating_sub(1) / 2);
    for k in 0..q {
        for j in (k + 1)..q {
            joint.push(kernels[k].transpose() * &kernels[j] * inv_n);
        }
    }
    Ok(DensityEstimates {
        grid: *grid,
        kernels,
        marginal,
        joint,
        q,
    })
}

/// Nadaraya-Watson estimate m̂_k on the grid for D-dimensional responses
/// (rows of `responses`). Returns an M × D matrix.
pub fn marginal_regressor(
    densities: &DensityEstimates,
    responses: &DMatrix<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let km = &densities.kernels[k];
    if responses.nrows() != km.nrows() {
        return Err(Error::DimensionMismatch {
            expected: km.nrows(),
            found: responses.nrows(),
        });
    }
    densities.check_positive(k)?;
    let n = km.nrows() as f64;
    let mut out = km.transpose() * responses;
    for (a, mut row) in out.row_iter_mut().enumerate() {
        row /= densities.marginal[k][a] * n;
    }
    Ok(out)
}
