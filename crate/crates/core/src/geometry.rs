//! Riemannian and Lie-group geometry of the SPD cone.
//!
//! [`Geometry`] is the manifold-level contract the regression pipeline relies
//! on (Exp/Log at arbitrary base points, parallel transport, metric, Fréchet
//! mean). [`LieGroup`] adds the abelian group operation with its Lie exp/log,
//! which is what turns fitted tangent components back into SPD-valued
//! component functions. Two implementations ship: [`LogCholesky`] and
//! [`LogEuclidean`]. Both are flat, so every map has a closed form.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{
    cholesky, half_lower, sym_exp, sym_log, CholeskyFactor, Spectral, SpdMatrix, SymmetricMatrix,
};

/// Relative tolerance when checking that a tangent vector sits at a given base.
const BASE_TOL: f64 = 1e-12;

/// A symmetric matrix attached to the base point whose tangent space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: SpdMatrix,
    value: SymmetricMatrix,
}

impl TangentVector {
    pub fn new(base: SpdMatrix, value: SymmetricMatrix) -> Result<Self> {
        if base.dim() != value.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                found: value.dim(),
            });
        }
        Ok(Self { base, value })
    }

    pub fn zero(base: SpdMatrix) -> Self {
        let m = base.dim();
        Self {
            base,
            value: SymmetricMatrix::zeros(m),
        }
    }

    pub fn base(&self) -> &SpdMatrix {
        &self.base
    }

    pub fn value(&self) -> &SymmetricMatrix {
        &self.value
    }

    pub fn into_value(self) -> SymmetricMatrix {
        self.value
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }

    pub fn is_at(&self, base: &SpdMatrix) -> bool {
        self.base.approx_eq(base, BASE_TOL)
    }

    pub(crate) fn ensure_at(&self, base: &SpdMatrix) -> Result<()> {
        if self.is_at(base) {
            Ok(())
        } else {
            Err(Error::BaseMismatch)
        }
    }

    pub fn scaled(&self, a: f64) -> TangentVector {
        Self {
            base: self.base.clone(),
            value: &self.value * a,
        }
    }

    /// Sum of two vectors in the same tangent space.
    pub fn try_add(&self, other: &TangentVector) -> Result<TangentVector> {
        other.ensure_at(&self.base)?;
        Ok(Self {
            base: self.base.clone(),
            value: &self.value + &other.value,
        })
    }

    pub fn try_sub(&self, other: &TangentVector) -> Result<TangentVector> {
        other.ensure_at(&self.base)?;
        Ok(Self {
            base: self.base.clone(),
            value: &self.value - &other.value,
        })
    }
}

/// Riemannian structure on the SPD cone used by the regression pipeline.
pub trait Geometry: Send + Sync {
    fn name(&self) -> &'static str;

    /// Riemannian logarithm Log_base(q).
    fn riem_log(&self, base: &SpdMatrix, q: &SpdMatrix) -> Result<TangentVector>;

    /// Riemannian exponential Exp_base(u).
    fn riem_exp(&self, base: &SpdMatrix, u: &TangentVector) -> Result<SpdMatrix>;

    /// Parallel transport of `u` from `from` to `to` along the connecting geodesic.
    fn transport(&self, from: &SpdMatrix, to: &SpdMatrix, u: &TangentVector)
        -> Result<TangentVector>;

    /// Metric g_base(u, v).
    fn inner(&self, base: &SpdMatrix, u: &TangentVector, v: &TangentVector) -> Result<f64>;

    fn norm(&self, base: &SpdMatrix, u: &TangentVector) -> Result<f64> {
        Ok(self.inner(base, u, u)?.max(0.0).sqrt())
    }

    fn distance(&self, p: &SpdMatrix, q: &SpdMatrix) -> Result<f64>;

    /// Minimizer of the sum of squared distances to the sample.
    fn frechet_mean(&self, sample: &[SpdMatrix]) -> Result<SpdMatrix>;
}

/// Abelian group structure with a bi-invariant metric; identity is I.
pub trait LieGroup: Geometry {
    fn identity(&self, m: usize) -> SpdMatrix {
        SpdMatrix::identity(m)
    }

    fn group_op(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix>;

    /// Lie logarithm, a tangent vector at the identity.
    fn lie_log(&self, p: &SpdMatrix) -> Result<TangentVector> {
        self.riem_log(&self.identity(p.dim()), p)
    }

    /// Lie exponential of a tangent vector at the identity.
    fn lie_exp(&self, u: &TangentVector) -> Result<SpdMatrix> {
        self.riem_exp(&self.identity(u.dim()), u)
    }
}

fn same_dim(p: &SpdMatrix, q: &SpdMatrix) -> Result<()> {
    if p.dim() == q.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        })
    }
}

fn common_dim(sample: &[SpdMatrix]) -> Result<usize> {
    let first = sample.first().ok_or(Error::EmptySample)?;
    for p in sample {
        same_dim(first, p)?;
    }
    Ok(first.dim())
}

// ---------------------------------------------------------------------------
// Log-Cholesky

/// Log-Cholesky metric: Cholesky factors with the strict lower part kept
/// Euclidean and the diagonal taken in log scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogCholesky;

fn strict(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = a.lower_triangle();
    s.fill_diagonal(0.0);
    s
}

impl LogCholesky {
    /// SPD tangent U at P = LLᵀ to the Cholesky tangent X = L (L⁻¹ U L⁻ᵀ)_½.
    pub fn tangent_to_factor(l: &CholeskyFactor, u: &SymmetricMatrix) -> DMatrix<f64> {
        let linv = l.inverse();
        let s = &linv * u.as_matrix() * linv.transpose();
        l.as_matrix() * half_lower(&s).into_matrix()
    }

    /// Inverse of [`Self::tangent_to_factor`]: U = X Lᵀ + L Xᵀ.
    pub fn factor_to_tangent(l: &CholeskyFactor, x: &DMatrix<f64>) -> SymmetricMatrix {
        let xl = x * l.as_matrix().transpose();
        let t = xl.transpose();
        SymmetricMatrix::from_matrix_unchecked(xl + t)
    }

    fn factor_exp(l: &CholeskyFactor, x: &DMatrix<f64>) -> CholeskyFactor {
        let mut k = strict(l.as_matrix()) + strict(x);
        for i in 0..l.dim() {
            let d = l.as_matrix()[(i, i)];
            k[(i, i)] = d * (x[(i, i)] / d).exp();
        }
        CholeskyFactor::from_matrix_unchecked(k)
    }

    fn factor_log(l: &CholeskyFactor, k: &CholeskyFactor) -> DMatrix<f64> {
        let mut x = strict(k.as_matrix()) - strict(l.as_matrix());
        for i in 0..l.dim() {
            let d = l.as_matrix()[(i, i)];
            x[(i, i)] = d * (k.as_matrix()[(i, i)] / d).ln();
        }
        x
    }

    fn factor_transport(l: &CholeskyFactor, k: &CholeskyFactor, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = strict(x);
        for i in 0..l.dim() {
            y[(i, i)] = k.as_matrix()[(i, i)] / l.as_matrix()[(i, i)] * x[(i, i)];
        }
        y
    }

    fn factor_inner(l: &CholeskyFactor, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let m = l.dim();
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..i {
                acc += x[(i, j)] * y[(i, j)];
            }
            let d = l.as_matrix()[(i, i)];
            acc += x[(i, i)] * y[(i, i)] / (d * d);
        }
        acc
    }

    /// Flat chart 𝔏(L) + log 𝔇(L).
    fn chart(l: &CholeskyFactor) -> DMatrix<f64> {
        let mut c = strict(l.as_matrix());
        for i in 0..l.dim() {
            c[(i, i)] = l.as_matrix()[(i, i)].ln();
        }
        c
    }

    fn unchart(c: &DMatrix<f64>) -> CholeskyFactor {
        let mut l = strict(c);
        for i in 0..c.nrows() {
            l[(i, i)] = c[(i, i)].exp();
        }
        CholeskyFactor::from_matrix_unchecked(l)
    }
}

impl Geometry for LogCholesky {
    fn name(&self) -> &'static str {
        "log_cholesky"
    }

    fn riem_log(&self, base: &SpdMatrix, q: &SpdMatrix) -> Result<TangentVector> {
        same_dim(base, q)?;
        let l = cholesky(base)?;
        let k = cholesky(q)?;
        let x = Self::factor_log(&l, &k);
        TangentVector::new(base.clone(), Self::factor_to_tangent(&l, &x))
    }

    fn riem_exp(&self, base: &SpdMatrix, u: &TangentVector) -> Result<SpdMatrix> {
        u.ensure_at(base)?;
        let l = cholesky(base)?;
        let x = Self::tangent_to_factor(&l, u.value());
        Ok(Self::factor_exp(&l, &x).to_spd())
    }

    fn transport(
        &self,
        from: &SpdMatrix,
        to: &SpdMatrix,
        u: &TangentVector,
    ) -> Result<TangentVector> {
        same_dim(from, to)?;
        u.ensure_at(from)?;
        let l = cholesky(from)?;
        let k = cholesky(to)?;
        let x = Self::tangent_to_factor(&l, u.value());
        let y = Self::factor_transport(&l, &k, &x);
        TangentVector::new(to.clone(), Self::factor_to_tangent(&k, &y))
    }

    fn inner(&self, base: &SpdMatrix, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        u.ensure_at(base)?;
        v.ensure_at(base)?;
        let l = cholesky(base)?;
        let x = Self::tangent_to_factor(&l, u.value());
        let y = Self::tangent_to_factor(&l, v.value());
        Ok(Self::factor_inner(&l, &x, &y))
    }

    fn distance(&self, p: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
        same_dim(p, q)?;
        let diff = Self::chart(&cholesky(q)?) - Self::chart(&cholesky(p)?);
        Ok(diff.norm())
    }

    fn frechet_mean(&self, sample: &[SpdMatrix]) -> Result<SpdMatrix> {
        let m = common_dim(sample)?;
        let mut acc = DMatrix::<f64>::zeros(m, m);
        for p in sample {
            acc += Self::chart(&cholesky(p)?);
        }
        acc /= sample.len() as f64;
        Ok(Self::unchart(&acc).to_spd())
    }
}

impl LieGroup for LogCholesky {
    fn group_op(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
        same_dim(a, b)?;
        let la = cholesky(a)?;
        let lb = cholesky(b)?;
        let mut k = strict(la.as_matrix()) + strict(lb.as_matrix());
        for i in 0..a.dim() {
            k[(i, i)] = la.as_matrix()[(i, i)] * lb.as_matrix()[(i, i)];
        }
        Ok(CholeskyFactor::from_matrix_unchecked(k).to_spd())
    }
}

// ---------------------------------------------------------------------------
// Log-Euclidean

/// Log-Euclidean metric: the matrix logarithm is a global isometry onto the
/// space of symmetric matrices with the Frobenius inner product.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogEuclidean;

impl Geometry for LogEuclidean {
    fn name(&self) -> &'static str {
        "log_euclidean"
    }

    fn riem_log(&self, base: &SpdMatrix, q: &SpdMatrix) -> Result<TangentVector> {
        same_dim(base, q)?;
        let log_base = sym_log(base)?;
        let diff = sym_log(q)? - &log_base;
        let value = Spectral::of(log_base.as_matrix()).dexp(&diff);
        TangentVector::new(base.clone(), value)
    }

    fn riem_exp(&self, base: &SpdMatrix, u: &TangentVector) -> Result<SpdMatrix> {
        u.ensure_at(base)?;
        let spec = Spectral::of(base.as_matrix());
        Ok(sym_exp(&(spec.log() + spec.dlog(u.value()))))
    }

    fn transport(
        &self,
        from: &SpdMatrix,
        to: &SpdMatrix,
        u: &TangentVector,
    ) -> Result<TangentVector> {
        same_dim(from, to)?;
        u.ensure_at(from)?;
        let flat = Spectral::of(from.as_matrix()).dlog(u.value());
        let log_to = sym_log(to)?;
        let value = Spectral::of(log_to.as_matrix()).dexp(&flat);
        TangentVector::new(to.clone(), value)
    }

    fn inner(&self, base: &SpdMatrix, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        u.ensure_at(base)?;
        v.ensure_at(base)?;
        let spec = Spectral::of(base.as_matrix());
        Ok(spec.dlog(u.value()).frobenius_dot(&spec.dlog(v.value())))
    }

    fn distance(&self, p: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
        same_dim(p, q)?;
        Ok((sym_log(p)? - sym_log(q)?).frobenius_norm())
    }

    fn frechet_mean(&self, sample: &[SpdMatrix]) -> Result<SpdMatrix> {
        let m = common_dim(sample)?;
        let mut acc = SymmetricMatrix::zeros(m);
        for p in sample {
            acc = acc + sym_log(p)?;
        }
        Ok(sym_exp(&(acc * (1.0 / sample.len() as f64))))
    }
}

impl LieGroup for LogEuclidean {
    fn group_op(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
        same_dim(a, b)?;
        Ok(sym_exp(&(sym_log(a)? + sym_log(b)?)))
    }

    fn lie_log(&self, p: &SpdMatrix) -> Result<TangentVector> {
        TangentVector::new(SpdMatrix::identity(p.dim()), sym_log(p)?)
    }

    fn lie_exp(&self, u: &TangentVector) -> Result<SpdMatrix> {
        u.ensure_at(&SpdMatrix::identity(u.dim()))?;
        Ok(sym_exp(u.value()))
    }
}

// ---------------------------------------------------------------------------
// Runtime selection

/// The shipped geometries, selectable at runtime and serializable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LogCholesky,
    LogEuclidean,
}

impl Metric {
    fn geometry(&self) -> &'static dyn LieGroup {
        match self {
            Metric::LogCholesky => &LogCholesky,
            Metric::LogEuclidean => &LogEuclidean,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.geometry().name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "log_cholesky" => Ok(Metric::LogCholesky),
            "log_euclidean" => Ok(Metric::LogEuclidean),
            other => Err(Error::InvalidInput(format!("unknown metric `{other}`"))),
        }
    }
}

impl Geometry for Metric {
    fn name(&self) -> &'static str {
        self.geometry().name()
    }
    fn riem_log(&self, base: &SpdMatrix, q: &SpdMatrix) -> Result<TangentVector> {
        self.geometry().riem_log(base, q)
    }
    fn riem_exp(&self, base: &SpdMatrix, u: &TangentVector) -> Result<SpdMatrix> {
        self.geometry().riem_exp(base, u)
    }
    fn transport(
        &self,
        from: &SpdMatrix,
        to: &SpdMatrix,
        u: &TangentVector,
    ) -> Result<TangentVector> {
        self.geometry().transport(from, to, u)
    }
    fn inner(&self, base: &SpdMatrix, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        self.geometry().inner(base, u, v)
    }
    fn distance(&self, p: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
        self.geometry().distance(p, q)
    }
    fn frechet_mean(&self, sample: &[SpdMatrix]) -> Result<SpdMatrix> {
        self.geometry().frechet_mean(sample)
    }
}

impl LieGroup for Metric {
    fn group_op(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
        self.geometry().group_op(a, b)
    }
    fn lie_log(&self, p: &SpdMatrix) -> Result<TangentVector> {
        self.geometry().lie_log(p)
    }
    fn lie_exp(&self, u: &TangentVector) -> Result<SpdMatrix> {
        self.geometry().lie_exp(u)
    }
}

// ---------------------------------------------------------------------------
// Tangent coordinates

/// Canonical symmetric basis {E_11, ..., E_mm, E_ij + E_ji (i < j)}.
pub fn canonical_symmetric_basis(m: usize) -> Vec<SymmetricMatrix> {
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        let mut e = DMatrix::zeros(m, m);
        e[(i, i)] = 1.0;
        out.push(SymmetricMatrix::from_matrix_unchecked(e));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let mut e = DMatrix::zeros(m, m);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(SymmetricMatrix::from_matrix_unchecked(e));
        }
    }
    out
}

/// Coefficients of `s` in [`canonical_symmetric_basis`].
fn canonical_coordinates(s: &DMatrix<f64>) -> DVector<f64> {
    let m = s.nrows();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        out.push(s[(i, i)]);
    }
    for i in 0..m {
        for j in (i + 1)..m {
            out.push(s[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// A basis of one tangent space, orthonormal for the metric it was built
/// with. Coordinates in this basis turn tangent-valued smoothing into
/// ordinary D-vector smoothing with D = m(m+1)/2.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    base: SpdMatrix,
    vectors: Vec<SymmetricMatrix>,
    /// Maps canonical coordinates to basis coordinates.
    coord_map: DMatrix<f64>,
}

impl TangentBasis {
    /// Gram-Schmidt on the canonical symmetric basis under g_base.
    pub fn orthonormal<G: Geometry + ?Sized>(geometry: &G, base: &SpdMatrix) -> Result<Self> {
        let mut vectors: Vec<TangentVector> = Vec::new();
        for e in canonical_symmetric_basis(base.dim()) {
            let mut v = TangentVector::new(base.clone(), e)?;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for b in &vectors {
                    let c = geometry.inner(base, &v, b)?;
                    v = v.try_sub(&b.scaled(c))?;
                }
            }
            let norm = geometry.norm(base, &v)?;
            if !(norm > 1e-300) {
                return Err(Error::InvalidInput("tangent metric is degenerate".into()));
            }
            vectors.push(v.scaled(1.0 / norm));
        }
        Self::from_vectors(base.clone(), vectors.into_iter().map(|v| v.into_value()).collect())
    }

    /// Rebuilds a basis from stored vectors (for instance from a model file).
    pub fn from_vectors(base: SpdMatrix, vectors: Vec<SymmetricMatrix>) -> Result<Self> {
        let m = base.dim();
        let d = m * (m + 1) / 2;
        if vectors.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: vectors.len(),
            });
        }
        let mut b = DMatrix::zeros(d, d);
        for (col, v) in vectors.iter().enumerate() {
            if v.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: v.dim(),
                });
            }
            b.set_column(col, &canonical_coordinates(v.as_matrix()));
        }
        let coord_map = b
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("basis vectors are linearly dependent".into()))?;
        Ok(Self {
            base,
            vectors,
            coord_map,
        })
    }

    pub fn base(&self) -> &SpdMatrix {
        &self.base
    }

    pub fn vectors(&self) -> &[SymmetricMatrix] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn coordinates(&self, u: &TangentVector) -> Result<DVector<f64>> {
        u.ensure_at(&self.base)?;
        Ok(self.coordinates_of(u.value()))
    }

    pub fn coordinates_of(&self, value: &SymmetricMatrix) -> DVector<f64> {
        &self.coord_map * canonical_coordinates(value.as_matrix())
    }

    pub fn vector(&self, coords: &[f64]) -> TangentVector {
        let m = self.base.dim();
        let mut acc = DMatrix::zeros(m, m);
        for (c, v) in coords.iter().zip(&self.vectors) {
            acc += v.as_matrix() * *c;
        }
        TangentVector {
            base: self.base.clone(),
            value: SymmetricMatrix::from_matrix_unchecked(acc),
        }
    }
}
