//! Dense small-matrix kernel for symmetric and SPD matrices.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` wrapped in newtypes that
//! carry the structural invariant: [`SymmetricMatrix`], [`SpdMatrix`],
//! [`LowerTriangular`] and [`CholeskyFactor`]. Matrix functions of symmetric
//! arguments go through the symmetric eigendecomposition, and their
//! directional derivatives use the Daleckii-Krein divided-difference formula
//! on the same eigenbasis.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry absorbed by symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Pivots and eigenvalues at or below this value are "not positive definite".
pub const PD_FLOOR: f64 = 1e-14;

/// Divided differences closer than this use the midpoint derivative.
const DIVIDED_DIFF_GUARD: f64 = 1e-8;

fn symmetrize_checked(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let m = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..i {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            let scale = a[(i, j)].abs().max(a[(j, i)].abs()).max(1.0);
            if !gap.is_finite() || gap > SYMMETRY_TOL * scale {
                worst = worst.max(if gap.is_finite() { gap } else { f64::INFINITY });
            }
        }
    }
    if worst > 0.0 {
        return Err(Error::NotSymmetric(worst));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(symmetrize(a))
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    (a + t) * 0.5
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// A real symmetric m×m matrix; tangent vectors of the SPD manifold live here.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Validates symmetry; small roundoff asymmetry is averaged away.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        symmetrize_checked(a).map(Self)
    }

    /// Symmetrizes without checking. For results that are symmetric by construction.
    pub(crate) fn from_matrix_unchecked(a: DMatrix<f64>) -> Self {
        Self(symmetrize(a))
    }

    pub fn zeros(m: usize) -> Self {
        Self(DMatrix::zeros(m, m))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    /// Builds from the lower triangle listed row by row: a11, a21, a22, a31, ...
    pub fn from_lower_triangle(m: usize, values: &[f64]) -> Result<Self> {
        check_dims(m * (m + 1) / 2, values.len())?;
        let mut a = DMatrix::zeros(m, m);
        let mut it = values.iter();
        for i in 0..m {
            for j in 0..=i {
                let v = *it.next().unwrap();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        Ok(Self(a))
    }

    /// Lower triangle row by row, the inverse of [`Self::from_lower_triangle`].
    pub fn lower_triangle(&self) -> Vec<f64> {
        lower_triangle_of(&self.0)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius inner product trace(AB).
    pub fn frobenius_dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }
}

pub(crate) fn lower_triangle_of(a: &DMatrix<f64>) -> Vec<f64> {
    let m = a.nrows();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in 0..=i {
            out.push(a[(i, j)]);
        }
    }
    out
}

macro_rules! sym_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<SymmetricMatrix> for SymmetricMatrix {
            type Output = SymmetricMatrix;
            fn $method(self, rhs: SymmetricMatrix) -> SymmetricMatrix {
                SymmetricMatrix(self.0 $op rhs.0)
            }
        }
        impl<'a> $trait<&'a SymmetricMatrix> for &'a SymmetricMatrix {
            type Output = SymmetricMatrix;
            fn $method(self, rhs: &'a SymmetricMatrix) -> SymmetricMatrix {
                SymmetricMatrix(&self.0 $op &rhs.0)
            }
        }
        impl<'a> $trait<&'a SymmetricMatrix> for SymmetricMatrix {
            type Output = SymmetricMatrix;
            fn $method(self, rhs: &'a SymmetricMatrix) -> SymmetricMatrix {
                SymmetricMatrix(self.0 $op &rhs.0)
            }
        }
    };
}

sym_binop!(Add, add, +);
sym_binop!(Sub, sub, -);

impl Mul<f64> for SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn mul(self, rhs: f64) -> SymmetricMatrix {
        SymmetricMatrix(self.0 * rhs)
    }
}

impl Mul<f64> for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn mul(self, rhs: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * rhs)
    }
}

impl Neg for SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn neg(self) -> SymmetricMatrix {
        SymmetricMatrix(-self.0)
    }
}

/// A symmetric positive-definite m×m matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry and positive-definiteness (via Cholesky).
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let a = symmetrize_checked(a)?;
        cholesky_raw(&a)?;
        Ok(Self(a))
    }

    pub(crate) fn from_matrix_unchecked(a: DMatrix<f64>) -> Self {
        Self(symmetrize(a))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn from_lower_triangle(m: usize, values: &[f64]) -> Result<Self> {
        Self::new(SymmetricMatrix::from_lower_triangle(m, values)?.0)
    }

    pub fn lower_triangle(&self) -> Vec<f64> {
        lower_triangle_of(&self.0)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Matrix inverse, computed through the Cholesky factor.
    pub fn inverse(&self) -> SpdMatrix {
        let l = cholesky(self).expect("validated SPD matrix");
        let linv = l.inverse();
        SpdMatrix::from_matrix_unchecked(linv.transpose() * linv)
    }

    /// Relative Frobenius distance used to compare base points.
    pub fn approx_eq(&self, other: &SpdMatrix, rel_tol: f64) -> bool {
        self.dim() == other.dim()
            && (&self.0 - &other.0).norm() <= rel_tol * self.0.norm().max(other.0.norm()).max(1.0)
    }
}

/// A lower-triangular matrix, no sign constraint on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(DMatrix<f64>);

impl LowerTriangular {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        for i in 0..a.nrows() {
            for j in (i + 1)..a.ncols() {
                if a[(i, j)] != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i}, {j}) above the diagonal is nonzero"
                    )));
                }
            }
        }
        Ok(Self(a))
    }

    /// Zeroes the strict upper triangle of `a`.
    pub fn lower_part_of(a: &DMatrix<f64>) -> Self {
        Self(a.lower_triangle())
    }

    pub fn zeros(m: usize) -> Self {
        Self(DMatrix::zeros(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Strict lower triangular part (zero diagonal).
    pub fn strict_lower(&self) -> LowerTriangular {
        LowerTriangular(self.0.lower_triangle() - DMatrix::from_diagonal(&self.0.diagonal()))
    }

    /// Diagonal part.
    pub fn diag_part(&self) -> LowerTriangular {
        LowerTriangular(DMatrix::from_diagonal(&self.0.diagonal()))
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }
}

impl Add for LowerTriangular {
    type Output = LowerTriangular;
    fn add(self, rhs: LowerTriangular) -> LowerTriangular {
        LowerTriangular(self.0 + rhs.0)
    }
}

impl Sub for LowerTriangular {
    type Output = LowerTriangular;
    fn sub(self, rhs: LowerTriangular) -> LowerTriangular {
        LowerTriangular(self.0 - rhs.0)
    }
}

impl Mul<f64> for LowerTriangular {
    type Output = LowerTriangular;
    fn mul(self, rhs: f64) -> LowerTriangular {
        LowerTriangular(self.0 * rhs)
    }
}

/// Lower-triangular matrix with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor(DMatrix<f64>);

impl CholeskyFactor {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let lower = LowerTriangular::new(a)?;
        if let Some(d) = lower.0.diagonal().iter().find(|d| !(**d > 0.0)) {
            return Err(Error::NotPositiveDefinite(*d));
        }
        Ok(Self(lower.0))
    }

    pub(crate) fn from_matrix_unchecked(a: DMatrix<f64>) -> Self {
        Self(a)
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn as_lower(&self) -> LowerTriangular {
        LowerTriangular(self.0.clone())
    }

    /// L Lᵀ.
    pub fn to_spd(&self) -> SpdMatrix {
        SpdMatrix::from_matrix_unchecked(&self.0 * self.0.transpose())
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    /// Inverse of the factor by forward substitution; lower triangular.
    pub fn inverse(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut inv = DMatrix::<f64>::identity(m, m);
        // solve L X = I column by column
        for c in 0..m {
            for i in 0..m {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in 0..i {
                    s -= self.0[(i, k)] * inv[(k, c)];
                }
                inv[(i, c)] = s / self.0[(i, i)];
            }
        }
        inv
    }
}

fn cholesky_raw(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let mut l = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > PD_FLOOR) {
            return Err(Error::NotPositiveDefinite(pivot));
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// The unique lower-triangular L with positive diagonal and L Lᵀ = P.
pub fn cholesky(p: &SpdMatrix) -> Result<CholeskyFactor> {
    cholesky_raw(&p.0).map(CholeskyFactor)
}

/// Strict lower part plus half the diagonal of a square matrix.
pub fn half_lower(s: &DMatrix<f64>) -> LowerTriangular {
    let mut out = s.lower_triangle();
    for i in 0..out.nrows() {
        out[(i, i)] *= 0.5;
    }
    LowerTriangular(out)
}

fn eigh(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    (eig.eigenvalues, eig.eigenvectors)
}

fn apply_spectral(q: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let scaled = q * DMatrix::from_diagonal(values);
    scaled * q.transpose()
}

/// Matrix exponential of a symmetric matrix.
pub fn sym_exp(s: &SymmetricMatrix) -> SpdMatrix {
    let (lambda, q) = eigh(&s.0);
    SpdMatrix::from_matrix_unchecked(apply_spectral(&q, &lambda.map(f64::exp)))
}

/// Principal matrix logarithm of an SPD matrix.
pub fn sym_log(p: &SpdMatrix) -> Result<SymmetricMatrix> {
    let (lambda, q) = eigh(&p.0);
    if let Some(bad) = lambda.iter().find(|v| !(**v > PD_FLOOR)) {
        return Err(Error::NotPositiveDefinite(*bad));
    }
    Ok(SymmetricMatrix::from_matrix_unchecked(apply_spectral(
        &q,
        &lambda.map(f64::ln),
    )))
}

fn exp_divided_difference(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() < DIVIDED_DIFF_GUARD {
        (0.5 * (a + b)).exp()
    } else {
        // e^b (e^d - 1) / d, accurate for moderately small d
        b.exp() * d.exp_m1() / d
    }
}

fn log_divided_difference(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() < DIVIDED_DIFF_GUARD * a.max(b) {
        2.0 / (a + b)
    } else {
        (d / b).ln_1p() / d
    }
}

fn daleckii_krein(
    q: &DMatrix<f64>,
    lambda: &DVector<f64>,
    e: &DMatrix<f64>,
    phi: impl Fn(f64, f64) -> f64,
) -> DMatrix<f64> {
    let mut inner = q.transpose() * e * q;
    let m = lambda.len();
    for i in 0..m {
        for j in 0..m {
            inner[(i, j)] *= phi(lambda[i], lambda[j]);
        }
    }
    q * inner * q.transpose()
}

/// Directional derivative of [`sym_exp`] at `s` in direction `e`.
pub fn dexp(s: &SymmetricMatrix, e: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(s.dim(), e.dim())?;
    let (lambda, q) = eigh(&s.0);
    Ok(SymmetricMatrix::from_matrix_unchecked(daleckii_krein(
        &q,
        &lambda,
        &e.0,
        exp_divided_difference,
    )))
}

/// Directional derivative of [`sym_log`] at `p` in direction `u`.
pub fn dlog(p: &SpdMatrix, u: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(p.dim(), u.dim())?;
    let (lambda, q) = eigh(&p.0);
    if let Some(bad) = lambda.iter().find(|v| !(**v > PD_FLOOR)) {
        return Err(Error::NotPositiveDefinite(*bad));
    }
    Ok(SymmetricMatrix::from_matrix_unchecked(daleckii_krein(
        &q,
        &lambda,
        &u.0,
        log_divided_difference,
    )))
}

/// Spectral data of a symmetric matrix, reusable for repeated exp/log
/// derivatives at the same point.
#[derive(Debug, Clone)]
pub(crate) struct Spectral {
    lambda: DVector<f64>,
    q: DMatrix<f64>,
}

impl Spectral {
    pub(crate) fn of(a: &DMatrix<f64>) -> Self {
        let (lambda, q) = eigh(a);
        Self { lambda, q }
    }

    /// dexp at the point whose eigenvalues are the stored ones.
    pub(crate) fn dexp(&self, e: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix::from_matrix_unchecked(daleckii_krein(
            &self.q,
            &self.lambda,
            &e.0,
            exp_divided_difference,
        ))
    }

    /// dlog at the SPD point whose eigenvalues are the stored ones.
    pub(crate) fn dlog(&self, u: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix::from_matrix_unchecked(daleckii_krein(
            &self.q,
            &self.lambda,
            &u.0,
            log_divided_difference,
        ))
    }

    pub(crate) fn log(&self) -> SymmetricMatrix {
        SymmetricMatrix::from_matrix_unchecked(apply_spectral(&self.q, &self.lambda.map(f64::ln)))
    }
}

/// Fractional anisotropy of a 3×3 diffusion tensor.
pub fn fractional_anisotropy(p: &SpdMatrix) -> Result<f64> {
    check_dims(3, p.dim())?;
    let (rho, _) = eigh(&p.0);
    let mean = rho.sum() / 3.0;
    let spread: f64 = rho.iter().map(|r| (r - mean).powi(2)).sum();
    let energy: f64 = rho.iter().map(|r| r * r).sum();
    Ok((1.5 * spread / energy).sqrt().clamp(0.0, 1.0))
}
