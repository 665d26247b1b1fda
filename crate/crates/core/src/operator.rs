//! Dense complex operators with structural flags, plus the two linear-algebra
//! kernels everything else is built on: the Hermitian eigensolver and the
//! matrix exponential.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const HERMITIAN_TOL: f64 = 1e-12;
pub(crate) const PROJECTOR_TOL: f64 = 1e-10;

/// Structural metadata carried alongside the matrix entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpFlags {
    pub hermitian: bool,
    pub unitary: bool,
    pub projector: bool,
}

/// Dense square complex matrix tagged with Hermiticity / unitarity /
/// projector flags. Flags are only ever set after a check (or by a
/// construction that guarantees them), so a flag can be trusted downstream.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    entries: DMatrix<C64>,
    flags: OpFlags,
}

impl OperatorMatrix {
    /// Wraps `entries` and infers the hermitian flag.
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        let hermitian = hermitian_defect(&entries) <= HERMITIAN_TOL;
        Ok(Self {
            entries,
            flags: OpFlags {
                hermitian,
                ..OpFlags::default()
            },
        })
    }

    /// Wraps `entries`, failing unless they are hermitian within tolerance.
    pub fn hermitian(entries: DMatrix<C64>) -> Result<Self> {
        let op = Self::new(entries)?;
        if !op.flags.hermitian {
            return Err(Error::NotHermitian {
                defect: hermitian_defect(&op.entries),
            });
        }
        Ok(op)
    }

    /// Wraps `entries`, failing unless they form an orthogonal projector.
    pub fn projector(entries: DMatrix<C64>) -> Result<Self> {
        let mut op = Self::hermitian(entries)?;
        let defect = (&op.entries * &op.entries - &op.entries).norm();
        if defect > PROJECTOR_TOL {
            return Err(Error::NotProjector { defect });
        }
        op.flags.projector = true;
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            flags: OpFlags {
                hermitian: true,
                unitary: true,
                projector: true,
            },
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
            flags: OpFlags {
                hermitian: true,
                unitary: false,
                projector: true,
            },
        }
    }

    pub(crate) fn from_parts(entries: DMatrix<C64>, flags: OpFlags) -> Self {
        Self { entries, flags }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn flags(&self) -> OpFlags {
        self.flags
    }

    pub fn is_hermitian(&self) -> bool {
        self.flags.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.flags.unitary
    }

    pub fn is_projector(&self) -> bool {
        self.flags.projector
    }

    pub fn adjoint(&self) -> Self {
        Self {
            entries: self.entries.adjoint(),
            flags: self.flags,
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn scale(&self, factor: C64) -> Self {
        let hermitian = self.flags.hermitian && factor.im == 0.0;
        Self {
            entries: &self.entries * factor,
            flags: OpFlags {
                hermitian,
                ..OpFlags::default()
            },
        }
    }

    /// `self * other - other * self`
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Self::new(&self.entries * &other.entries - &other.entries * &self.entries)
    }

    pub fn apply(&self, v: &DVector<C64>) -> Result<DVector<C64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(&self.entries * v)
    }

    /// `<bra| self |ket>`
    pub fn sandwich(&self, bra: &DVector<C64>, ket: &DVector<C64>) -> Result<C64> {
        Ok(bra.dotc(&self.apply(ket)?))
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    fn combine(entries: DMatrix<C64>) -> Self {
        let hermitian = hermitian_defect(&entries) <= HERMITIAN_TOL;
        Self {
            entries,
            flags: OpFlags {
                hermitian,
                ..OpFlags::default()
            },
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Ok(Self::combine(&self.entries + &other.entries))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Ok(Self::combine(&self.entries - &other.entries))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        let mut out = Self::combine(&self.entries * &other.entries);
        out.flags.unitary = self.flags.unitary && other.flags.unitary;
        Ok(out)
    }
}

// Operator overloads panic on dimension mismatch, like nalgebra's own.
impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: Self) -> OperatorMatrix {
        self.try_add(rhs).expect("operator dimensions must agree")
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: Self) -> OperatorMatrix {
        self.try_sub(rhs).expect("operator dimensions must agree")
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: Self) -> OperatorMatrix {
        self.try_mul(rhs).expect("operator dimensions must agree")
    }
}

impl Neg for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn neg(self) -> OperatorMatrix {
        OperatorMatrix {
            entries: -&self.entries,
            flags: OpFlags {
                hermitian: self.flags.hermitian,
                unitary: self.flags.unitary,
                projector: false,
            },
        }
    }
}

/// `||M - M^dagger||_F / ||M||_F` (0 for the zero matrix).
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).norm() / scale
}

/// Eigen-decomposition of a Hermitian operator.
///
/// Eigenvalues are ascending. Each eigenvector is normalised so that its
/// first component of (numerically) largest magnitude is real and positive.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, k: usize) -> DVector<C64> {
        self.vectors.column(k).into_owned()
    }

    /// Rebuilds `sum_k f(lambda_k) v_k v_k^dagger`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        scaled * self.vectors.adjoint()
    }
}

/// Relative magnitude window inside which components count as tied for the
/// phase-fixing pivot.
const PIVOT_TIE: f64 = 1e-10;

pub(crate) fn fix_phase(mut v: nalgebra::DVectorViewMut<'_, C64>) {
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|c| c.norm() >= max * (1.0 - PIVOT_TIE))
        .unwrap_or(0);
    let c = v[pivot];
    let phase = c.conj() / c.norm();
    v *= phase;
    // exact zero imaginary part on the pivot
    v[pivot] = C64::new(v[pivot].re, 0.0);
}

pub fn eig_hermitian(m: &OperatorMatrix) -> Result<HermitianEigen> {
    if !m.is_hermitian() {
        return Err(Error::NotHermitian {
            defect: hermitian_defect(m.matrix()),
        });
    }
    if m.matrix()
        .iter()
        .any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(Error::NonFinite("eigensolver input"));
    }
    Ok(eig_hermitian_unchecked(m.matrix()))
}

pub(crate) fn eig_hermitian_unchecked(m: &DMatrix<C64>) -> HermitianEigen {
    let n = m.nrows();
    if n == 0 {
        return HermitianEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort: equal eigenvalues keep the solver's order
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        fix_phase(vectors.column_mut(dst));
    }
    HermitianEigen { values, vectors }
}

/// Real symmetric variant used for the displacement fast path.
pub(crate) fn eig_real_symmetric(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `exp(scale * M)`.
///
/// Hermitian input goes through the eigendecomposition, which keeps
/// `exp(i t H)` unitary to rounding; anything else uses nalgebra's Padé
/// scaling-and-squaring.
pub fn expm(m: &OperatorMatrix, scale: C64) -> Result<OperatorMatrix> {
    if !scale.re.is_finite() || !scale.im.is_finite() {
        return Err(Error::NonFinite("expm scale"));
    }
    if m.matrix()
        .iter()
        .any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(Error::NonFinite("expm input"));
    }
    if m.is_hermitian() {
        let eig = eig_hermitian_unchecked(m.matrix());
        let entries = eig.map_spectrum(|lambda| (scale * lambda).exp());
        let flags = OpFlags {
            hermitian: scale.im == 0.0,
            unitary: scale.re == 0.0,
            projector: false,
        };
        return Ok(OperatorMatrix::from_parts(entries, flags));
    }
    let entries = (m.matrix() * scale).exp();
    if entries
        .iter()
        .any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(Error::NonFinite("expm output"));
    }
    Ok(OperatorMatrix::combine(entries))
}

/// `exp(scale * M) v` without forming the exponential: truncated Taylor
/// series on sub-steps of unit 1-norm.
pub fn expm_apply(m: &DMatrix<C64>, scale: C64, v: &DVector<C64>) -> DVector<C64> {
    let norm1 = m
        .column_iter()
        .map(|c| c.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
        * scale.norm();
    let steps = norm1.ceil().max(1.0) as usize;
    let h = scale / steps as f64;
    let mut out = v.clone();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..64 {
            term = (m * &term) * (h / k as f64);
            acc += &term;
            if term.norm() <= 1e-18 * acc.norm() {
                break;
            }
        }
        out = acc;
    }
    out
}
