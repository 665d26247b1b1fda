//! Propagators with and without constraints, energy renormalisation and the
//! fixed-point gate for infinite product propagators.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coherent::{CoherentLabel, CoherentStates};
use crate::constraint::ConstraintProjector;
use crate::error::{Error, Result};
use crate::operator::{
    eig_hermitian, eig_hermitian_unchecked, expm, hermitian_defect, OpFlags, OperatorMatrix, C64,
};
use crate::product::{classify_factors, fiducial_weight, LabelSequence, ProductKernelResult};

/// Largest `||[E, H]||` accepted by the commuting branch.
pub const COMMUTING_TOL: f64 = 1e-10;
/// Smallest `<zeta|E|zeta>` for an eigenvector to count as compatible.
pub const COMPATIBILITY_TOL: f64 = 1e-10;
/// Tolerance of the fixed-point gate.
pub const FIXED_POINT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// `E exp(-i (E H E) T) E`.
    General,
    /// `exp(-i H T) E`, valid when `[E, H] = 0`.
    Commuting,
}

fn require_hermitian(h: &OperatorMatrix) -> Result<()> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian {
            defect: hermitian_defect(h.matrix()),
        });
    }
    Ok(())
}

/// `U(T) = exp(-i H T)`.
pub fn propagator(h: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
    require_hermitian(h)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("propagation time"));
    }
    expm(h, C64::new(0.0, -t))
}

/// `||[E, H]||` (Frobenius).
pub fn commutator_norm(e: &ConstraintProjector, h: &OperatorMatrix) -> Result<f64> {
    Ok(e.matrix().commutator(h)?.norm())
}

/// Propagator restricted by the constraint projector.
pub fn constrained_propagator(
    e: &ConstraintProjector,
    h: &OperatorMatrix,
    t: f64,
    branch: Branch,
) -> Result<OperatorMatrix> {
    require_hermitian(h)?;
    if e.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: e.dim(),
            found: h.dim(),
        });
    }
    match branch {
        Branch::General => {
            // on range(E) with orthonormal basis B: E e^{-i EHE T} E = B e^{-i B^dag H B T} B^dag
            let b = e.basis();
            let compressed = b.adjoint() * h.matrix() * b;
            let small = OperatorMatrix::from_parts(
                (&compressed + compressed.adjoint()) * C64::new(0.5, 0.0),
                OpFlags {
                    hermitian: true,
                    ..OpFlags::default()
                },
            );
            let u = propagator(&small, t)?;
            Ok(OperatorMatrix::from_parts(
                b * u.matrix() * b.adjoint(),
                OpFlags::default(),
            ))
        }
        Branch::Commuting => {
            let c = commutator_norm(e, h)?;
            if c > COMMUTING_TOL {
                return Err(Error::NonCommuting(c));
            }
            let u = propagator(h, t)?;
            Ok(OperatorMatrix::from_parts(
                u.matrix() * e.matrix().matrix(),
                OpFlags::default(),
            ))
        }
    }
}

/// `H_bar = H - E_bar` together with the selected physical eigenvector.
#[derive(Clone, Debug)]
pub struct RenormalizedHamiltonian {
    pub h: OperatorMatrix,
    pub h_bar: OperatorMatrix,
    pub energy_shift: f64,
    /// Position of the selection in ascending order (`p` or `r`).
    pub selected_index: usize,
    pub selected_vector: DVector<C64>,
    pub branch: Branch,
}

impl RenormalizedHamiltonian {
    /// `N * E_bar` for an `N`-fold product (bookkeeping only).
    pub fn total_shift(&self, factors: usize) -> f64 {
        factors as f64 * self.energy_shift
    }

    /// The default fiducial: the selected eigenvector itself.
    pub fn fiducial(&self) -> Result<crate::coherent::FiducialVector> {
        crate::coherent::FiducialVector::normalized(self.selected_vector.clone())
    }

    /// `||E eta - <xi|E eta> xi||` and `<eta|E|eta>`: whether `E|eta>` is a
    /// non-zero multiple of the selected vector.
    pub fn fiducial_alignment(
        &self,
        e: &ConstraintProjector,
        eta: &DVector<C64>,
    ) -> Result<(f64, f64)> {
        let projected = e.matrix().apply(eta)?;
        let c = self.selected_vector.dotc(&projected);
        let residual = (&projected - &self.selected_vector * c).norm();
        Ok((residual, projected.norm_squared()))
    }
}

/// Chooses `E_bar` and the physical eigenvector.
///
/// General branch: eigendecompose `E H E` on `range(E)` and take the lowest
/// eigenvalue. Commuting branch: scan the eigenvectors of `H` upwards and
/// take the first with `<zeta|E|zeta> > 1e-10`.
pub fn select_fiducial_and_shift(
    e: &ConstraintProjector,
    h: &OperatorMatrix,
    branch: Branch,
) -> Result<RenormalizedHamiltonian> {
    require_hermitian(h)?;
    if e.is_zero() {
        return Err(Error::ZeroPhysicalSpace(
            "no physical states to select from",
        ));
    }
    let (index, value, vector) = match branch {
        Branch::General => {
            let b = e.basis();
            let compressed = b.adjoint() * h.matrix() * b;
            let eig = eig_hermitian_unchecked(&compressed);
            (0, eig.values[0], b * eig.vector(0))
        }
        Branch::Commuting => {
            let c = commutator_norm(e, h)?;
            if c > COMMUTING_TOL {
                return Err(Error::NonCommuting(c));
            }
            let eig = eig_hermitian(h)?;
            let r = (0..eig.len())
                .find(|&k| e.coordinates(&eig.vector(k)).norm_squared() > COMPATIBILITY_TOL)
                .ok_or(Error::NoCompatibleEigenvector)?;
            (r, eig.values[r], eig.vector(r))
        }
    };
    let shift = OperatorMatrix::identity(h.dim()).scale(C64::new(value, 0.0));
    let h_bar = h.try_sub(&shift)?;
    Ok(RenormalizedHamiltonian {
        h: h.clone(),
        h_bar,
        energy_shift: value,
        selected_index: index,
        selected_vector: vector,
        branch,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumEntry {
    pub index: usize,
    pub eigenvalue: f64,
    /// Eigenvector lies in `range(E)`.
    pub physical: bool,
}

/// Eigenvalues of `H` compressed to `range(E)` (physical) and to `ker(E)`.
pub fn spectrum_report(e: &ConstraintProjector, h: &OperatorMatrix) -> Result<Vec<SpectrumEntry>> {
    require_hermitian(h)?;
    let b = e.basis();
    let phys = eig_hermitian_unchecked(&(b.adjoint() * h.matrix() * b));
    let complement = {
        let eig = eig_hermitian_unchecked(
            &(DMatrix::<C64>::identity(e.dim(), e.dim()) - e.matrix().matrix()),
        );
        let cols: Vec<usize> = (0..eig.len()).filter(|&k| eig.values[k] > 0.5).collect();
        DMatrix::from_fn(e.dim(), cols.len(), |i, c| eig.vectors[(i, cols[c])])
    };
    let unphys = eig_hermitian_unchecked(&(complement.adjoint() * h.matrix() * &complement));
    let mut out: Vec<SpectrumEntry> = phys
        .values
        .iter()
        .map(|&v| (v, true))
        .chain(unphys.values.iter().map(|&v| (v, false)))
        .enumerate()
        .map(|(index, (eigenvalue, physical))| SpectrumEntry {
            index,
            eigenvalue,
            physical,
        })
        .collect();
    // physical block first, each block ascending
    out.sort_by(|a, b| b.physical.cmp(&a.physical).then(a.index.cmp(&b.index)));
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ProductPropagatorResult {
    pub product: ProductKernelResult,
    /// `||X eta - E eta||` for the propagator `X` of one factor.
    pub fixed_point_deviation: f64,
    pub energy_shift: f64,
    /// `N_max * E_bar`.
    pub total_shift: f64,
}

/// Infinite product of `S^-1 <l''_n| X(T) |l'_n>` with `X` the constrained
/// propagator of `H_bar`, gated on `X |eta> = E |eta>`.
pub fn product_propagator(
    states: &CoherentStates,
    e: &ConstraintProjector,
    ren: &RenormalizedHamiltonian,
    bra: &LabelSequence,
    ket: &LabelSequence,
    t: f64,
    n_max: usize,
) -> Result<ProductPropagatorResult> {
    for seq in [bra, ket] {
        let origin = CoherentLabel::origin(seq.modes());
        if seq.limit() != &origin {
            return Err(Error::SectorMismatch(
                "product propagators are assembled in the sector (0,0)".into(),
            ));
        }
    }
    let s_bar = fiducial_weight(states, e)?;
    let eta = states.fiducial().vector();
    let (alignment, _) = ren.fiducial_alignment(e, eta)?;
    if alignment > FIXED_POINT_TOL {
        return Err(Error::FixedPointViolated {
            condition: "E|eta> must be a multiple of the selected eigenvector",
            deviation: alignment,
        });
    }
    let x = constrained_propagator(e, &ren.h_bar, t, ren.branch)?;
    let e_eta = e.matrix().apply(eta)?;
    let deviation = (x.apply(eta)? - &e_eta).norm();
    if deviation > FIXED_POINT_TOL {
        return Err(Error::FixedPointViolated {
            condition: "E exp(-i E Hbar E T) E |eta> = E |eta>",
            deviation,
        });
    }
    let factors: Vec<C64> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let b = states.state(&bra.label(n)?)?;
            let k = states.state(&ket.label(n)?)?;
            Ok(x.sandwich(&b, &k)? / s_bar)
        })
        .collect::<Result<_>>()?;
    let mut product = classify_factors(&factors)?;
    product.s_bar = s_bar;
    Ok(ProductPropagatorResult {
        product,
        fixed_point_deviation: deviation,
        energy_shift: ren.energy_shift,
        total_shift: ren.total_shift(n_max),
    })
}
