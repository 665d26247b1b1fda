//! Spectral constraint projectors `E(sum_a Phi_a^2 <= delta^2)` and the
//! reproducing kernels they induce on coherent states.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coherent::{CoherentLabel, CoherentStates};
use crate::error::{Error, Result};
use crate::operator::{eig_hermitian, eig_hermitian_unchecked, OpFlags, OperatorMatrix, C64};

/// Distance from `delta^2` inside which an eigenvalue is treated as ambiguous.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted for `sum Phi^2`.
pub const PSD_TOL: f64 = 1e-10;
/// Relative cutoff for counting Gram eigenvalues.
pub const RANK_REL_TOL: f64 = 1e-8;
/// Relative negativity accepted in a Gram matrix.
pub const GRAM_PSD_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Constraints with zero in a discrete spectrum (e.g. angular momentum).
    DiscreteSpectrum,
    /// Non-commuting pairs with no common zero (e.g. `P` and `Q`).
    SecondClass,
    /// Zero in the continuous spectrum (e.g. a single momentum).
    ContinuousZero,
}

#[derive(Clone, Debug)]
pub struct ConstraintSet {
    operators: Vec<OperatorMatrix>,
    kind: ConstraintKind,
    delta_squared: f64,
}

impl ConstraintSet {
    pub fn new(
        operators: Vec<OperatorMatrix>,
        kind: ConstraintKind,
        delta_squared: f64,
    ) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::InvalidArgument("constraint set is empty".into()));
        }
        if !(delta_squared > 0.0 && delta_squared.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta^2 must be positive and finite (got {delta_squared})"
            )));
        }
        let dim = operators[0].dim();
        for op in &operators {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: op.dim(),
                });
            }
            if !op.is_hermitian() {
                return Err(Error::NotHermitian {
                    defect: crate::operator::hermitian_defect(op.matrix()),
                });
            }
        }
        Ok(Self {
            operators,
            kind,
            delta_squared,
        })
    }

    pub fn operators(&self) -> &[OperatorMatrix] {
        &self.operators
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn delta_squared(&self) -> f64 {
        self.delta_squared
    }

    pub fn dim(&self) -> usize {
        self.operators[0].dim()
    }

    pub fn with_delta_squared(&self, delta_squared: f64) -> Result<Self> {
        Self::new(self.operators.clone(), self.kind, delta_squared)
    }

    /// `sum_a Phi_a^2`.
    pub fn sum_of_squares(&self) -> OperatorMatrix {
        let dim = self.dim();
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for op in &self.operators {
            acc += op.matrix() * op.matrix();
        }
        // products of a hermitian matrix with itself are hermitian up to rounding
        let sym = (&acc + acc.adjoint()) * C64::new(0.5, 0.0);
        OperatorMatrix::from_parts(
            sym,
            OpFlags {
                hermitian: true,
                ..OpFlags::default()
            },
        )
    }
}

/// Orthogonal projector onto the retained constraint eigenspace.
#[derive(Clone, Debug)]
pub struct ConstraintProjector {
    matrix: OperatorMatrix,
    /// Orthonormal basis of the range, one vector per column.
    basis: DMatrix<C64>,
    retained: Vec<f64>,
    delta_squared: Option<f64>,
}

impl ConstraintProjector {
    /// No constraint: `E = 1`.
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: OperatorMatrix::identity(dim),
            basis: DMatrix::identity(dim, dim),
            retained: Vec::new(),
            delta_squared: None,
        }
    }

    /// Wraps an explicit projector matrix.
    pub fn from_matrix(entries: DMatrix<C64>) -> Result<Self> {
        let matrix = OperatorMatrix::projector(entries)?;
        let eig = eig_hermitian(&matrix)?;
        let cols: Vec<usize> = (0..eig.len()).filter(|&k| eig.values[k] > 0.5).collect();
        let basis = DMatrix::from_fn(matrix.dim(), cols.len(), |i, c| eig.vectors[(i, cols[c])]);
        Ok(Self {
            matrix,
            basis,
            retained: Vec::new(),
            delta_squared: None,
        })
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.rank() == 0
    }

    /// Orthonormal basis of `range(E)`.
    pub fn basis(&self) -> &DMatrix<C64> {
        &self.basis
    }

    /// Eigenvalues of `sum Phi^2` kept by the projector (ascending).
    pub fn retained_eigenvalues(&self) -> &[f64] {
        &self.retained
    }

    pub fn delta_squared(&self) -> Option<f64> {
        self.delta_squared
    }

    /// `||E^2 - E||` and `||E - E^dagger||` (Frobenius).
    pub fn defects(&self) -> (f64, f64) {
        let m = self.matrix.matrix();
        ((m * m - m).norm(), (m - m.adjoint()).norm())
    }

    /// Range coordinates `B^dagger v`; kernels are inner products of these.
    pub fn coordinates(&self, v: &DVector<C64>) -> DVector<C64> {
        self.basis.adjoint() * v
    }
}

/// `E = sum_{lambda_k <= delta^2} v_k v_k^dagger` over the eigenpairs of
/// `sum Phi^2`.
pub fn build_projector(set: &ConstraintSet) -> Result<ConstraintProjector> {
    let sum = set.sum_of_squares();
    let eig = eig_hermitian(&sum)?;
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(Error::NotPositive(min));
    }
    let d2 = set.delta_squared();
    if let Some(&lambda) = eig.values.iter().find(|&&l| (l - d2).abs() <= BOUNDARY_TOL) {
        return Err(Error::DeltaBoundary {
            eigenvalue: lambda,
            delta_squared: d2,
            tolerance: BOUNDARY_TOL,
        });
    }
    let cols: Vec<usize> = (0..eig.len()).filter(|&k| eig.values[k] < d2).collect();
    let dim = sum.dim();
    let basis = DMatrix::from_fn(dim, cols.len(), |i, c| eig.vectors[(i, cols[c])]);
    let entries = &basis * basis.adjoint();
    let entries = (&entries + entries.adjoint()) * C64::new(0.5, 0.0);
    Ok(ConstraintProjector {
        matrix: OperatorMatrix::from_parts(
            entries,
            OpFlags {
                hermitian: true,
                unitary: false,
                projector: true,
            },
        ),
        basis,
        retained: cols.iter().map(|&k| eig.values[k]).collect(),
        delta_squared: Some(d2),
    })
}

/// Reproducing kernel `<p'',q''| E |p',q'>` for a fixed coherent family.
pub struct ConstrainedKernel<'a> {
    states: &'a CoherentStates,
    projector: &'a ConstraintProjector,
}

impl<'a> ConstrainedKernel<'a> {
    pub fn new(states: &'a CoherentStates, projector: &'a ConstraintProjector) -> Result<Self> {
        states.space().check_dim(projector.dim())?;
        if projector.is_zero() {
            return Err(Error::ZeroPhysicalSpace("projector is zero"));
        }
        Ok(Self { states, projector })
    }

    pub fn states(&self) -> &CoherentStates {
        self.states
    }

    pub fn projector(&self) -> &ConstraintProjector {
        self.projector
    }

    fn coords(&self, label: &CoherentLabel) -> Result<DVector<C64>> {
        Ok(self.projector.coordinates(&self.states.state(label)?))
    }

    pub fn value(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64> {
        Ok(self.coords(bra)?.dotc(&self.coords(ket)?))
    }

    /// `<l|E|l>`.
    pub fn diagonal(&self, label: &CoherentLabel) -> Result<f64> {
        Ok(self.coords(label)?.norm_squared())
    }

    /// Kernel values for many pairs, in input order.
    pub fn values(&self, pairs: &[(CoherentLabel, CoherentLabel)]) -> Result<Vec<C64>> {
        pairs.par_iter().map(|(b, k)| self.value(b, k)).collect()
    }

    /// `G_ij = <l_i|E|l_j>`.
    pub fn gram(&self, labels: &[CoherentLabel]) -> Result<DMatrix<C64>> {
        let coords: Vec<DVector<C64>> = labels
            .par_iter()
            .map(|l| self.coords(l))
            .collect::<Result<_>>()?;
        let n = labels.len();
        Ok(DMatrix::from_fn(n, n, |i, j| coords[i].dotc(&coords[j])))
    }
}

/// One-shot kernel value.
pub fn constrained_kernel(
    states: &CoherentStates,
    projector: &ConstraintProjector,
    bra: &CoherentLabel,
    ket: &CoherentLabel,
) -> Result<C64> {
    ConstrainedKernel::new(states, projector)?.value(bra, ket)
}

/// Numerical rank of a Gram matrix: eigenvalues above `1e-8 * lambda_max`.
pub fn kernel_rank(gram: &DMatrix<C64>) -> Result<usize> {
    if gram.nrows() != gram.ncols() {
        return Err(Error::DimensionMismatch {
            expected: gram.nrows(),
            found: gram.ncols(),
        });
    }
    if gram.is_empty() {
        return Ok(0);
    }
    let eig = eig_hermitian_unchecked(gram);
    let max = eig.values[eig.len() - 1];
    let min = eig.values[0];
    if max <= 0.0 {
        return Err(Error::GramNotPositive { min, max });
    }
    if min < -GRAM_PSD_REL_TOL * max {
        return Err(Error::GramNotPositive { min, max });
    }
    Ok(eig
        .values
        .iter()
        .filter(|&&l| l > RANK_REL_TOL * max)
        .count())
}

/// Search box for [`estimate_w`]: `nodes` points per phase-space coordinate
/// on `[-extent, extent]`.
#[derive(Clone, Debug)]
pub struct SearchGrid {
    pub extent: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug)]
pub struct WEstimate {
    pub w: f64,
    pub argmax: CoherentLabel,
    pub evaluated: usize,
    /// Pairs checked against `|K(a,b)|^2 <= K(a,a) K(b,b) <= W^2`.
    pub schwarz_checked: usize,
    /// Largest relative excess found in that chain (0 when it holds).
    pub schwarz_excess: f64,
}

fn product_grid(center: &[f64], step: f64, nodes: usize) -> Vec<Vec<f64>> {
    let half = (nodes as f64 - 1.0) / 2.0;
    let axis: Vec<f64> = (0..nodes).map(|k| (k as f64 - half) * step).collect();
    let mut out = vec![Vec::new()];
    for c in center {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |x| {
                    let mut v = prefix.clone();
                    v.push(c + x);
                    v
                })
            })
            .collect();
    }
    out
}

fn to_label(coords: &[f64]) -> Result<CoherentLabel> {
    let j = coords.len() / 2;
    CoherentLabel::new(coords[..j].to_vec(), coords[j..].to_vec())
}

/// `W = sup <p,q|E|p,q>` over a grid plus one refinement pass around the
/// best node. Labels rejected by the truncation guard are skipped.
pub fn estimate_w(
    states: &CoherentStates,
    projector: &ConstraintProjector,
    grid: &SearchGrid,
) -> Result<WEstimate> {
    if grid.nodes < 2 || !(grid.extent > 0.0 && grid.extent.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad search grid {grid:?}")));
    }
    let kernel = ConstrainedKernel::new(states, projector)?;
    let modes = states.space().modes();
    let step = 2.0 * grid.extent / (grid.nodes - 1) as f64;
    let coarse = product_grid(&vec![0.0; 2 * modes], step, grid.nodes);
    let scan = |points: &[Vec<f64>]| -> Result<Vec<(Vec<f64>, f64)>> {
        let vals: Vec<Option<f64>> = points
            .par_iter()
            .map(|c| to_label(c).ok().and_then(|l| kernel.diagonal(&l).ok()))
            .collect();
        Ok(points
            .iter()
            .cloned()
            .zip(vals)
            .filter_map(|(c, v)| v.map(|v| (c, v)))
            .collect())
    };
    let mut found = scan(&coarse)?;
    let best = found
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("no admissible grid node".into()))?;
    let refined = scan(&product_grid(&best.0, step / 2.0, 5))?;
    found.extend(refined);
    let (arg, w) = found
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    if w <= 0.0 {
        return Err(Error::ZeroPhysicalSpace(
            "diagonal kernel vanishes on the grid",
        ));
    }
    let argmax = to_label(&arg)?;

    // Schwarz chain between the maximiser and a deterministic sample of nodes
    let stride = (found.len() / 64).max(1);
    let sample: Vec<&(Vec<f64>, f64)> = found.iter().step_by(stride).collect();
    let excesses: Vec<f64> = sample
        .par_iter()
        .map(|(c, diag)| {
            let l = to_label(c)?;
            let off = kernel.value(&argmax, &l)?.norm_sqr();
            let bound = w * diag;
            let e1 = (off - bound).max(0.0) / bound.max(f64::MIN_POSITIVE);
            let e2 = (bound - w * w).max(0.0) / (w * w);
            Ok(e1.max(e2))
        })
        .collect::<Result<_>>()?;
    let schwarz_excess = excesses.iter().copied().fold(0.0, f64::max);
    Ok(WEstimate {
        w,
        argmax,
        evaluated: found.len(),
        schwarz_checked: sample.len(),
        schwarz_excess,
    })
}
