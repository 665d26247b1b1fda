//! Truncated bosonic Fock spaces and the canonical operators on them.
//!
//! Units: hbar = 1 and unit oscillator frequency throughout. Basis states are
//! occupation tuples `(n_0, .., n_{J-1})` with `n_j < D`, ordered
//! lexicographically with mode 0 most significant. For an uncapped space this
//! is exactly the Kronecker ordering `A_0 (x) A_1 (x) ...`.
//!
//! A space may additionally cap the total occupation `sum_j n_j <= cap`.
//! Number-conserving operators (`a_k^dagger a_l`, angular momentum) are then
//! exact on the whole space, which is what the rotation-invariant
//! three-mode constructions rely on.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::{OpFlags, OperatorMatrix, C64};

pub const DEFAULT_RESOURCE_CAP: usize = 20_000;
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SpaceOptions {
    /// Optional cap on the total occupation number.
    pub number_cap: Option<usize>,
    /// Largest weight a coherent state may carry on the truncation boundary.
    pub tail_tolerance: f64,
    /// Largest admissible Hilbert-space dimension.
    pub resource_cap: usize,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        Self {
            number_cap: None,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            resource_cap: DEFAULT_RESOURCE_CAP,
        }
    }
}

#[derive(Debug)]
struct Basis {
    states: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

/// Truncated J-mode bosonic Hilbert space with `D` levels per mode.
#[derive(Clone, Debug)]
pub struct FockSpace {
    modes: usize,
    cutoff: usize,
    number_cap: Option<usize>,
    tail_tolerance: f64,
    basis: Arc<Basis>,
}

impl PartialEq for FockSpace {
    fn eq(&self, other: &Self) -> bool {
        self.modes == other.modes
            && self.cutoff == other.cutoff
            && self.number_cap == other.number_cap
    }
}

fn capped_count(modes: usize, cutoff: usize, cap: usize) -> usize {
    // ways[t] = number of tuples over the modes seen so far with total t
    let mut ways = vec![0usize; cap + 1];
    ways[0] = 1;
    for _ in 0..modes {
        let mut next = vec![0usize; cap + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for n in 0..cutoff.min(cap - t + 1) {
                next[t + n] = next[t + n].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0usize, |a, &b| a.saturating_add(b))
}

fn enumerate_states(
    current: &mut Vec<usize>,
    mode: usize,
    cutoff: usize,
    budget: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if mode == current.len() {
        out.push(current.clone());
        return;
    }
    for n in 0..cutoff.min(budget.saturating_add(1)) {
        current[mode] = n;
        enumerate_states(current, mode + 1, cutoff, budget - n, out);
    }
    current[mode] = 0;
}

impl FockSpace {
    pub fn new(modes: usize, cutoff: usize) -> Result<Self> {
        Self::with_options(modes, cutoff, SpaceOptions::default())
    }

    pub fn with_options(modes: usize, cutoff: usize, options: SpaceOptions) -> Result<Self> {
        if modes < 1 {
            return Err(Error::InvalidSpace("at least one mode is required".into()));
        }
        if cutoff < 2 {
            return Err(Error::InvalidSpace(format!(
                "cutoff must be at least 2 (got {cutoff})"
            )));
        }
        if !(options.tail_tolerance > 0.0 && options.tail_tolerance.is_finite()) {
            return Err(Error::InvalidSpace(
                "tail tolerance must be positive".into(),
            ));
        }
        let dim = match options.number_cap {
            Some(cap) => capped_count(modes, cutoff, cap),
            None => u32::try_from(modes)
                .ok()
                .and_then(|m| cutoff.checked_pow(m))
                .unwrap_or(usize::MAX),
        };
        if dim > options.resource_cap {
            return Err(Error::ResourceCap {
                dim,
                cap: options.resource_cap,
            });
        }
        let mut states = Vec::with_capacity(dim);
        enumerate_states(
            &mut vec![0; modes],
            0,
            cutoff,
            options.number_cap.unwrap_or(usize::MAX),
            &mut states,
        );
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            modes,
            cutoff,
            number_cap: options.number_cap,
            tail_tolerance: options.tail_tolerance,
            basis: Arc::new(Basis { states, index }),
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn number_cap(&self) -> Option<usize> {
        self.number_cap
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    pub fn dim(&self) -> usize {
        self.basis.states.len()
    }

    pub fn occupations(&self, index: usize) -> &[usize] {
        &self.basis.states[index]
    }

    pub fn index_of(&self, occupations: &[usize]) -> Option<usize> {
        self.basis.index.get(occupations).copied()
    }

    /// Basis vector for the given occupation tuple.
    pub fn fock_state(&self, occupations: &[usize]) -> Result<DVector<C64>> {
        if occupations.len() != self.modes {
            return Err(Error::LabelArity {
                expected: self.modes,
                found: occupations.len(),
            });
        }
        let i = self.index_of(occupations).ok_or_else(|| {
            Error::InvalidArgument(format!("occupation {occupations:?} outside the space"))
        })?;
        let mut v = DVector::zeros(self.dim());
        v[i] = C64::new(1.0, 0.0);
        Ok(v)
    }

    pub fn ground_state(&self) -> DVector<C64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = C64::new(1.0, 0.0);
        v
    }

    /// Largest admissible `sum_j |z_j|^2` for coherent labels, and the
    /// per-mode bound `|z_j|^2 <= D/4`.
    pub fn label_bounds(&self) -> (f64, f64) {
        let per_mode = self.cutoff as f64 / 4.0;
        let total = match self.number_cap {
            Some(cap) => (cap as f64 + 1.0) / 4.0,
            None => per_mode * self.modes as f64,
        };
        (per_mode, total)
    }

    /// Whether a basis state sits on the truncation boundary (some mode at
    /// the top level, or the total occupation at the cap).
    pub fn is_boundary(&self, index: usize) -> bool {
        let occ = &self.basis.states[index];
        occ.iter().any(|&n| n + 1 == self.cutoff)
            || self
                .number_cap
                .is_some_and(|cap| occ.iter().sum::<usize>() == cap)
    }

    /// Squared norm of `v` on the truncation boundary.
    pub fn boundary_weight(&self, v: &DVector<C64>) -> f64 {
        (0..self.dim())
            .filter(|&i| self.is_boundary(i))
            .map(|i| v[i].norm_sqr())
            .sum()
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes {
            return Err(Error::ModeOutOfRange {
                mode,
                modes: self.modes,
            });
        }
        Ok(())
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }
}

/// Annihilation and creation operators `(a_j, a_j^dagger)`.
///
/// `a|n> = sqrt(n)|n-1>` exactly; `a^dagger` is its conjugate transpose, so
/// `[a, a^dagger] - 1` is supported on the truncation boundary only.
pub fn build_ladder(space: &FockSpace, mode: usize) -> Result<(OperatorMatrix, OperatorMatrix)> {
    space.check_mode(mode)?;
    let dim = space.dim();
    let mut a = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..dim {
        let occ = space.occupations(i);
        let n = occ[mode];
        if n == 0 {
            continue;
        }
        let mut lowered = occ.to_vec();
        lowered[mode] -= 1;
        let target = space
            .index_of(&lowered)
            .expect("lowering stays inside the space");
        a[(target, i)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    Ok((
        OperatorMatrix::from_parts(a, OpFlags::default()),
        OperatorMatrix::from_parts(adag, OpFlags::default()),
    ))
}

/// Canonical pair `(P_j, Q_j)` with `Q = (a + a^dagger)/sqrt 2` and
/// `P = (a - a^dagger)/(i sqrt 2)`, so that `z = (q + i p)/sqrt 2`.
pub fn canonical_ops(space: &FockSpace, mode: usize) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let (a, adag) = build_ladder(space, mode)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let q = (a.matrix() + adag.matrix()) * C64::new(s, 0.0);
    let p = (a.matrix() - adag.matrix()) * C64::new(0.0, -s);
    Ok((OperatorMatrix::hermitian(p)?, OperatorMatrix::hermitian(q)?))
}

/// Number operator `a_j^dagger a_j` (diagonal, exact).
pub fn number_op(space: &FockSpace, mode: usize) -> Result<OperatorMatrix> {
    space.check_mode(mode)?;
    let diag = DVector::from_iterator(
        space.dim(),
        (0..space.dim()).map(|i| C64::new(space.occupations(i)[mode] as f64, 0.0)),
    );
    OperatorMatrix::hermitian(DMatrix::from_diagonal(&diag))
}

/// Total number operator `sum_j a_j^dagger a_j`.
pub fn total_number_op(space: &FockSpace) -> OperatorMatrix {
    let diag = DVector::from_iterator(
        space.dim(),
        (0..space.dim()).map(|i| C64::new(space.occupations(i).iter().sum::<usize>() as f64, 0.0)),
    );
    OperatorMatrix::hermitian(DMatrix::from_diagonal(&diag)).expect("diagonal real")
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Angular momentum `J_j = -i eps_{jkl} a_k^dagger a_l` on a three-mode space.
pub fn angular_momentum(space: &FockSpace) -> Result<[OperatorMatrix; 3]> {
    if space.modes() != 3 {
        return Err(Error::InvalidArgument(format!(
            "angular momentum needs 3 modes, space has {}",
            space.modes()
        )));
    }
    let ladders = (0..3)
        .map(|m| build_ladder(space, m))
        .collect::<Result<Vec<_>>>()?;
    let dim = space.dim();
    let mut out = Vec::with_capacity(3);
    for j in 0..3 {
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for k in 0..3 {
            for l in 0..3 {
                let e = levi_civita(j, k, l);
                if e == 0.0 {
                    continue;
                }
                acc += (ladders[k].1.matrix() * ladders[l].0.matrix()) * C64::new(0.0, -e);
            }
        }
        out.push(OperatorMatrix::hermitian(acc)?);
    }
    Ok(out.try_into().expect("three components"))
}

/// Embeds single-mode operators (each `D x D`) into the full space, with the
/// identity on unlisted modes. Several operators on the same mode are
/// multiplied in the order given.
pub fn tensor(space: &FockSpace, ops: &[(usize, &OperatorMatrix)]) -> Result<OperatorMatrix> {
    let d = space.cutoff();
    let mut per_mode: Vec<Option<DMatrix<C64>>> = vec![None; space.modes()];
    for &(mode, op) in ops {
        space.check_mode(mode)?;
        if op.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: op.dim(),
            });
        }
        per_mode[mode] = Some(match per_mode[mode].take() {
            Some(prev) => prev * op.matrix(),
            None => op.matrix().clone(),
        });
    }
    let hermitian = ops.iter().all(|(_, op)| op.is_hermitian())
        && ops
            .iter()
            .map(|(m, _)| *m)
            .collect::<std::collections::HashSet<_>>()
            .len()
            == ops.len();

    let entries = if space.number_cap().is_none() {
        let ident = DMatrix::<C64>::identity(d, d);
        let mut acc = DMatrix::<C64>::from_element(1, 1, C64::new(1.0, 0.0));
        for m in &per_mode {
            acc = acc.kronecker(m.as_ref().unwrap_or(&ident));
        }
        acc
    } else {
        // compression of the Kronecker product onto the capped basis
        let dim = space.dim();
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for r in 0..dim {
            let ro = space.occupations(r);
            for c in 0..dim {
                let co = space.occupations(c);
                let mut value = C64::new(1.0, 0.0);
                for (mode, m) in per_mode.iter().enumerate() {
                    value *= match m {
                        Some(m) => m[(ro[mode], co[mode])],
                        None if ro[mode] == co[mode] => C64::new(1.0, 0.0),
                        None => C64::new(0.0, 0.0),
                    };
                    if value == C64::new(0.0, 0.0) {
                        break;
                    }
                }
                acc[(r, c)] = value;
            }
        }
        acc
    };
    if hermitian {
        OperatorMatrix::hermitian(entries)
    } else {
        OperatorMatrix::new(entries)
    }
}
