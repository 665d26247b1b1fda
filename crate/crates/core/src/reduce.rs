//! Small-`delta` limits of constrained kernels.
//!
//! For each rung of a decreasing `delta` ladder the kernel
//! `<p'',q''| E_delta |p',q'>` is evaluated on a label set, optionally
//! rescaled (by `1/(2 delta)` or by `1/W`), and every label pair is
//! extrapolated to `delta -> 0` with the model `K(delta) = K_R + c delta^rho`.
//! The order `rho` is fitted per pair from the finest consecutive
//! differences; `K_R` and `c` then come from a weighted least-squares fit
//! with row weights `delta^-rho`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coherent::{CoherentLabel, CoherentStates};
use crate::constraint::{build_projector, estimate_w, ConstraintSet, SearchGrid};
use crate::error::{Error, Result};
use crate::fock::{tensor, FockSpace};
use crate::operator::{eig_hermitian_unchecked, OpFlags, OperatorMatrix, C64};
use crate::quadrature::gauss_legendre_on;

/// Fit residual above which a limit is reported as not converged.
pub const RESIDUAL_LIMIT: f64 = 1e-4;
/// Projectors closer than this (Frobenius) count as the same.
pub const SAME_PROJECTOR_TOL: f64 = 1e-10;
/// Consecutive differences below this are treated as exact zeros.
const FLAT_TOL: f64 = 1e-14;
/// Number of finest rungs used for the order fit and the residual.
const FINE_RUNGS: usize = 3;

#[derive(Clone, Debug)]
pub enum ConstraintFamily {
    /// `E(sum Phi^2 <= delta^2)` for a fixed constraint set; the set's own
    /// `delta^2` is replaced rung by rung.
    Spectral(ConstraintSet),
    /// `E(P_j^2 <= delta^2)` realised exactly in the Fock basis and
    /// compressed onto the truncated space.
    MomentumWindow { mode: usize },
}

#[derive(Clone, Debug)]
pub enum Rescale {
    None,
    /// Multiply by `1/(2 delta)`.
    HalfInverseDelta,
    /// Divide by `W` estimated on the given grid at every rung.
    W(SearchGrid),
}

#[derive(Clone, Debug)]
pub struct ReducedKernel {
    pub labels: Vec<CoherentLabel>,
    pub ladder: Vec<f64>,
    /// Factor applied at each rung.
    pub rescale_factors: Vec<f64>,
    /// Projector rank per rung (spectral families only).
    pub ranks: Vec<Option<usize>>,
    /// Rescaled kernel matrices `K_ij = <l_i|E|l_j>`, one per rung.
    pub values: Vec<DMatrix<C64>>,
    /// Extrapolated limit.
    pub limit: DMatrix<C64>,
    /// Fitted order per pair (`None` where the values do not move).
    pub orders: DMatrix<Option<f64>>,
    /// Median fitted order over all pairs.
    pub order: Option<f64>,
    /// Largest `|model - K|` over the finest rungs.
    pub residual: f64,
    pub converged: bool,
    /// Same projector on every rung; the limit is the unrescaled kernel.
    pub delta_independent: bool,
    /// Eigenvalues of the Hermitian part of `limit`, descending.
    pub limit_spectrum: Vec<f64>,
    /// Eigenvalues above the fit noise floor.
    pub limit_rank: usize,
}

/// Normalised Hermite functions `h_0..h_{n-1}` at `k`.
fn hermite_functions(n: usize, k: f64) -> Vec<f64> {
    let mut h = vec![0.0; n];
    h[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * k * k).exp();
    if n > 1 {
        h[1] = std::f64::consts::SQRT_2 * k * h[0];
    }
    for m in 1..n.saturating_sub(1) {
        let mf = m as f64;
        h[m + 1] = (2.0 / (mf + 1.0)).sqrt() * k * h[m] - (mf / (mf + 1.0)).sqrt() * h[m - 1];
    }
    h
}

/// Single-mode `<m| E(P^2 <= delta^2) |n> = i^m (-i)^n int_{-delta}^{delta} h_m h_n dk`.
pub fn momentum_window_single(cutoff: usize, delta: f64) -> DMatrix<C64> {
    let nodes = cutoff + 40 + (10.0 * delta).ceil() as usize;
    let (k, w) = gauss_legendre_on(nodes, -delta, delta);
    let mut real = DMatrix::<f64>::zeros(cutoff, cutoff);
    for (k, w) in k.iter().zip(&w) {
        let h = DVector::from_vec(hermite_functions(cutoff, *k));
        real += (&h * h.transpose()) * *w;
    }
    // i^m (-i)^n = i^(m-n)
    let phase = |d: i64| match d.rem_euclid(4) {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    };
    DMatrix::from_fn(cutoff, cutoff, |m, n| {
        phase(m as i64 - n as i64) * real[(m, n)]
    })
}

/// Momentum window on `mode` of a (possibly multi-mode) space.
pub fn momentum_window(space: &FockSpace, mode: usize, delta: f64) -> Result<OperatorMatrix> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive (got {delta})"
        )));
    }
    let single = momentum_window_single(space.cutoff(), delta);
    let single = (&single + single.adjoint()) * C64::new(0.5, 0.0);
    let op = OperatorMatrix::from_parts(
        single,
        OpFlags {
            hermitian: true,
            ..OpFlags::default()
        },
    );
    if space.modes() == 1 {
        space.check_mode(mode)?;
        return Ok(op);
    }
    tensor(space, &[(mode, &op)])
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 4 {
        return Err(Error::InvalidLadder(format!(
            "need at least 4 rungs, got {}",
            ladder.len()
        )));
    }
    if ladder.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidLadder(
            "rungs must be positive and finite".into(),
        ));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidLadder(
            "rungs must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Per-rung kernel operator: either a projector (range basis) or a dense
/// compressed window.
enum RungOperator {
    Projector {
        basis: DMatrix<C64>,
        matrix: OperatorMatrix,
    },
    Dense(OperatorMatrix),
}

impl RungOperator {
    fn gram(&self, states: &[DVector<C64>]) -> DMatrix<C64> {
        let n = states.len();
        match self {
            RungOperator::Projector { basis, .. } => {
                let c: Vec<DVector<C64>> = states.iter().map(|s| basis.adjoint() * s).collect();
                DMatrix::from_fn(n, n, |i, j| c[i].dotc(&c[j]))
            }
            RungOperator::Dense(op) => {
                let applied: Vec<DVector<C64>> = states.iter().map(|s| op.matrix() * s).collect();
                DMatrix::from_fn(n, n, |i, j| states[i].dotc(&applied[j]))
            }
        }
    }
}

/// Fit of one pair's values along the ladder.
struct PairFit {
    limit: C64,
    order: Option<f64>,
    residual: f64,
}

fn fit_pair(ladder: &[f64], values: &[C64]) -> PairFit {
    let n = ladder.len();
    let fine = n - FINE_RUNGS - 1;
    let diffs: Vec<f64> = (fine..n - 1)
        .map(|i| (values[i] - values[i + 1]).norm())
        .collect();
    let scale = 1.0 + values[n - 1].norm();
    if diffs.iter().any(|d| *d <= FLAT_TOL * scale) {
        let last = values[n - 1];
        let residual = values[fine + 1..]
            .iter()
            .map(|v| (v - last).norm())
            .fold(0.0, f64::max);
        return PairFit {
            limit: last,
            order: None,
            residual,
        };
    }
    // log-log least squares of |K_i - K_{i+1}| against delta_i
    let xs: Vec<f64> = (fine..n - 1).map(|i| ladder[i].ln()).collect();
    let ys: Vec<f64> = diffs.iter().map(|d| d.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let rho = sxy / sxx;
    if !(rho.is_finite() && rho > 0.0) {
        let last = values[n - 1];
        let residual = values[fine + 1..]
            .iter()
            .map(|v| (v - last).norm())
            .fold(0.0, f64::max);
        return PairFit {
            limit: last,
            order: None,
            residual: diffs.iter().copied().fold(residual, f64::max),
        };
    }
    // weighted least squares on [1, delta^rho], weights delta^-rho
    let a = DMatrix::from_fn(n, 2, |i, c| {
        let w = ladder[i].powf(-rho);
        if c == 0 {
            w
        } else {
            1.0
        }
    });
    let b = DMatrix::from_fn(n, 2, |i, c| {
        let w = ladder[i].powf(-rho);
        if c == 0 {
            w * values[i].re
        } else {
            w * values[i].im
        }
    });
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-15)
        .expect("svd solve with both factors");
    let limit = C64::new(coef[(0, 0)], coef[(0, 1)]);
    let slope = C64::new(coef[(1, 0)], coef[(1, 1)]);
    let residual = (fine + 1..n)
        .map(|i| (limit + slope * ladder[i].powf(rho) - values[i]).norm())
        .fold(0.0, f64::max);
    PairFit {
        limit,
        order: Some(rho),
        residual,
    }
}

/// Extrapolates the constrained kernel on `labels` to `delta -> 0`.
pub fn reduce_kernel_delta_limit(
    states: &CoherentStates,
    family: &ConstraintFamily,
    labels: &[CoherentLabel],
    ladder: &[f64],
    rescale: &Rescale,
) -> Result<ReducedKernel> {
    check_ladder(ladder)?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty label set".into()));
    }
    let space = states.space();
    let vectors = states.states(labels)?;

    let mut operators = Vec::with_capacity(ladder.len());
    let mut ranks = Vec::with_capacity(ladder.len());
    for &delta in ladder {
        let op = match family {
            ConstraintFamily::Spectral(set) => {
                space.check_dim(set.dim())?;
                let e = build_projector(&set.with_delta_squared(delta * delta)?)?;
                if e.is_zero() {
                    return Err(Error::KernelVanishes { delta });
                }
                ranks.push(Some(e.rank()));
                RungOperator::Projector {
                    basis: e.basis().clone(),
                    matrix: e.matrix().clone(),
                }
            }
            ConstraintFamily::MomentumWindow { mode } => {
                ranks.push(None);
                RungOperator::Dense(momentum_window(space, *mode, delta)?)
            }
        };
        operators.push(op);
    }

    let delta_independent = match family {
        ConstraintFamily::Spectral(_) => operators.windows(2).all(|w| match (&w[0], &w[1]) {
            (
                RungOperator::Projector { matrix: a, .. },
                RungOperator::Projector { matrix: b, .. },
            ) => (a.matrix() - b.matrix()).norm() <= SAME_PROJECTOR_TOL,
            _ => false,
        }),
        ConstraintFamily::MomentumWindow { .. } => false,
    };

    let mut rescale_factors = Vec::with_capacity(ladder.len());
    for (delta, op) in ladder.iter().zip(&operators) {
        let factor = match rescale {
            Rescale::None => 1.0,
            Rescale::HalfInverseDelta => 0.5 / delta,
            Rescale::W(grid) => {
                let e = match op {
                    RungOperator::Projector { matrix, .. } => {
                        crate::constraint::ConstraintProjector::from_matrix(
                            matrix.matrix().clone(),
                        )?
                    }
                    RungOperator::Dense(_) => {
                        return Err(Error::InvalidArgument(
                            "W rescaling needs a projector family".into(),
                        ))
                    }
                };
                1.0 / estimate_w(states, &e, grid)?.w
            }
        };
        rescale_factors.push(factor);
    }

    let raw: Vec<DMatrix<C64>> = operators.par_iter().map(|op| op.gram(&vectors)).collect();
    let values: Vec<DMatrix<C64>> = raw
        .iter()
        .zip(&rescale_factors)
        .map(|(m, f)| m * C64::new(*f, 0.0))
        .collect();

    let n = labels.len();
    let (limit, orders, residual) = if delta_independent {
        let last = raw[raw.len() - 1].clone();
        (last, DMatrix::from_element(n, n, None), 0.0)
    } else {
        let mut limit = DMatrix::<C64>::zeros(n, n);
        let mut orders = DMatrix::from_element(n, n, None);
        let mut residual: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let series: Vec<C64> = values.iter().map(|m| m[(i, j)]).collect();
                let fit = fit_pair(ladder, &series);
                limit[(i, j)] = fit.limit;
                orders[(i, j)] = fit.order;
                residual = residual.max(fit.residual);
            }
        }
        (limit, orders, residual)
    };

    let mut fitted: Vec<f64> = orders.iter().flatten().copied().collect();
    fitted.sort_by(f64::total_cmp);
    let order = (!fitted.is_empty()).then(|| fitted[fitted.len() / 2]);

    let herm = (&limit + limit.adjoint()) * C64::new(0.5, 0.0);
    let mut limit_spectrum: Vec<f64> = eig_hermitian_unchecked(&herm)
        .values
        .iter()
        .copied()
        .collect();
    limit_spectrum.reverse();
    // entrywise error `residual` moves eigenvalues by at most n * residual
    let top = limit_spectrum.first().copied().unwrap_or(0.0);
    let floor = (10.0 * n as f64 * residual).max(crate::constraint::RANK_REL_TOL * top.abs());
    let limit_rank = limit_spectrum.iter().filter(|&&l| l > floor).count();

    Ok(ReducedKernel {
        labels: labels.to_vec(),
        ladder: ladder.to_vec(),
        rescale_factors,
        ranks,
        values,
        limit,
        orders,
        order,
        residual,
        converged: residual <= RESIDUAL_LIMIT,
        delta_independent,
        limit_spectrum,
        limit_rank,
    })
}
