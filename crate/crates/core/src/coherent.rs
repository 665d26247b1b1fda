//! Canonical coherent states `|p,q> = exp(i(p.Q - q.P)) |eta>`.
//!
//! With `z = (q + i p)/sqrt 2` the displacement is `exp(z a^dagger - zbar a)`.
//! For uncapped spaces each mode factor is applied through the rotation
//! identity `p Q - q P = r R Q R^dagger` with `R = exp(i phi N)`, which holds
//! exactly for the truncated matrices, so only one real eigendecomposition of
//! `Q` is needed per cutoff. Capped spaces fall back to a Taylor propagation
//! of the full generator.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{canonical_ops, FockSpace};
use crate::operator::{eig_real_symmetric, expm_apply, OperatorMatrix, C64};

/// Phase-space label `(p, q)` for a J-mode system.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherentLabel {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl CoherentLabel {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::LabelArity {
                expected: p.len(),
                found: q.len(),
            });
        }
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty coherent label".into()));
        }
        if p.iter().chain(&q).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("coherent label"));
        }
        Ok(Self { p, q })
    }

    pub fn single(p: f64, q: f64) -> Result<Self> {
        Self::new(vec![p], vec![q])
    }

    /// Label from complex coordinates `z_j = (q_j + i p_j)/sqrt 2`.
    pub fn from_z(z: &[C64]) -> Result<Self> {
        let p = z.iter().map(|z| SQRT_2 * z.im).collect();
        let q = z.iter().map(|z| SQRT_2 * z.re).collect();
        Self::new(p, q)
    }

    pub fn origin(modes: usize) -> Self {
        Self {
            p: vec![0.0; modes],
            q: vec![0.0; modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn z(&self) -> Vec<C64> {
        self.p
            .iter()
            .zip(&self.q)
            .map(|(p, q)| C64::new(*q, *p) / SQRT_2)
            .collect()
    }

    /// `sum_j |z_j|^2`.
    pub fn norm_sq_z(&self) -> f64 {
        self.p
            .iter()
            .zip(&self.q)
            .map(|(p, q)| 0.5 * (p * p + q * q))
            .sum()
    }

    /// Componentwise sum of two labels.
    pub fn shifted(&self, other: &Self) -> Result<Self> {
        if other.modes() != self.modes() {
            return Err(Error::LabelArity {
                expected: self.modes(),
                found: other.modes(),
            });
        }
        Self::new(
            self.p.iter().zip(&other.p).map(|(a, b)| a + b).collect(),
            self.q.iter().zip(&other.q).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Closed-form ground-state overlap `<z''|z'>` for any number of modes.
pub fn ground_overlap(bra: &CoherentLabel, ket: &CoherentLabel) -> C64 {
    let exponent: C64 = bra
        .z()
        .iter()
        .zip(ket.z())
        .map(|(a, b)| -0.5 * a.norm_sqr() + a.conj() * b - 0.5 * b.norm_sqr())
        .sum();
    exponent.exp()
}

/// Unit-norm vector used as the fiducial `|eta>`.
#[derive(Clone, Debug)]
pub struct FiducialVector {
    vector: DVector<C64>,
}

/// Largest accepted deviation of `||eta||` from 1.
pub const FIDUCIAL_NORM_TOL: f64 = 1e-12;

impl FiducialVector {
    pub fn new(vector: DVector<C64>) -> Result<Self> {
        if vector
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite("fiducial vector"));
        }
        let norm = vector.norm();
        if (norm - 1.0).abs() > FIDUCIAL_NORM_TOL {
            return Err(Error::FiducialNorm(norm));
        }
        Ok(Self { vector })
    }

    /// Normalises a non-zero vector.
    pub fn normalized(vector: DVector<C64>) -> Result<Self> {
        let norm = vector.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::FiducialNorm(norm));
        }
        Self::new(vector / C64::new(norm, 0.0))
    }

    pub fn ground(space: &FockSpace) -> Self {
        Self {
            vector: space.ground_state(),
        }
    }

    pub fn fock(space: &FockSpace, occupations: &[usize]) -> Result<Self> {
        Ok(Self {
            vector: space.fock_state(occupations)?,
        })
    }

    /// The ground state displaced to `label`.
    pub fn coherent(space: &FockSpace, label: &CoherentLabel) -> Result<Self> {
        let cs = CoherentStates::new(space, Self::ground(space))?;
        Self::normalized(cs.state(label)?)
    }

    pub fn vector(&self) -> &DVector<C64> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[derive(Debug)]
enum Method {
    /// Eigenbasis of the single-mode `Q` (shared by all modes).
    Rotation {
        values: Vec<f64>,
        vectors: DMatrix<C64>,
        vectors_t: DMatrix<C64>,
    },
    /// Dense generators `(P_j, Q_j)`.
    Dense {
        p: Vec<DMatrix<C64>>,
        q: Vec<DMatrix<C64>>,
    },
}

/// Coherent-state family over a truncated space and a fixed fiducial.
#[derive(Debug)]
pub struct CoherentStates {
    space: FockSpace,
    fiducial: FiducialVector,
    method: Method,
}

impl CoherentStates {
    pub fn new(space: &FockSpace, fiducial: FiducialVector) -> Result<Self> {
        space.check_dim(fiducial.dim())?;
        let method = if space.number_cap().is_none() {
            let single = FockSpace::new(1, space.cutoff())?;
            let (_, q) = canonical_ops(&single, 0)?;
            let (values, vectors) = eig_real_symmetric(q.matrix().map(|c| c.re));
            let vectors = vectors.map(|x| C64::new(x, 0.0));
            Method::Rotation {
                values: values.iter().copied().collect(),
                vectors_t: vectors.transpose(),
                vectors,
            }
        } else {
            let mut p = Vec::with_capacity(space.modes());
            let mut q = Vec::with_capacity(space.modes());
            for j in 0..space.modes() {
                let (pj, qj) = canonical_ops(space, j)?;
                p.push(pj.into_matrix());
                q.push(qj.into_matrix());
            }
            Method::Dense { p, q }
        };
        Ok(Self {
            space: space.clone(),
            fiducial,
            method,
        })
    }

    /// Ground-state fiducial.
    pub fn standard(space: &FockSpace) -> Result<Self> {
        Self::new(space, FiducialVector::ground(space))
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn fiducial(&self) -> &FiducialVector {
        &self.fiducial
    }

    /// Rejects labels whose mean occupation would reach the cutoff.
    pub fn check_label(&self, label: &CoherentLabel) -> Result<()> {
        if label.modes() != self.space.modes() {
            return Err(Error::LabelArity {
                expected: self.space.modes(),
                found: label.modes(),
            });
        }
        let (per_mode, total) = self.space.label_bounds();
        for z in label.z() {
            if z.norm_sqr() > per_mode {
                return Err(Error::TruncationBound {
                    norm_sq: z.norm_sqr(),
                    bound: per_mode,
                });
            }
        }
        let n = label.norm_sq_z();
        if n > total {
            return Err(Error::TruncationBound {
                norm_sq: n,
                bound: total,
            });
        }
        Ok(())
    }

    /// The state `|p,q>`.
    pub fn state(&self, label: &CoherentLabel) -> Result<DVector<C64>> {
        self.check_label(label)?;
        let v = self.displace(label, self.fiducial.vector());
        let weight = self.space.boundary_weight(&v);
        if weight > self.space.tail_tolerance() {
            return Err(Error::TruncationLeak {
                weight,
                tolerance: self.space.tail_tolerance(),
            });
        }
        Ok(v)
    }

    /// States for many labels, computed in parallel, in input order.
    pub fn states(&self, labels: &[CoherentLabel]) -> Result<Vec<DVector<C64>>> {
        labels.par_iter().map(|l| self.state(l)).collect()
    }

    /// `U(p,q) v` for an arbitrary vector, without truncation checks.
    pub fn displace(&self, label: &CoherentLabel, v: &DVector<C64>) -> DVector<C64> {
        match &self.method {
            Method::Rotation {
                values,
                vectors,
                vectors_t,
            } => {
                let d = self.space.cutoff();
                let mut out = v.clone();
                for (j, (p, q)) in label.p().iter().zip(label.q()).enumerate() {
                    if *p == 0.0 && *q == 0.0 {
                        continue;
                    }
                    let r = p.hypot(*q);
                    let phi = (-q).atan2(*p);
                    let rot: Vec<C64> = (0..d)
                        .map(|n| C64::from_polar(1.0, phi * n as f64))
                        .collect();
                    let rot_inv: Vec<C64> = rot.iter().map(|c| c.conj()).collect();
                    let spec: Vec<C64> =
                        values.iter().map(|l| C64::from_polar(1.0, r * l)).collect();
                    // mode 0 is most significant
                    let inner = d.pow((label.modes() - 1 - j) as u32);
                    out = apply_axis_diag(&out, d, inner, &rot_inv);
                    out = apply_axis(&out, d, inner, vectors_t);
                    out = apply_axis_diag(&out, d, inner, &spec);
                    out = apply_axis(&out, d, inner, vectors);
                    out = apply_axis_diag(&out, d, inner, &rot);
                }
                out
            }
            Method::Dense { p, q } => {
                let dim = self.space.dim();
                let mut g = DMatrix::<C64>::zeros(dim, dim);
                for j in 0..label.modes() {
                    g += &q[j] * C64::new(label.p()[j], 0.0);
                    g -= &p[j] * C64::new(label.q()[j], 0.0);
                }
                expm_apply(&g, C64::new(0.0, 1.0), v)
            }
        }
    }

    /// `<bra|ket>`.
    pub fn overlap(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64> {
        let b = self.state(bra)?;
        let k = self.state(ket)?;
        Ok(b.dotc(&k))
    }

    /// `<bra| A |ket>`.
    pub fn matrix_element(
        &self,
        op: &OperatorMatrix,
        bra: &CoherentLabel,
        ket: &CoherentLabel,
    ) -> Result<C64> {
        let b = self.state(bra)?;
        let k = self.state(ket)?;
        op.sandwich(&b, &k)
    }

    /// Quadrature check of `int |p,q><p,q| dp dq / 2 pi = 1` restricted to
    /// the block `n <= n_max` of a single-mode space.
    pub fn resolution_of_unity(&self, spec: &QuadratureSpec) -> Result<ResolutionReport> {
        if self.space.modes() != 1 {
            return Err(Error::InvalidArgument(
                "resolution-of-unity check is single-mode".into(),
            ));
        }
        if spec.nodes < 3
            || !spec.radius.is_finite()
            || spec.radius <= 0.0
            || spec.n_max >= self.space.dim()
        {
            return Err(Error::InvalidArgument(format!(
                "bad quadrature spec {spec:?}"
            )));
        }
        let extent = spec.radius * SQRT_2;
        let (x, w) = crate::quadrature::trapezoid(spec.nodes, -extent, extent);
        let labels: Vec<(CoherentLabel, f64)> = x
            .iter()
            .zip(&w)
            .flat_map(|(p, wp)| x.iter().zip(&w).map(move |(q, wq)| (*p, *q, wp * wq)))
            .filter(|(p, q, _)| 0.5 * (p * p + q * q) <= spec.radius * spec.radius)
            .map(|(p, q, weight)| (CoherentLabel::origin(1).shifted_unchecked(p, q), weight))
            .collect();
        let m = spec.n_max + 1;
        let blocks: Vec<Option<DMatrix<C64>>> = labels
            .par_iter()
            .map(|(label, weight)| {
                self.state(label).ok().map(|v| {
                    let low = v.rows(0, m).into_owned();
                    &low * low.adjoint() * C64::new(weight / (2.0 * PI), 0.0)
                })
            })
            .collect();
        let mut acc = DMatrix::<C64>::zeros(m, m);
        let mut skipped = 0;
        for b in &blocks {
            match b {
                Some(b) => acc += b,
                None => skipped += 1,
            }
        }
        let defect = (acc - DMatrix::<C64>::identity(m, m))
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let tail = disk_tail(spec.radius, spec.n_max);
        Ok(ResolutionReport {
            defect,
            nodes_used: labels.len() - skipped,
            skipped,
            tail,
            under_resolved: skipped > 0 || tail > UNDER_RESOLVED_TAIL,
        })
    }
}

impl CoherentLabel {
    fn shifted_unchecked(mut self, p: f64, q: f64) -> Self {
        self.p[0] += p;
        self.q[0] += q;
        self
    }
}

/// Tail mass beyond which the disk is considered too small.
pub const UNDER_RESOLVED_TAIL: f64 = 1e-8;

/// Largest weight `|<n|z>|^2` integrated outside `|z| <= R`, over `n <= n_max`
/// (regularised upper incomplete gamma `Q(n+1, R^2)`).
fn disk_tail(radius: f64, n_max: usize) -> f64 {
    let x = radius * radius;
    let mut term = (-x).exp();
    let mut sum = term;
    for k in 1..=n_max {
        term *= x / k as f64;
        sum += term;
    }
    sum.min(1.0)
}

#[derive(Clone, Debug)]
pub struct QuadratureSpec {
    /// Disk radius in `|z|`.
    pub radius: f64,
    /// Trapezoid nodes per axis on the enclosing box.
    pub nodes: usize,
    /// Highest Fock level included in the check.
    pub n_max: usize,
}

#[derive(Clone, Debug)]
pub struct ResolutionReport {
    /// Max entry deviation from the identity on the low block.
    pub defect: f64,
    pub nodes_used: usize,
    /// Nodes dropped by the truncation guard.
    pub skipped: usize,
    /// Analytic weight of the low block outside the disk.
    pub tail: f64,
    pub under_resolved: bool,
}

/// Applies a `D x D` matrix to mode `j` of an uncapped tensor vector.
fn apply_axis(v: &DVector<C64>, d: usize, inner: usize, m: &DMatrix<C64>) -> DVector<C64> {
    let dim = v.len();
    let outer = dim / (d * inner);
    let mut out = DVector::zeros(dim);
    let mt = m.transpose();
    for o in 0..outer {
        let base = o * d * inner;
        // column n of the block holds the slice for occupation n
        let block = DMatrix::from_column_slice(inner, d, &v.as_slice()[base..base + d * inner]);
        let res = block * &mt;
        out.as_mut_slice()[base..base + d * inner].copy_from_slice(res.as_slice());
    }
    out
}

fn apply_axis_diag(v: &DVector<C64>, d: usize, inner: usize, diag: &[C64]) -> DVector<C64> {
    DVector::from_iterator(
        v.len(),
        v.iter().enumerate().map(|(i, x)| x * diag[(i / inner) % d]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::SpaceOptions;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn unit_label_amplitudes() {
        // z = 1: c_n = e^{-1/2} / sqrt(n!)
        let s = FockSpace::new(1, 40).unwrap();
        let cs = CoherentStates::standard(&s).unwrap();
        let v = cs
            .state(&CoherentLabel::from_z(&[C64::new(1.0, 0.0)]).unwrap())
            .unwrap();
        for n in 0..15 {
            let exact = (-0.5f64).exp() / factorial(n).sqrt();
            assert!((v[n] - C64::new(exact, 0.0)).norm() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn mean_position_and_momentum() {
        let s = FockSpace::new(1, 50).unwrap();
        let cs = CoherentStates::standard(&s).unwrap();
        let (p_op, q_op) = canonical_ops(&s, 0).unwrap();
        let label = CoherentLabel::single(-0.7, 1.3).unwrap();
        let v = cs.state(&label).unwrap();
        assert!((q_op.sandwich(&v, &v).unwrap().re - 1.3).abs() < 1e-12);
        assert!((p_op.sandwich(&v, &v).unwrap().re + 0.7).abs() < 1e-12);
    }

    #[test]
    fn overlap_matches_closed_form() {
        let s = FockSpace::new(1, 60).unwrap();
        let cs = CoherentStates::standard(&s).unwrap();
        let a = CoherentLabel::single(0.4, -1.1).unwrap();
        let b = CoherentLabel::single(-1.5, 0.8).unwrap();
        let got = cs.overlap(&a, &b).unwrap();
        assert!((got - ground_overlap(&a, &b)).norm() < 1e-13);
    }

    #[test]
    fn two_mode_fast_path_matches_dense() {
        let uncapped = FockSpace::new(2, 12).unwrap();
        let capped = FockSpace::with_options(
            2,
            12,
            SpaceOptions {
                number_cap: Some(22),
                ..SpaceOptions::default()
            },
        )
        .unwrap();
        // the cap 22 keeps every tuple with n_j <= 11, so the spaces coincide
        assert_eq!(capped.dim(), uncapped.dim());
        let fast = CoherentStates::standard(&uncapped).unwrap();
        let dense = CoherentStates::standard(&capped).unwrap();
        let label = CoherentLabel::new(vec![0.3, -0.5], vec![0.2, 0.6]).unwrap();
        let a = fast.state(&label).unwrap();
        let b = dense.state(&label).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn guard_rejects_large_labels() {
        let s = FockSpace::new(1, 8).unwrap();
        let cs = CoherentStates::standard(&s).unwrap();
        let far = CoherentLabel::from_z(&[C64::new(1.5, 0.0)]).unwrap();
        assert!(matches!(cs.state(&far), Err(Error::TruncationBound { .. })));
        // inside the bound but visibly leaking
        let near = CoherentLabel::from_z(&[C64::new(1.4, 0.0)]).unwrap();
        assert!(matches!(cs.state(&near), Err(Error::TruncationLeak { .. })));
        let wrong = CoherentLabel::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(cs.state(&wrong), Err(Error::LabelArity { .. })));
    }

    #[test]
    fn fiducial_norm_checked() {
        let s = FockSpace::new(1, 4).unwrap();
        let mut v = s.ground_state();
        v[1] = C64::new(1e-5, 0.0);
        assert!(matches!(
            FiducialVector::new(v.clone()),
            Err(Error::FiducialNorm(_))
        ));
        assert!(FiducialVector::normalized(v).is_ok());
        assert!(FiducialVector::normalized(DVector::zeros(4)).is_err());
    }

    #[test]
    fn resolution_of_unity_small_disk() {
        let s = FockSpace::new(1, 40).unwrap();
        let cs = CoherentStates::standard(&s).unwrap();
        let report = cs
            .resolution_of_unity(&QuadratureSpec {
                radius: 3.0,
                nodes: 61,
                n_max: 2,
            })
            .unwrap();
        // radius 3 leaves e^{-9}(1 + 9 + 40.5) of the n = 2 weight outside
        assert!(report.under_resolved);
        assert!(report.defect < 1e-2);
    }
}
