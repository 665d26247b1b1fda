//! Closed-form kernels for four soluble constrained systems, and the engine
//! set-ups that reproduce them through the generic machinery.
//!
//! | id | modes | constraints                | `H`                      | fiducial    |
//! |----|-------|----------------------------|--------------------------|-------------|
//! | 1  | 1     | `:P^2+Q^2:`, `delta^2 = 1` | `0`                      | `|0>`       |
//! | 2  | 1     | `P`, `Q`, `delta^2 = 2`    | `(P^2+Q^2)/2`            | `|0>`       |
//! | 3  | 1     | `:P^2+Q^2: - 2`, `0.1`     | `(P^2+Q^2)/2 - 1`        | `|z = sqrt i>` |
//! | 4  | 3     | `J1, J2, J3`, `0.1`        | `sum_j (P_j^2+Q_j^2)/2`  | `|000>`     |
//!
//! Oracle labels are absolute phase-space points. Example 3's engine labels
//! are relative to the displaced fiducial; [`ExampleEngine::factor`] converts.

use std::f64::consts::FRAC_1_SQRT_2;

use rayon::prelude::*;

use crate::coherent::{CoherentLabel, CoherentStates, FiducialVector};
use crate::constraint::{build_projector, ConstraintKind, ConstraintProjector, ConstraintSet};
use crate::dynamics::{
    constrained_propagator, select_fiducial_and_shift, Branch, RenormalizedHamiltonian,
};
use crate::error::{Error, Result};
use crate::expr::parse_operator;
use crate::fock::{FockSpace, SpaceOptions};
use crate::operator::C64;
use crate::product::fiducial_weight;

/// Series terms below this are dropped.
pub const SERIES_TOL: f64 = 1e-16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Example {
    One,
    Two,
    Three,
    Four,
}

impl Example {
    pub const ALL: [Example; 4] = [Example::One, Example::Two, Example::Three, Example::Four];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Example::One),
            2 => Ok(Example::Two),
            3 => Ok(Example::Three),
            4 => Ok(Example::Four),
            _ => Err(Error::InvalidArgument(format!("unknown example {id}"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Example::One => 1,
            Example::Two => 2,
            Example::Three => 3,
            Example::Four => 4,
        }
    }

    pub fn spec(self) -> OracleSpec {
        match self {
            Example::One => OracleSpec {
                example: self,
                modes: 1,
                constraints: vec![":P^2+Q^2:"],
                delta_squared: 1.0,
                kind: ConstraintKind::DiscreteSpectrum,
                hamiltonian: "0",
                fiducial_z: vec![C64::new(0.0, 0.0)],
                energy_shift: 0.0,
                branch: Branch::General,
            },
            Example::Two => OracleSpec {
                example: self,
                modes: 1,
                constraints: vec!["P", "Q"],
                delta_squared: 2.0,
                kind: ConstraintKind::SecondClass,
                hamiltonian: "0.5*(P^2+Q^2)",
                fiducial_z: vec![C64::new(0.0, 0.0)],
                energy_shift: 0.5,
                branch: Branch::Commuting,
            },
            Example::Three => OracleSpec {
                example: self,
                modes: 1,
                constraints: vec![":P^2+Q^2: - 2"],
                delta_squared: 0.1,
                kind: ConstraintKind::DiscreteSpectrum,
                hamiltonian: "0.5*(P^2+Q^2) - 1",
                fiducial_z: vec![sqrt_i()],
                energy_shift: 0.5,
                branch: Branch::Commuting,
            },
            Example::Four => OracleSpec {
                example: self,
                modes: 3,
                constraints: vec!["J1", "J2", "J3"],
                delta_squared: 0.1,
                kind: ConstraintKind::DiscreteSpectrum,
                hamiltonian: "0.5*(P1^2+Q1^2+P2^2+Q2^2+P3^2+Q3^2)",
                fiducial_z: vec![C64::new(0.0, 0.0); 3],
                energy_shift: 1.5,
                branch: Branch::Commuting,
            },
        }
    }
}

/// `sqrt(i) = (1 + i)/sqrt 2`.
pub fn sqrt_i() -> C64 {
    C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)
}

#[derive(Clone, Debug)]
pub struct OracleSpec {
    pub example: Example,
    pub modes: usize,
    /// Constraint operators in the expression language.
    pub constraints: Vec<&'static str>,
    pub delta_squared: f64,
    pub kind: ConstraintKind,
    pub hamiltonian: &'static str,
    /// Fiducial as the displaced ground state `|z>`.
    pub fiducial_z: Vec<C64>,
    /// Expected `E_bar`.
    pub energy_shift: f64,
    pub branch: Branch,
}

fn check_arity(example: Example, label: &CoherentLabel) -> Result<()> {
    let modes = example.spec().modes;
    if label.modes() != modes {
        return Err(Error::LabelArity {
            expected: modes,
            found: label.modes(),
        });
    }
    Ok(())
}

/// `sum_m x^m / (2m+1)!` with phases `e^{-2imT}`, summed until a term drops
/// below `1e-16`.
pub fn odd_factorial_series(x: C64, t: f64) -> C64 {
    let mut sum = C64::new(0.0, 0.0);
    let mut term = C64::new(1.0, 0.0);
    for m in 0..200 {
        sum += term * C64::from_polar(1.0, -2.0 * m as f64 * t);
        let next = 2 * m + 2;
        term = term * x / ((next * (next + 1)) as f64);
        if term.norm() < SERIES_TOL {
            break;
        }
    }
    sum
}

/// Closed-form per-factor kernel `<z''| e^{-i Hbar T} E |z'>` (rescaled by
/// `S^-1` for example 3), in absolute labels.
pub fn oracle_kernel(
    example: Example,
    bra: &CoherentLabel,
    ket: &CoherentLabel,
    t: f64,
) -> Result<C64> {
    check_arity(example, bra)?;
    check_arity(example, ket)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("propagation time"));
    }
    let zb = bra.z();
    let zk = ket.z();
    let gauss = (-0.5 * (bra.norm_sq_z() + ket.norm_sq_z())).exp();
    Ok(match example {
        Example::One | Example::Two => C64::new(gauss, 0.0),
        Example::Three => {
            let prefactor = (-0.5 * (bra.norm_sq_z() + ket.norm_sq_z() - 2.0)).exp();
            zb[0].conj() * zk[0] * prefactor
        }
        Example::Four => {
            let sb: C64 = zb.iter().map(|z| z.conj() * z.conj()).sum();
            let sk: C64 = zk.iter().map(|z| z * z).sum();
            odd_factorial_series(sb * sk, t) * gauss
        }
    })
}

/// Generic-machinery realisation of an example.
pub struct ExampleEngine {
    pub example: Example,
    pub space: FockSpace,
    pub states: CoherentStates,
    pub projector: ConstraintProjector,
    pub hamiltonian: RenormalizedHamiltonian,
    /// `<eta|E|eta>`.
    pub s_bar: f64,
    /// The fiducial's own label (engine labels are relative to it).
    pub fiducial_label: CoherentLabel,
}

impl ExampleEngine {
    /// Builds the example at `cutoff` levels per mode. Example 4 uses the
    /// total-number cap `cutoff - 1` with boundary tolerance `1e-4`.
    pub fn build(example: Example, cutoff: usize) -> Result<Self> {
        Self::build_with_cap(example, cutoff, crate::fock::DEFAULT_RESOURCE_CAP)
    }

    pub fn build_with_cap(example: Example, cutoff: usize, resource_cap: usize) -> Result<Self> {
        let spec = example.spec();
        let options = if example == Example::Four {
            SpaceOptions {
                number_cap: Some(cutoff - 1),
                tail_tolerance: 1e-4,
                resource_cap,
            }
        } else {
            SpaceOptions {
                resource_cap,
                ..SpaceOptions::default()
            }
        };
        let space = FockSpace::with_options(spec.modes, cutoff, options)?;
        let ops = spec
            .constraints
            .iter()
            .map(|c| parse_operator(&space, c))
            .collect::<Result<Vec<_>>>()?;
        let set = ConstraintSet::new(ops, spec.kind, spec.delta_squared)?;
        let projector = build_projector(&set)?;
        let h = parse_operator(&space, spec.hamiltonian)?;
        let hamiltonian = select_fiducial_and_shift(&projector, &h, spec.branch)?;
        let fiducial_label = CoherentLabel::from_z(&spec.fiducial_z)?;
        let fiducial = FiducialVector::coherent(&space, &fiducial_label)?;
        let states = CoherentStates::new(&space, fiducial)?;
        let s_bar = fiducial_weight(&states, &projector)?;
        Ok(Self {
            example,
            space,
            states,
            projector,
            hamiltonian,
            s_bar,
            fiducial_label,
        })
    }

    /// Converts an absolute label to an engine label and the Weyl phase
    /// `theta` with `|x>_eta = e^{i theta} |x + w>_0`.
    pub fn relative(&self, label: &CoherentLabel) -> Result<(CoherentLabel, f64)> {
        let w = self.fiducial_label.z();
        let z = label.z();
        if z.len() != w.len() {
            return Err(Error::LabelArity {
                expected: w.len(),
                found: z.len(),
            });
        }
        let x: Vec<C64> = z.iter().zip(&w).map(|(z, w)| z - w).collect();
        let theta = x.iter().zip(&w).map(|(x, w)| (x * w.conj()).im).sum();
        Ok((CoherentLabel::from_z(&x)?, theta))
    }

    /// `S^-1 <z''| e^{-i Hbar T} E |z'>` through the engine, in absolute labels.
    pub fn factor(&self, bra: &CoherentLabel, ket: &CoherentLabel, t: f64) -> Result<C64> {
        Ok(self.factors(&[(bra.clone(), ket.clone())], t)?[0])
    }

    /// [`Self::factor`] over many pairs sharing one propagator.
    pub fn factors(&self, pairs: &[(CoherentLabel, CoherentLabel)], t: f64) -> Result<Vec<C64>> {
        let x = constrained_propagator(
            &self.projector,
            &self.hamiltonian.h_bar,
            t,
            self.hamiltonian.branch,
        )?;
        pairs
            .par_iter()
            .map(|(bra, ket)| {
                let (xb, tb) = self.relative(bra)?;
                let (xk, tk) = self.relative(ket)?;
                let b = self.states.state(&xb)?;
                let k = self.states.state(&xk)?;
                let raw = x.sandwich(&b, &k)? / self.s_bar;
                Ok(raw * C64::from_polar(1.0, tb - tk))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct OracleComparison {
    pub max_deviation: f64,
    pub evaluated: usize,
}

/// Largest `|engine - oracle|` over `pairs x times`.
pub fn oracle_vs_engine(
    engine: &ExampleEngine,
    pairs: &[(CoherentLabel, CoherentLabel)],
    times: &[f64],
) -> Result<OracleComparison> {
    let mut max_deviation: f64 = 0.0;
    for &t in times {
        let got = engine.factors(pairs, t)?;
        for ((bra, ket), g) in pairs.iter().zip(got) {
            let want = oracle_kernel(engine.example, bra, ket, t)?;
            max_deviation = max_deviation.max((g - want).norm());
        }
    }
    Ok(OracleComparison {
        max_deviation,
        evaluated: pairs.len() * times.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_values() {
        let o1 = CoherentLabel::origin(1);
        assert_eq!(
            oracle_kernel(Example::One, &o1, &o1, 0.0).unwrap(),
            C64::new(1.0, 0.0)
        );
        let o3 = CoherentLabel::origin(3);
        assert_eq!(
            oracle_kernel(Example::Four, &o3, &o3, 0.7).unwrap(),
            C64::new(1.0, 0.0)
        );
        let w = CoherentLabel::from_z(&[sqrt_i()]).unwrap();
        // e * e^{-1} * |sqrt i|^2 = 1, i.e. S^-1 <w|E|w> with S = 1/e
        assert!((oracle_kernel(Example::Three, &w, &w, 0.0).unwrap() - 1.0).norm() < 1e-15);
        assert!(matches!(
            oracle_kernel(Example::Four, &o1, &o1, 0.0),
            Err(Error::LabelArity { .. })
        ));
    }

    #[test]
    fn series_is_sinhc() {
        for x in [C64::new(0.3, 0.0), C64::new(-1.2, 0.7), C64::new(4.0, -3.0)] {
            let r = x.sqrt();
            let sinhc = r.sinh() / r;
            assert!((odd_factorial_series(x, 0.0) - sinhc).norm() < 1e-14);
        }
    }

    #[test]
    fn oracle_is_hermitian_symmetric() {
        let a = CoherentLabel::new(vec![0.3, -0.2, 0.5], vec![0.1, 0.4, -0.6]).unwrap();
        let b = CoherentLabel::new(vec![-0.5, 0.2, 0.0], vec![0.7, -0.1, 0.3]).unwrap();
        let ab = oracle_kernel(Example::Four, &a, &b, 0.0).unwrap();
        let ba = oracle_kernel(Example::Four, &b, &a, 0.0).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-15);
    }

    #[test]
    fn engines_reproduce_shifts() {
        for ex in [Example::One, Example::Two, Example::Three] {
            let e = ExampleEngine::build(ex, 30).unwrap();
            assert!(
                (e.hamiltonian.energy_shift - ex.spec().energy_shift).abs() < 1e-12,
                "example {}",
                ex.id()
            );
        }
    }

    #[test]
    fn example_three_matches_closed_form() {
        let e = ExampleEngine::build(Example::Three, 40).unwrap();
        assert!((e.s_bar - (-1.0f64).exp()).abs() < 1e-12);
        let a = CoherentLabel::from_z(&[C64::new(0.4, -0.9)]).unwrap();
        let b = CoherentLabel::from_z(&[C64::new(-1.1, 0.3)]).unwrap();
        for t in [0.0, 1.0, 10.0] {
            let got = e.factor(&a, &b, t).unwrap();
            let want = oracle_kernel(Example::Three, &a, &b, t).unwrap();
            assert!((got - want).norm() < 1e-10, "t = {t}: {got} vs {want}");
        }
    }
}
