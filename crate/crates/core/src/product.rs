//! Infinite products of identical basic systems.
//!
//! A product kernel is `prod_n k(p''_n, q''_n; p'_n, q'_n)` over label
//! sequences sharing a common limit (their sector). Partial products are
//! reported on a doubling schedule and classified as convergent, diverging
//! to zero, or divergent.
//!
//! Every partial product `Pi_N` is folded over the first `N` factors in a
//! canonical order (sorted by value), so permuting factor indices below `N`
//! leaves `Pi_N` bit-for-bit unchanged.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::coherent::{ground_overlap, CoherentLabel, CoherentStates};
use crate::constraint::{ConstrainedKernel, ConstraintProjector};
use crate::error::{Error, Result};
use crate::operator::C64;

/// Smallest `N_max` accepted by the classifiers.
pub const MIN_EVIDENCE: usize = 16;
/// Relative Cauchy tolerance on `s_N` between `N_max/2` and `N_max`.
pub const CAUCHY_TOL: f64 = 1e-6;
/// Doubling-increment decay exponent above which `s_N` is taken as bounded.
pub const MIN_DECAY_EXPONENT: f64 = 0.25;
/// Smallest admissible `<eta|E|eta>`.
pub const S_BAR_THRESHOLD: f64 = 1e-12;
/// Sector overlaps at least this close to 1 count as the same sector.
pub const SAME_SECTOR_TOL: f64 = 1e-12;
/// Number of trailing doublings used in the decay fits.
const FIT_DOUBLINGS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum SequenceFamily {
    /// `limit + offset` for `n <= support`, exactly `limit` afterwards.
    FiniteSupport {
        offset: CoherentLabel,
        support: usize,
    },
    /// `limit + amplitude * n^-alpha`.
    PowerLaw {
        amplitude: CoherentLabel,
        alpha: f64,
    },
    /// `limit + amplitude * ratio^n`.
    Geometric {
        amplitude: CoherentLabel,
        ratio: f64,
    },
    /// Explicit labels for `n = 1..=K`, exactly `limit` afterwards.
    CustomFinite { labels: Vec<CoherentLabel> },
}

/// Label sequence `n -> (p_n, q_n)`, `n >= 1`, converging to `limit`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSequence {
    limit: CoherentLabel,
    family: SequenceFamily,
}

fn scaled(label: &CoherentLabel, factor: f64) -> CoherentLabel {
    CoherentLabel::new(
        label.p().iter().map(|x| x * factor).collect(),
        label.q().iter().map(|x| x * factor).collect(),
    )
    .expect("scaling keeps a label finite")
}

impl LabelSequence {
    pub fn new(limit: CoherentLabel, family: SequenceFamily) -> Result<Self> {
        let j = limit.modes();
        let arity = |l: &CoherentLabel| {
            if l.modes() != j {
                Err(Error::LabelArity {
                    expected: j,
                    found: l.modes(),
                })
            } else {
                Ok(())
            }
        };
        match &family {
            SequenceFamily::FiniteSupport { offset, .. } => arity(offset)?,
            SequenceFamily::PowerLaw { amplitude, alpha } => {
                arity(amplitude)?;
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidSequence(format!(
                        "power-law exponent must be positive (got {alpha})"
                    )));
                }
            }
            SequenceFamily::Geometric { amplitude, ratio } => {
                arity(amplitude)?;
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::InvalidSequence(format!(
                        "geometric ratio must lie in (0, 1) (got {ratio})"
                    )));
                }
            }
            SequenceFamily::CustomFinite { labels } => {
                for l in labels {
                    arity(l)?;
                }
            }
        }
        Ok(Self { limit, family })
    }

    /// Every label equal to the limit.
    pub fn constant(limit: CoherentLabel) -> Self {
        Self {
            limit,
            family: SequenceFamily::CustomFinite { labels: Vec::new() },
        }
    }

    pub fn limit(&self) -> &CoherentLabel {
        &self.limit
    }

    pub fn family(&self) -> &SequenceFamily {
        &self.family
    }

    pub fn modes(&self) -> usize {
        self.limit.modes()
    }

    /// Label number `n` (1-based).
    pub fn label(&self, n: usize) -> Result<CoherentLabel> {
        if n == 0 {
            return Err(Error::InvalidSequence("sequences start at n = 1".into()));
        }
        match &self.family {
            SequenceFamily::FiniteSupport { offset, support } => {
                if n <= *support {
                    self.limit.shifted(offset)
                } else {
                    Ok(self.limit.clone())
                }
            }
            SequenceFamily::PowerLaw { amplitude, alpha } => self
                .limit
                .shifted(&scaled(amplitude, (n as f64).powf(-alpha))),
            SequenceFamily::Geometric { amplitude, ratio } => {
                self.limit.shifted(&scaled(amplitude, ratio.powf(n as f64)))
            }
            SequenceFamily::CustomFinite { labels } => Ok(labels
                .get(n - 1)
                .cloned()
                .unwrap_or_else(|| self.limit.clone())),
        }
    }
}

/// `sum_n sum_j (|p_n^j - pbar^j| + |q_n^j - qbar^j|) < infinity`, decided
/// from the family parameters.
pub fn ell1_criterion(seq: &LabelSequence) -> bool {
    match seq.family() {
        SequenceFamily::FiniteSupport { .. } | SequenceFamily::CustomFinite { .. } => true,
        SequenceFamily::Geometric { .. } => true,
        SequenceFamily::PowerLaw { amplitude, alpha } => {
            *alpha > 1.0 || amplitude.p().iter().chain(amplitude.q()).all(|x| *x == 0.0)
        }
    }
}

/// A two-label kernel evaluated factor by factor.
pub trait FactorKernel: Sync {
    fn factor(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64>;
}

/// Closed-form ground-state overlap.
pub struct GroundOverlap;

impl FactorKernel for GroundOverlap {
    fn factor(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64> {
        Ok(ground_overlap(bra, ket))
    }
}

impl FactorKernel for CoherentStates {
    fn factor(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64> {
        self.overlap(bra, ket)
    }
}

impl<F> FactorKernel for F
where
    F: Fn(&CoherentLabel, &CoherentLabel) -> Result<C64> + Sync,
{
    fn factor(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64> {
        self(bra, ket)
    }
}

/// `S^-1 <bra|E|ket>` with `S = <eta|E|eta>` computed from the family.
pub struct RescaledKernel<'a> {
    kernel: ConstrainedKernel<'a>,
    s_bar: f64,
}

impl<'a> RescaledKernel<'a> {
    pub fn new(states: &'a CoherentStates, projector: &'a ConstraintProjector) -> Result<Self> {
        let s_bar = fiducial_weight(states, projector)?;
        Ok(Self {
            kernel: ConstrainedKernel::new(states, projector)?,
            s_bar,
        })
    }

    pub fn s_bar(&self) -> f64 {
        self.s_bar
    }
}

impl FactorKernel for RescaledKernel<'_> {
    fn factor(&self, bra: &CoherentLabel, ket: &CoherentLabel) -> Result<C64> {
        Ok(self.kernel.value(bra, ket)? / self.s_bar)
    }
}

/// `S = <eta|E|eta>`, refusing fiducials (numerically) annihilated by `E`.
pub fn fiducial_weight(states: &CoherentStates, projector: &ConstraintProjector) -> Result<f64> {
    states.space().check_dim(projector.dim())?;
    let s = projector
        .coordinates(states.fiducial().vector())
        .norm_squared();
    if s <= S_BAR_THRESHOLD {
        return Err(Error::IncompatibleFiducial(s));
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Convergent,
    DivergesToZero,
    Divergent,
    /// Some factor is exactly zero: the product vanishes identically.
    VanishingFactor,
}

#[derive(Clone, Debug)]
pub struct ProductKernelResult {
    /// Schedule of `N` values.
    pub schedule: Vec<usize>,
    /// `Pi_N` on the schedule.
    pub partial_products: Vec<C64>,
    /// `s_N = sum_{n <= N} |1 - k_n|` on the schedule.
    pub s: Vec<f64>,
    pub classification: Classification,
    /// `|s_{N_max} - s_{N_max/2}| <= 1e-6 (1 + s_{N_max})`.
    pub cauchy_verified: bool,
    /// `|s_{N_max} - s_{N_max/2}|`.
    pub cauchy_defect: f64,
    /// `|Pi_{N_max} - Pi_{N_max/2}|`.
    pub product_cauchy_defect: f64,
    /// Decay exponent of the doubling increments of `s_N`.
    pub decay_exponent: Option<f64>,
    /// Decay exponent of the doubling increments of `-ln |Pi_N|`.
    pub log_modulus_exponent: Option<f64>,
    /// Estimated `s_infinity - s_{N_max}` (convergent case).
    pub tail_estimate: Option<f64>,
    /// `Pi_{N_max}` when convergent.
    pub limit: Option<C64>,
    /// `<eta|E|eta>` used for rescaling (1 when unconstrained).
    pub s_bar: f64,
}

impl ProductKernelResult {
    /// CSV rows `N, Re Pi, Im Pi, |Pi|, s_N`.
    pub fn curve(&self) -> Vec<(usize, C64, f64)> {
        self.schedule
            .iter()
            .zip(&self.partial_products)
            .zip(&self.s)
            .map(|((n, p), s)| (*n, *p, *s))
            .collect()
    }
}

/// Powers of two below `n_max`, plus `n_max/2` and `n_max`.
pub fn doubling_schedule(n_max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|&n| n <= n_max)
        .collect();
    out.push(n_max / 2);
    out.push(n_max);
    out.retain(|&n| n >= 1);
    out.sort_unstable();
    out.dedup();
    out
}

fn canonical_cmp(a: &C64, b: &C64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

/// Least-squares slope of `-log2(increment)` against the doubling index.
fn decay_exponent(increments: &[f64]) -> Option<f64> {
    let tail: Vec<(f64, f64)> = increments
        .iter()
        .enumerate()
        .rev()
        .take(FIT_DOUBLINGS)
        .map(|(k, d)| (k as f64, *d))
        .collect();
    if tail.len() < 2 {
        return None;
    }
    if tail.iter().all(|(_, d)| *d == 0.0) {
        return Some(f64::INFINITY);
    }
    if tail.iter().any(|(_, d)| *d <= 0.0) {
        return None;
    }
    let n = tail.len() as f64;
    let mx = tail.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = tail.iter().map(|(_, d)| d.log2()).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|(x, d)| (x - mx) * (d.log2() - my)).sum();
    let sxx: f64 = tail.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Classifies the product of `factors[0..N_max]`.
pub fn classify_factors(factors: &[C64]) -> Result<ProductKernelResult> {
    let n_max = factors.len();
    if n_max < MIN_EVIDENCE {
        return Err(Error::InsufficientEvidence(n_max));
    }
    if factors
        .iter()
        .any(|f| !f.re.is_finite() || !f.im.is_finite())
    {
        return Err(Error::NonFinite("product factors"));
    }
    let schedule = doubling_schedule(n_max);
    let (partial_products, s): (Vec<C64>, Vec<f64>) = schedule
        .par_iter()
        .map(|&n| {
            let mut prefix: Vec<C64> = factors[..n].to_vec();
            prefix.sort_by(canonical_cmp);
            let product = prefix.iter().fold(C64::new(1.0, 0.0), |acc, f| acc * f);
            let mut dev: Vec<f64> = prefix
                .iter()
                .map(|f| (C64::new(1.0, 0.0) - f).norm())
                .collect();
            dev.sort_by(f64::total_cmp);
            (product, dev.iter().sum::<f64>())
        })
        .unzip();

    let last = schedule.len() - 1;
    let half = schedule
        .iter()
        .position(|&n| n == n_max / 2)
        .expect("schedule has N/2");
    let s_max = s[last];
    let cauchy_defect = (s_max - s[half]).abs();
    let cauchy_verified = cauchy_defect <= CAUCHY_TOL * (1.0 + s_max);
    let product_cauchy_defect = (partial_products[last] - partial_products[half]).norm();

    // increments over the power-of-two part of the schedule
    let pow2: Vec<usize> = (0..schedule.len())
        .filter(|&i| schedule[i].is_power_of_two())
        .collect();
    let s_incr: Vec<f64> = pow2.windows(2).map(|w| s[w[1]] - s[w[0]]).collect();
    let log_mod: Vec<f64> = partial_products.iter().map(|p| -p.norm().ln()).collect();
    let log_incr: Vec<f64> = pow2
        .windows(2)
        .map(|w| log_mod[w[1]] - log_mod[w[0]])
        .collect();
    let decay = decay_exponent(&s_incr);
    let log_decay = decay_exponent(&log_incr);
    let decreasing = s_incr
        .iter()
        .rev()
        .take(FIT_DOUBLINGS)
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| w[0] <= w[1]);

    // the modulus of the product stops moving: only the phase diverges
    let modulus_settles = log_incr
        .iter()
        .rev()
        .take(FIT_DOUBLINGS)
        .all(|d| d.abs() <= 1e-12)
        || log_decay.is_some_and(|b| b >= MIN_DECAY_EXPONENT);
    let mut tail_estimate = None;
    let classification = if factors.iter().any(|f| f.norm() == 0.0) {
        Classification::VanishingFactor
    } else if cauchy_verified || (decreasing && decay.is_some_and(|b| b >= MIN_DECAY_EXPONENT)) {
        let b = decay.unwrap_or(f64::INFINITY);
        let last_incr = s_incr.last().copied().unwrap_or(0.0);
        tail_estimate = Some(if b.is_infinite() || last_incr == 0.0 {
            0.0
        } else {
            let r = (-b).exp2();
            last_incr * r / (1.0 - r)
        });
        Classification::Convergent
    } else if modulus_settles {
        Classification::Divergent
    } else {
        Classification::DivergesToZero
    };
    let limit = (classification == Classification::Convergent).then(|| partial_products[last]);
    Ok(ProductKernelResult {
        schedule,
        partial_products,
        s,
        classification,
        cauchy_verified,
        cauchy_defect,
        product_cauchy_defect,
        decay_exponent: decay,
        log_modulus_exponent: log_decay,
        tail_estimate,
        limit,
        s_bar: 1.0,
    })
}

fn factors_for(
    kernel: &dyn FactorKernel,
    bra: &LabelSequence,
    ket: &LabelSequence,
    n_max: usize,
) -> Result<Vec<C64>> {
    (1..=n_max)
        .into_par_iter()
        .map(|n| kernel.factor(&bra.label(n)?, &ket.label(n)?))
        .collect()
}

/// Classifies `prod_n <p_n,q_n|pbar,qbar>` for a given factor kernel.
pub fn classify_sequence_with(
    kernel: &dyn FactorKernel,
    seq: &LabelSequence,
    n_max: usize,
) -> Result<ProductKernelResult> {
    if n_max < MIN_EVIDENCE {
        return Err(Error::InsufficientEvidence(n_max));
    }
    let limit = LabelSequence::constant(seq.limit().clone());
    classify_factors(&factors_for(kernel, seq, &limit, n_max)?)
}

/// Classification with engine overlaps on the given coherent family.
pub fn classify_sequence(
    states: &CoherentStates,
    seq: &LabelSequence,
    n_max: usize,
) -> Result<ProductKernelResult> {
    states.check_label(seq.limit())?;
    classify_sequence_with(states, seq, n_max)
}

#[derive(Clone, Debug)]
pub struct SectorDecay {
    /// `|<pbar,qbar|rbar,sbar>|`.
    pub ratio: f64,
    /// `(N, ratio^N)` over the schedule.
    pub curve: Vec<(usize, f64)>,
}

/// Decay of `|<a|b>|^N` between two sector labels.
pub fn orthogonality_of_sectors(
    kernel: &dyn FactorKernel,
    a: &CoherentLabel,
    b: &CoherentLabel,
    schedule: &[usize],
) -> Result<SectorDecay> {
    let ratio = kernel.factor(a, b)?.norm();
    if ratio >= 1.0 - SAME_SECTOR_TOL {
        return Err(Error::SameSector);
    }
    let curve = schedule
        .iter()
        .map(|&n| {
            let e = i32::try_from(n)
                .map_err(|_| Error::InvalidArgument(format!("schedule entry {n} too large")))?;
            Ok((n, ratio.powi(e)))
        })
        .collect::<Result<_>>()?;
    Ok(SectorDecay { ratio, curve })
}

fn check_same_sector(bra: &LabelSequence, ket: &LabelSequence) -> Result<()> {
    if bra.modes() != ket.modes() {
        return Err(Error::LabelArity {
            expected: bra.modes(),
            found: ket.modes(),
        });
    }
    let gap = bra
        .limit()
        .p()
        .iter()
        .zip(ket.limit().p())
        .chain(bra.limit().q().iter().zip(ket.limit().q()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if gap > 1e-12 {
        return Err(Error::SectorMismatch(format!("limits differ by {gap:.3e}")));
    }
    Ok(())
}

/// `prod_n k(l''_n, l'_n)` for an arbitrary factor kernel.
pub fn product_kernel_with(
    kernel: &dyn FactorKernel,
    bra: &LabelSequence,
    ket: &LabelSequence,
    n_max: usize,
) -> Result<ProductKernelResult> {
    check_same_sector(bra, ket)?;
    if n_max < MIN_EVIDENCE {
        return Err(Error::InsufficientEvidence(n_max));
    }
    classify_factors(&factors_for(kernel, bra, ket, n_max)?)
}

/// `prod_n S^-1 <l''_n|E|l'_n>`, or the plain overlap product without `E`.
pub fn product_kernel(
    states: &CoherentStates,
    projector: Option<&ConstraintProjector>,
    bra: &LabelSequence,
    ket: &LabelSequence,
    n_max: usize,
) -> Result<ProductKernelResult> {
    match projector {
        None => product_kernel_with(states, bra, ket, n_max),
        Some(e) => {
            let k = RescaledKernel::new(states, e)?;
            let mut r = product_kernel_with(&k, bra, ket, n_max)?;
            r.s_bar = k.s_bar();
            Ok(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockSpace;

    fn z_label(re: f64, im: f64) -> CoherentLabel {
        CoherentLabel::from_z(&[C64::new(re, im)]).unwrap()
    }

    fn power_law(alpha: f64) -> LabelSequence {
        LabelSequence::new(
            CoherentLabel::origin(1),
            SequenceFamily::PowerLaw {
                amplitude: z_label(1.0, 0.0),
                alpha,
            },
        )
        .unwrap()
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(doubling_schedule(20), vec![1, 2, 4, 8, 10, 16, 20]);
        assert_eq!(doubling_schedule(16), vec![1, 2, 4, 8, 16]);
    }

    #[test]
    fn sequence_labels() {
        let s = power_law(2.0);
        assert!((s.label(2).unwrap().z()[0].re - 0.25).abs() < 1e-15);
        let f = LabelSequence::new(
            CoherentLabel::origin(1),
            SequenceFamily::FiniteSupport {
                offset: z_label(0.5, 0.0),
                support: 3,
            },
        )
        .unwrap();
        assert_eq!(f.label(4).unwrap(), CoherentLabel::origin(1));
        assert!(f.label(0).is_err());
        assert!(LabelSequence::new(
            CoherentLabel::origin(1),
            SequenceFamily::PowerLaw {
                amplitude: z_label(1.0, 0.0),
                alpha: 0.0
            }
        )
        .is_err());
    }

    #[test]
    fn ell1_cases() {
        assert!(ell1_criterion(&power_law(2.0)));
        assert!(!ell1_criterion(&power_law(1.0)));
        assert!(ell1_criterion(&LabelSequence::constant(
            CoherentLabel::origin(2)
        )));
    }

    #[test]
    fn classification_of_power_laws() {
        let conv = classify_sequence_with(&GroundOverlap, &power_law(1.0), 4096).unwrap();
        assert_eq!(conv.classification, Classification::Convergent);
        let exact: f64 = (1..=4096).map(|n| (-0.5 / (n * n) as f64).exp()).product();
        assert!((conv.limit.unwrap().re - exact).abs() < 1e-12);
        let div = classify_sequence_with(&GroundOverlap, &power_law(0.5), 4096).unwrap();
        assert_eq!(div.classification, Classification::DivergesToZero);
        assert!(div.partial_products.last().unwrap().norm() < 0.02);
    }

    #[test]
    fn finite_support_converges() {
        let s = FockSpace::new(1, 30).unwrap();
        let cs = CoherentStates::standard(&s).unwrap();
        let seq = LabelSequence::new(
            CoherentLabel::origin(1),
            SequenceFamily::FiniteSupport {
                offset: z_label(0.3, -0.4),
                support: 5,
            },
        )
        .unwrap();
        let r = classify_sequence(&cs, &seq, 64).unwrap();
        assert_eq!(r.classification, Classification::Convergent);
        assert!(r.cauchy_verified);
        assert_eq!(r.tail_estimate, Some(0.0));
    }

    #[test]
    fn phase_only_factors_are_divergent() {
        // |k_n| = 1 with phases 1/n: the modulus stays put, the phase drifts
        let factors: Vec<C64> = (1..=4096)
            .map(|n| C64::from_polar(1.0, 1.0 / n as f64))
            .collect();
        let r = classify_factors(&factors).unwrap();
        assert_eq!(r.classification, Classification::Divergent);
    }

    #[test]
    fn insufficient_evidence() {
        assert!(matches!(
            classify_sequence_with(&GroundOverlap, &power_law(2.0), 8),
            Err(Error::InsufficientEvidence(8))
        ));
    }

    #[test]
    fn zero_factor_is_reported() {
        let mut f = vec![C64::new(1.0, 0.0); 32];
        f[3] = C64::new(0.0, 0.0);
        assert_eq!(
            classify_factors(&f).unwrap().classification,
            Classification::VanishingFactor
        );
    }

    #[test]
    fn sector_decay() {
        let d = orthogonality_of_sectors(
            &GroundOverlap,
            &CoherentLabel::origin(1),
            &z_label(1.0, 0.0),
            &[1, 50],
        )
        .unwrap();
        assert!((d.ratio - (-0.5f64).exp()).abs() < 1e-15);
        assert!((d.curve[1].1 / (-25.0f64).exp() - 1.0).abs() < 1e-12);
        assert!(matches!(
            orthogonality_of_sectors(
                &GroundOverlap,
                &CoherentLabel::origin(1),
                &CoherentLabel::origin(1),
                &[1]
            ),
            Err(Error::SameSector)
        ));
    }

    #[test]
    fn mismatched_sectors_rejected() {
        let a = LabelSequence::constant(CoherentLabel::origin(1));
        let b = LabelSequence::constant(z_label(0.1, 0.0));
        assert!(matches!(
            product_kernel_with(&GroundOverlap, &a, &b, 32),
            Err(Error::SectorMismatch(_))
        ));
    }
}
