use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rkck::coherent::ground_overlap;
use rkck::constraint::{build_projector, kernel_rank, ConstrainedKernel, GRAM_PSD_REL_TOL};
use rkck::dynamics::propagator;
use rkck::product::classify_factors;
use rkck::{
    CoherentLabel, CoherentStates, ConstraintKind, ConstraintSet, Error, FockSpace, OperatorMatrix,
    C64,
};

fn hermitian(dim: usize, entries: &[f64]) -> OperatorMatrix {
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        let k = 2 * (a * dim + b);
        let im = if i == j {
            0.0
        } else if i < j {
            entries[k + 1]
        } else {
            -entries[k + 1]
        };
        C64::new(entries[k], im)
    });
    OperatorMatrix::hermitian(m).unwrap()
}

fn label() -> impl Strategy<Value = CoherentLabel> {
    (-1.4f64..1.4, -1.4f64..1.4).prop_map(|(p, q)| CoherentLabel::single(p, q).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_is_hermitian_idempotent(
        entries in prop::collection::vec(-1.0f64..1.0, 2 * 8 * 8),
        delta_squared in 0.05f64..3.0,
    ) {
        let phi = hermitian(8, &entries);
        let set = ConstraintSet::new(vec![phi], ConstraintKind::DiscreteSpectrum, delta_squared).unwrap();
        match build_projector(&set) {
            Ok(e) => {
                let m = e.matrix().matrix();
                prop_assert!((m * m - m).norm() < 1e-10);
                prop_assert!((m - m.adjoint()).norm() < 1e-12);
                prop_assert!((e.matrix().trace().re - e.rank() as f64).abs() < 1e-10);
            }
            Err(Error::DeltaBoundary { .. }) => {}
            Err(other) => prop_assert!(false, "{other}"),
        }
    }

    #[test]
    fn constrained_gram_is_psd_and_schwarz(
        labels in prop::collection::vec(label(), 6),
        delta_squared in 0.5f64..7.0,
    ) {
        let space = FockSpace::new(1, 30).unwrap();
        let states = CoherentStates::standard(&space).unwrap();
        let phi = rkck::expr::parse_operator(&space, ":P^2+Q^2:").unwrap();
        let set = ConstraintSet::new(vec![phi], ConstraintKind::DiscreteSpectrum, delta_squared).unwrap();
        let e = match build_projector(&set) {
            Ok(e) => e,
            Err(Error::DeltaBoundary { .. }) => return Ok(()),
            Err(other) => return Err(TestCaseError::fail(other.to_string())),
        };
        let kernel = ConstrainedKernel::new(&states, &e).unwrap();
        let gram = kernel.gram(&labels).unwrap();
        let values = gram.clone().symmetric_eigenvalues();
        let top = values.iter().copied().fold(0.0, f64::max);
        prop_assert!(values.iter().all(|&v| v >= -GRAM_PSD_REL_TOL * top.max(1.0)));
        prop_assert!(kernel_rank(&gram).unwrap() <= e.rank());
        for a in 0..labels.len() {
            for b in 0..labels.len() {
                let kab = gram[(a, b)].norm();
                let kaa = gram[(a, a)].re;
                let kbb = gram[(b, b)].re;
                prop_assert!(kab * kab <= kaa * kbb + 1e-12);
                prop_assert!(kaa <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn propagator_group_law(
        entries in prop::collection::vec(-1.0f64..1.0, 2 * 6 * 6),
        t1 in -3.0f64..3.0,
        t2 in -3.0f64..3.0,
    ) {
        let h = hermitian(6, &entries);
        let u1 = propagator(&h, t1).unwrap();
        let u2 = propagator(&h, t2).unwrap();
        let u12 = propagator(&h, t1 + t2).unwrap();
        let id = DMatrix::<C64>::identity(6, 6);
        prop_assert!((u1.matrix().adjoint() * u1.matrix() - &id).norm() < 1e-10);
        prop_assert!((u1.matrix() * u2.matrix() - u12.matrix()).norm() < 1e-10);
    }

    #[test]
    fn product_is_interchange_symmetric(
        zs in prop::collection::vec((-0.3f64..0.3, -0.3f64..0.3), 40),
        seed in any::<u64>(),
    ) {
        let origin = CoherentLabel::origin(1);
        let factors: Vec<C64> = zs
            .iter()
            .map(|&(p, q)| ground_overlap(&origin, &CoherentLabel::single(p, q).unwrap()))
            .collect();
        let mut shuffled = factors.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = classify_factors(&factors).unwrap();
        let b = classify_factors(&shuffled).unwrap();
        prop_assert_eq!(a.partial_products.last(), b.partial_products.last());
        prop_assert_eq!(a.s.last(), b.s.last());
    }
}
