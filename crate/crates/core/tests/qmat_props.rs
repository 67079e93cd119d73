use proptest::prelude::*;
use purityforge::qmat::{
    fidelity_psd, nuclear_norm, partial_trace, purify, random, svd_square, tensor, trace_norm, CMatrix, Operator,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: &Operator, b: &Operator, tol: f64) -> bool {
    (a.matrix() - b.matrix()).norm() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_trace_recovers_factors(seed in any::<u64>(), da in 1usize..4, db in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random::density(&mut rng, da, da);
        let b = random::density(&mut rng, db, 1);
        let ab = tensor(a.op(), b.op());
        prop_assert!(close(&partial_trace(&ab, &[0]).unwrap(), a.op(), 1e-12));
        prop_assert!(close(&partial_trace(&ab, &[1]).unwrap(), b.op(), 1e-12));
    }

    #[test]
    fn purification_reduces_to_state(seed in any::<u64>(), d in 1usize..5, rank in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random::density(&mut rng, d, rank.min(d));
        let psi = purify(&rho);
        prop_assert!(close(&psi.vector().reduced(&[0]).unwrap(), rho.op(), 1e-10));
    }

    #[test]
    fn fidelity_is_symmetric_and_bounded(seed in any::<u64>(), d in 1usize..5, ra in 1usize..5, rb in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random::density(&mut rng, d, ra.min(d));
        let b = random::density(&mut rng, d, rb.min(d));
        let fab = fidelity_psd(a.op(), b.op()).unwrap();
        let fba = fidelity_psd(b.op(), a.op()).unwrap();
        prop_assert!((fab - fba).abs() <= 1e-9);
        prop_assert!((-1e-12..=1.0 + 1e-9).contains(&fab));
        prop_assert!((fidelity_psd(a.op(), a.op()).unwrap() - 1.0).abs() <= 1e-9);
        // Fuchs-van de Graaf for normalized states
        let td = 0.5 * trace_norm(&(a.op() - b.op()));
        prop_assert!(1.0 - fab.sqrt() <= td + 1e-9);
        prop_assert!(td <= (1.0 - fab).max(0.0).sqrt() + 1e-9);
    }

    #[test]
    fn svd_reconstructs(seed in any::<u64>(), d in 1usize..6, rank in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rank.min(d);
        let m: CMatrix = if rank == 0 {
            CMatrix::zeros(d, d)
        } else {
            let u = random::unitary(&mut rng, d);
            let w = random::density(&mut rng, d, rank);
            u.matrix() * w.op().matrix()
        };
        let svd = svd_square(&m);
        let s = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, svd.sigma.iter().map(|&x| x.into())));
        prop_assert!((&svd.u * s * svd.v.adjoint() - &m).norm() <= 1e-12);
        prop_assert!((svd.u.adjoint() * &svd.u - CMatrix::identity(d, d)).norm() <= 1e-12);
        prop_assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        prop_assert!(nuclear_norm(&m) + 1e-12 >= m.trace().norm());
    }
}
