mod common;

use common::gaussian;
use eigalign::numerics::rng::{child_rng, derive_seed};
use eigalign::numerics::{column_norms, rademacher_matrix, symmetric_eig_descending, Tensor};
use proptest::prelude::*;

fn random_symmetric(seed: u64, m: usize) -> Tensor {
    let mut rng = child_rng(seed, "sym", 0);
    let a = Tensor::matrix(m, m, gaussian(&mut rng, m * m)).unwrap();
    a.add(&a.transpose()).unwrap().scale(0.5)
}

#[test]
fn eigendecomposition_reconstructs_random_symmetric_matrices() {
    for trial in 0..1000u64 {
        let m = 1 + (derive_seed(trial, "dim", 0) % 32) as usize;
        let a = random_symmetric(trial, m);
        let (lam, v) = symmetric_eig_descending(&a).unwrap();
        let rec = v.matmul(&Tensor::from_diag(&lam)).unwrap().matmul(&v.transpose()).unwrap();
        let err = rec.sub(&a).unwrap().max_abs();
        assert!(err <= 1e-8 * a.max_abs(), "trial {trial}, m {m}: {err}");
        assert!(lam.windows(2).all(|w| w[0] >= w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenpairs_residual_orthogonality_and_sign(seed in any::<u64>(), m in 1usize..12) {
        let a = random_symmetric(seed, m);
        let (lam, v) = symmetric_eig_descending(&a).unwrap();
        let vtv = v.transpose().matmul(&v).unwrap();
        prop_assert!(vtv.sub(&Tensor::identity(m)).unwrap().max_abs() <= 1e-8);
        for (i, &l) in lam.iter().enumerate() {
            let col = Tensor::column(&v.column_vec(i));
            let r = a.matmul(&col).unwrap().sub(&col.scale(l)).unwrap();
            prop_assert!(r.norm() <= 1e-8 * l.abs().max(1.0));
            let first = v.column_vec(i).into_iter().find(|x| x.abs() > 1e-12).unwrap();
            prop_assert!(first > 0.0);
        }
    }

    #[test]
    fn rademacher_is_bitwise_deterministic(seed in any::<u64>(), p in 1usize..20, q in 1usize..6) {
        let a = rademacher_matrix(p, q, seed);
        let b = rademacher_matrix(p, q, seed);
        prop_assert_eq!(a.data(), b.data());
        prop_assert!(a.data().iter().all(|x| *x == 1.0 || *x == -1.0));
    }

    #[test]
    fn column_norms_match_definition(seed in any::<u64>(), p in 1usize..8, q in 1usize..8) {
        let mut rng = child_rng(seed, "norms", 0);
        let a = Tensor::matrix(p, q, gaussian(&mut rng, p * q)).unwrap();
        for (j, n) in column_norms(&a).into_iter().enumerate() {
            let direct = a.column_vec(j).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - direct).abs() <= 1e-15 * direct.max(1.0));
        }
    }
}
