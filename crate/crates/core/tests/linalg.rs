mod common;

use common::{dense, gauss_solve, mat_vec};
use ism::linalg::{self, CMat, CVec, Lu, C64};
use ism::models::{random_hermitian, random_state};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(n, n, |i, j| {
        let d = if i == j { n as f64 } else { 0.0 };
        C64::new(d + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn lu_solve_matches_elimination(n in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(n, &mut rng);
        let b = random_state(n, &mut rng);
        let x = Lu::factor(&a).unwrap().solve(b.as_slice());
        let reference = gauss_solve(dense(&a), b.as_slice().to_vec());
        prop_assert!(max_diff(x.as_slice(), &reference) < 1e-12);
        let ax = linalg::matvec(&a, &x).unwrap();
        prop_assert!(ax.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn matvec_and_adjoint_match_dense_products(n in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(n, &mut rng);
        let v = random_state(n, &mut rng);
        let y = linalg::matvec(&a, &v).unwrap();
        prop_assert!(max_diff(y.as_slice(), &mat_vec(&dense(&a), v.as_slice())) < 1e-13);
        let ya = linalg::adjoint_matvec(&a, &v).unwrap();
        prop_assert!(max_diff(ya.as_slice(), &mat_vec(&dense(&a.adjoint()), v.as_slice())) < 1e-13);
    }

    #[test]
    fn matmul_is_associative(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_matrix(n, &mut rng), random_matrix(n, &mut rng), random_matrix(n, &mut rng));
        let left = a.matmul(&b).matmul(&c);
        let right = a.matmul(&b.matmul(&c));
        prop_assert!(left.max_abs_diff(&right) < 1e-11 * left.max_abs().max(1.0));
    }

    #[test]
    fn eigen_decomposition_reconstructs(n in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(n, 2.0, &mut rng);
        let (values, vectors) = linalg::eig_hermitian(&h).unwrap();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(vectors.unitarity_residual() < 1e-12);
        for (k, &lambda) in values.iter().enumerate() {
            let v = linalg::column(&vectors, k);
            let hv = linalg::matvec(&h, &v).unwrap();
            prop_assert!(hv.max_abs_diff(&v.scale_real(lambda)) < 1e-12);
        }
        let trace: f64 = values.iter().sum();
        prop_assert!((trace - h.trace().re).abs() < 1e-12);
    }

    #[test]
    fn dft_is_unitary(n in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_state(n, &mut rng);
        let f = linalg::dft(&v, false);
        prop_assert!((f.norm() - 1.0).abs() < 1e-14);
        prop_assert!(linalg::dft(&f, true).max_abs_diff(&v) < 1e-14);
    }
}

#[test]
fn commutator_of_pauli_matrices() {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let sx = CMat::from_vec(2, 2, vec![z, one, one, z]).unwrap();
    let sy = CMat::from_vec(2, 2, vec![z, -i, i, z]).unwrap();
    let sz = CMat::from_diagonal(&[one, -one]);
    assert!(sx.commutator(&sy).max_abs_diff(&sz.scale(C64::new(0.0, 2.0))) < 1e-15);
}

#[test]
fn combine_and_axpy_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_state(5, &mut rng);
    let y = random_state(5, &mut rng);
    let c = CVec::combine(0.25, &x, 0.75, &y);
    let mut d = x.scale_real(0.25);
    d.axpy(C64::new(0.75, 0.0), &y);
    assert!(c.max_abs_diff(&d) < 1e-16);
}
