//! Minimum-eigenvalue solver against a dense symmetric eigendecomposition.

mod common;

use nalgebra::DMatrix;

use common::oracles::{certificate_matrices, dense_min, small_gap_matrix, spectral_norm};
use dpgo::certify::{min_eig, PowerConfig};
use dpgo::objective::DenseOperator;

#[test]
fn min_eig_matches_dense_oracle() {
    let cfg = PowerConfig::default();
    let mut worst: f64 = 0.0;
    for (k, s) in certificate_matrices(50).into_iter().enumerate() {
        let oracle = dense_min(&s);
        let norm = spectral_norm(&s);
        let got = min_eig(&DenseOperator(s), &cfg, None, k as u64);
        let err = (got.value - oracle).abs() / norm;
        worst = worst.max(err);
        assert!(got.converged, "matrix {k}: no convergence");
        assert!(got.residual <= cfg.tol, "matrix {k}: residual {}", got.residual);
        assert!(err <= 1e-4, "matrix {k}: λ {} vs {} (‖S‖ = {norm})", got.value, oracle);
    }
    println!("worst relative eigenvalue error {worst:e}");
}

#[test]
fn diagonal_operator_is_exact() {
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0, -1.0]));
    let cfg = PowerConfig { tol: 1e-10, ..Default::default() };
    let got = min_eig(&DenseOperator(s), &cfg, None, 1);
    assert!((got.value + 1.0).abs() <= 1e-8);
    assert!(got.vector[2].abs() >= 1.0 - 1e-8);
}

#[test]
fn acceleration_halves_iterations_on_small_gaps() {
    for (k, gap) in [1e-2, 5e-3, 2e-3].into_iter().enumerate() {
        let s = small_gap_matrix(120, gap, k as u64);
        let base = PowerConfig { tol: 1e-6, ..Default::default() };
        let fast = min_eig(&DenseOperator(s.clone()), &base, None, 3);
        let plain = min_eig(&DenseOperator(s), &PowerConfig { accelerate: false, ..base }, None, 3);
        assert!(fast.converged && plain.converged);
        let ratio = fast.iterations as f64 / plain.iterations as f64;
        println!("gap {gap}: accelerated {} plain {} ratio {ratio:.3}", fast.iterations, plain.iterations);
        assert!(ratio <= 0.5, "gap {gap}: ratio {ratio}");
        assert!(fast.value.abs() <= 1e-6 && plain.value.abs() <= 1e-6);
    }
}
