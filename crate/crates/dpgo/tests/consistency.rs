//! Derivative, cost and projection identities on random instances.

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::oracles::{consistency_errors, f};
use common::{random_instance, random_tangent};
use dpgo::manifold::{inner, project_to_tangent, retract, LiftedState};
use dpgo::posegraph::build_connection_laplacian;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        prop_assert!(consistency_errors(seed)[0] <= 1e-5);
    }

    #[test]
    fn hessian_matches_gradient_differences(seed in any::<u64>()) {
        prop_assert!(consistency_errors(seed)[1] <= 1e-4);
    }

    #[test]
    fn hessian_is_symmetric(seed in any::<u64>()) {
        prop_assert!(consistency_errors(seed)[2] <= 1e-9);
    }

    #[test]
    fn laplacian_cost_matches_edge_sum(seed in any::<u64>()) {
        prop_assert!(consistency_errors(seed)[3] <= 1e-9);
    }

    #[test]
    fn laplacian_annihilates_translation_vector(seed in any::<u64>()) {
        prop_assert!(consistency_errors(seed)[4] <= 1e-9);
    }

    #[test]
    fn tangent_projection_is_idempotent(seed in any::<u64>()) {
        prop_assert!(consistency_errors(seed)[5] <= 1e-10);
    }

    #[test]
    fn tangent_projection_is_self_adjoint(seed in any::<u64>()) {
        let (_, x) = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(x.r(), x.x.ncols(), |_, _| common::gaussian(&mut rng));
        let v = DMatrix::from_fn(x.r(), x.x.ncols(), |_, _| common::gaussian(&mut rng));
        let a = inner(&project_to_tangent(&x, &u), &v);
        let b = inner(&u, &project_to_tangent(&x, &v));
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn retraction_stays_on_manifold(seed in any::<u64>(), scale in 0.0f64..3.0) {
        let (_, x) = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = random_tangent(&x, &mut rng) * scale;
        let y = retract(&x, &eta).unwrap();
        prop_assert!(y.stiefel_violation() <= 1e-12);
    }

    #[test]
    fn cost_is_gauge_invariant(seed in any::<u64>()) {
        let (g, x) = random_instance(seed);
        let q = build_connection_laplacian(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = dpgo::manifold::random_stiefel(x.r(), x.r(), &mut rng);
        let rotated = LiftedState::new(x.d, &o * &x.x);
        let (a, b) = (f(&q, &x), f(&q, &rotated));
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }
}
