use nalgebra::DMatrix;

use super::PoseGraph;
use crate::sparse::CsrMatrix;

/// The connection Laplacian `Q` with `f(X) = ⟨Q, XᵀX⟩`, ordered as
/// `[Y₁ p₁ … Y_n p_n]`.
#[derive(Clone, Debug)]
pub struct ConnectionLaplacian {
    pub d: usize,
    pub n: usize,
    pub matrix: CsrMatrix,
}

impl ConnectionLaplacian {
    pub fn dim(&self) -> usize {
        (self.d + 1) * self.n
    }
}

pub fn build_connection_laplacian(graph: &PoseGraph) -> ConnectionLaplacian {
    let d = graph.dimension;
    let k = d + 1;
    let n = graph.num_poses;
    let mut trip = Vec::with_capacity(graph.edges.len() * 4 * k * k);
    for e in &graph.edges {
        let (bi, bj) = (e.i * k, e.j * k);
        // rotation term: x_j E − x_i A with E = [I; 0], A = [R̃; 0]
        for a in 0..d {
            trip.push((bi + a, bi + a, e.kappa));
            trip.push((bj + a, bj + a, e.kappa));
            for b in 0..d {
                let v = e.rotation[(a, b)] * e.kappa;
                trip.push((bi + a, bj + b, -v));
                trip.push((bj + b, bi + a, -v));
            }
        }
        // translation term: x_j e − x_i u with e = [0; 1], u = [t̃; 1]
        let mut u = vec![0.0; k];
        u[..d].copy_from_slice(e.translation.as_slice());
        u[d] = 1.0;
        for a in 0..k {
            for b in 0..k {
                trip.push((bi + a, bi + b, e.tau * u[a] * u[b]));
            }
            trip.push((bi + a, bj + d, -e.tau * u[a]));
            trip.push((bj + d, bi + a, -e.tau * u[a]));
        }
        trip.push((bj + d, bj + d, e.tau));
    }
    ConnectionLaplacian { d, n, matrix: CsrMatrix::from_triplets(k * n, &trip) }
}

/// `v₀ = 1_n ⊗ [0_d; 1]`.
pub fn null_vector(d: usize, n: usize) -> Vec<f64> {
    (0..(d + 1) * n).map(|c| if c % (d + 1) == d { 1.0 } else { 0.0 }).collect()
}

/// `Σ κ‖Y_j − Y_iR̃_ij‖² + τ‖p_j − p_i − Y_it̃_ij‖²` evaluated edge by edge.
pub fn expanded_cost(graph: &PoseGraph, x: &DMatrix<f64>) -> f64 {
    let d = graph.dimension;
    let k = d + 1;
    let mut f = 0.0;
    for e in &graph.edges {
        let yi = x.columns(e.i * k, d);
        let yj = x.columns(e.j * k, d);
        let pi = x.column(e.i * k + d);
        let pj = x.column(e.j * k + d);
        let dr = &yj - &yi * &e.rotation;
        let dt = &pj - &pi - &yi * &e.translation;
        f += e.kappa * dr.norm_squared() + e.tau * dt.norm_squared();
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{random_stiefel, LiftedState};
    use crate::posegraph::{simulate_grid, Pose, RelativeMeasurement, SimulationParams};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(sigma: f64) -> (PoseGraph, Vec<Pose>) {
        let p = SimulationParams { dimension: 2, robots: 2, grid: vec![3, 3], sigma_r_deg: sigma, sigma_t: sigma / 50.0, seed: 4, ..Default::default() };
        simulate_grid(&p).unwrap()
    }

    #[test]
    fn null_vector_is_annihilated() {
        let (g, _) = small(5.0);
        let q = build_connection_laplacian(&g);
        let v = null_vector(2, g.num_poses);
        let mut out = vec![0.0; v.len()];
        q.matrix.mul_vec(&v, &mut out);
        assert!(out.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn identity_chain_has_zero_cost_at_truth() {
        let e = RelativeMeasurement {
            i: 0,
            j: 1,
            rotation: DMatrix::identity(2, 2),
            translation: DVector::from_vec(vec![1.0, 0.0]),
            kappa: 1.0,
            tau: 1.0,
        };
        let g = PoseGraph::new(2, 2, vec![e], vec![0, 0]).unwrap();
        let truth = [Pose::identity(2), Pose { rotation: DMatrix::identity(2, 2), translation: DVector::from_vec(vec![1.0, 0.0]) }];
        let x = LiftedState::from_poses(&truth).x;
        let q = build_connection_laplacian(&g);
        let f = (&x * q.matrix.to_dense() * x.transpose()).trace();
        assert!(f.abs() < 1e-14);
    }

    #[test]
    fn matrix_form_matches_edge_sum() {
        let (g, _) = small(5.0);
        let q = build_connection_laplacian(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = DMatrix::zeros(4, 3 * g.num_poses);
        for i in 0..g.num_poses {
            x.columns_mut(3 * i, 2).copy_from(&random_stiefel(4, 2, &mut rng));
            x.column_mut(3 * i + 2).copy_from(&(random_stiefel(4, 1, &mut rng) * 3.0));
        }
        let dense = (&x * q.matrix.to_dense() * x.transpose()).trace();
        let sum = expanded_cost(&g, &x);
        assert!((dense - sum).abs() <= 1e-9 * sum);
    }

    #[test]
    fn laplacian_is_symmetric_psd() {
        let (g, _) = small(8.0);
        let q = build_connection_laplacian(&g);
        let eig = q.matrix.to_dense().symmetric_eigen().eigenvalues;
        assert!(q.matrix.asymmetry() <= 1e-14 * eig.amax());
        assert!(eig.min() >= -1e-8 * eig.amax());
    }
}
