#![allow(dead_code)]

pub mod oracles;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dpgo::manifold::{project_to_tangent, random_stiefel, LiftedState, Tangent};
use dpgo::posegraph::{exp_so, simulate_grid, Pose, PoseGraph, RelativeMeasurement, SimulationParams};

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_rotation(d: usize, rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
    let w: Vec<f64> = (0..if d == 2 { 1 } else { 3 }).map(|_| scale * gaussian(rng)).collect();
    exp_so(d, &w)
}

/// Connected random graph: an odometry chain plus `extra` random closures,
/// noisy measurements of random ground truth, poses split among up to three robots.
pub fn random_graph(d: usize, n: usize, extra: usize, rng: &mut ChaCha8Rng) -> PoseGraph {
    let truth: Vec<Pose> = (0..n)
        .map(|_| Pose {
            rotation: random_rotation(d, rng, 2.0),
            translation: DVector::from_fn(d, |_, _| 3.0 * gaussian(rng)),
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for _ in 0..extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            pairs.push((i, j));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(i, j)| {
            let rel = truth[i].between(&truth[j]);
            RelativeMeasurement {
                i,
                j,
                rotation: &rel.rotation * random_rotation(d, rng, 0.1),
                translation: rel.translation + DVector::from_fn(d, |_, _| 0.1 * gaussian(rng)),
                kappa: rng.random_range(0.5..5.0),
                tau: rng.random_range(0.5..5.0),
            }
        })
        .collect();
    let robots = n.min(3);
    PoseGraph::new(d, n, edges, (0..n).map(|i| i * robots / n).collect()).unwrap()
}

pub fn random_point(d: usize, r: usize, n: usize, rng: &mut ChaCha8Rng) -> LiftedState {
    let mut x = DMatrix::zeros(r, (d + 1) * n);
    for i in 0..n {
        x.columns_mut(i * (d + 1), d).copy_from(&random_stiefel(r, d, rng));
        for a in 0..r {
            x[(a, i * (d + 1) + d)] = 2.0 * gaussian(rng);
        }
    }
    LiftedState::new(d, x)
}

pub fn random_tangent(x: &LiftedState, rng: &mut ChaCha8Rng) -> Tangent {
    let u = DMatrix::from_fn(x.r(), x.x.ncols(), |_, _| gaussian(rng));
    let t = project_to_tangent(x, &u);
    let n = t.norm();
    t / n
}

/// A random instance (graph, point at rank `d..d+2`) from `seed`.
pub fn random_instance(seed: u64) -> (PoseGraph, LiftedState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = if rng.random_bool(0.5) { 2 } else { 3 };
    let n = rng.random_range(3..12);
    let extra = rng.random_range(0..2 * n);
    let g = random_graph(d, n, extra, &mut rng);
    let r = d + rng.random_range(0..3);
    let x = random_point(d, r, n, &mut rng);
    (g, x)
}

/// The desk-scale grid simulation with the given seed and rotation noise.
pub fn desk_grid(seed: u64, sigma_r_deg: f64) -> (PoseGraph, Vec<Pose>) {
    simulate_grid(&SimulationParams { seed, sigma_r_deg, ..Default::default() }).unwrap()
}

/// A small grid for quick runs.
pub fn small_grid(seed: u64, robots: usize) -> (PoseGraph, Vec<Pose>) {
    simulate_grid(&SimulationParams { seed, robots, grid: vec![3, 3, 3], ..Default::default() }).unwrap()
}

/// Planar ring of `n` poses with a single loop; random rotation
/// initializations at rank 2 tend to settle in twisted critical points.
pub fn planar_ring(n: usize, seed: u64) -> PoseGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let truth: Vec<Pose> = (0..n)
        .map(|i| {
            let a = step * i as f64;
            Pose { rotation: dpgo::posegraph::rot2(a + std::f64::consts::FRAC_PI_2), translation: DVector::from_vec(vec![a.cos(), a.sin()]) }
        })
        .collect();
    let edges = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            let rel = truth[i].between(&truth[j]);
            RelativeMeasurement {
                i,
                j,
                rotation: rel.rotation * random_rotation(2, &mut rng, 0.01),
                translation: rel.translation + DVector::from_fn(2, |_, _| 0.01 * gaussian(&mut rng)),
                kappa: 10.0,
                tau: 1.0,
            }
        })
        .collect();
    let robots = 4.min(n);
    PoseGraph::new(2, n, edges, (0..n).map(|i| i * robots / n).collect()).unwrap()
}
