//! Oracles shared by the integration tests and the acceptance suite.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{desk_grid, gaussian, random_graph, random_instance, random_point, random_tangent};
use dpgo::certify::{solve, SolveConfig};
use dpgo::manifold::{inner, project_to_tangent, retract, LiftedState};
use dpgo::netsim::{run_distributed, Phase, TranscriptEntry};
use dpgo::objective::{certificate, cost, hessian_vec, riemannian_gradient};
use dpgo::posegraph::{build_connection_laplacian, expanded_cost, null_vector, ConnectionLaplacian, PoseGraph};
use dpgo::rbcd::Selection;

pub fn f(q: &ConnectionLaplacian, x: &LiftedState) -> f64 {
    cost(q, x).unwrap()
}

/// Relative error of `⟨grad f, η⟩` against a central difference along the retraction.
pub fn gradient_fd_error(q: &ConnectionLaplacian, x: &LiftedState, eta: &DMatrix<f64>) -> f64 {
    let h = 1e-5;
    let plus = retract(x, &(eta * h)).unwrap();
    let minus = retract(x, &(eta * -h)).unwrap();
    let fd = (f(q, &plus) - f(q, &minus)) / (2.0 * h);
    let g = riemannian_gradient(q, x);
    let an = inner(&g, eta);
    (fd - an).abs() / an.abs().max(g.norm() * eta.norm()).max(1e-12)
}

/// Relative error of `Hess f[η]` against the projected difference of gradients.
pub fn hessian_fd_error(q: &ConnectionLaplacian, x: &LiftedState, eta: &DMatrix<f64>) -> f64 {
    let h = 1e-5;
    let gp = riemannian_gradient(q, &retract(x, &(eta * h)).unwrap());
    let gm = riemannian_gradient(q, &retract(x, &(eta * -h)).unwrap());
    let fd = project_to_tangent(x, &((gp - gm) / (2.0 * h)));
    let hv = hessian_vec(q, x, eta);
    (&fd - &hv).norm() / hv.norm().max(1e-12)
}

/// Relative errors of the six identities on `random_instance(seed)`: gradient,
/// Hessian, Hessian symmetry, cost forms, null vector, projection idempotence.
pub fn consistency_errors(seed: u64) -> [f64; 6] {
    let (g, x) = random_instance(seed);
    let q = build_connection_laplacian(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let eta = random_tangent(&x, &mut rng);
    let xi = random_tangent(&x, &mut rng);
    let grad = gradient_fd_error(&q, &x, &eta);
    let hess = hessian_fd_error(&q, &x, &eta);
    let (a, b) = (inner(&hessian_vec(&q, &x, &eta), &xi), inner(&eta, &hessian_vec(&q, &x, &xi)));
    let sym = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let fq = f(&q, &x);
    let fe = expanded_cost(&g, &x.x);
    let costs = (fq - fe).abs() / fe.abs().max(1.0);
    let v0 = null_vector(g.dimension, g.num_poses);
    let mut qv = vec![0.0; v0.len()];
    q.matrix.mul_vec(&v0, &mut qv);
    let qmax = q.matrix.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let null = qv.iter().map(|v| v.abs()).fold(0.0, f64::max) / qmax;
    let u = DMatrix::from_fn(x.r(), x.x.ncols(), |_, _| gaussian(&mut rng));
    let p1 = project_to_tangent(&x, &u);
    let p2 = project_to_tangent(&x, &p1);
    let idem = (&p2 - &p1).norm() / p1.norm().max(1.0);
    [grad, hess, sym, costs, null, idem]
}

pub fn dense_min(s: &DMatrix<f64>) -> f64 {
    s.clone().symmetric_eigen().eigenvalues.min()
}

pub fn spectral_norm(s: &DMatrix<f64>) -> f64 {
    s.clone().symmetric_eigen().eigenvalues.amax()
}

/// Certificate matrices at random points and at near-optimal points, `(d+1)n ≤ 300`.
pub fn certificate_matrices(count: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 0..count {
        let d = if k % 2 == 0 { 2 } else { 3 };
        let n = rng.random_range(4..=300 / (d + 1));
        let g = random_graph(d, n, n / 2, &mut rng);
        let q = build_connection_laplacian(&g);
        let x = if k % 3 == 0 {
            let cfg = SolveConfig { seed: k as u64, ..Default::default() };
            let sol = solve(&g, &cfg).unwrap();
            LiftedState::from_poses(&sol.poses)
        } else {
            random_point(d, d + 1 + k % 3, n, &mut rng)
        };
        out.push(certificate(&q, &x).to_dense());
    }
    out
}

/// Random orthogonal conjugate of a spectrum with a relative gap `gap` at the bottom.
pub fn small_gap_matrix(n: usize, gap: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 10.0;
    let mut eig = vec![0.0, gap * spread];
    eig.extend((2..n).map(|_| rng.random_range(gap * spread..spread)));
    eig[n - 1] = spread;
    let g = DMatrix::from_fn(n, n, |_, _| gaussian(&mut rng));
    let q = g.qr().q();
    &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig)) * q.transpose()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn equivalent(g: &PoseGraph, cfg: &SolveConfig) -> (bool, usize) {
    let central = solve(g, cfg).unwrap();
    let dist = run_distributed(g, cfg, true).unwrap();
    let a: Vec<f64> = central.logs.iter().flat_map(|l| l.costs()).collect();
    let b: Vec<f64> = dist.outcome.logs.iter().flat_map(|l| l.costs()).collect();
    let same_poses = central.poses == dist.outcome.poses;
    let same_report = central.report.f_sdp.to_bits() == dist.outcome.report.f_sdp.to_bits()
        && central.report.certified == dist.outcome.report.certified;
    (bits(&a) == bits(&b) && same_poses && same_report, dist.audit.privacy_leaks)
}

/// Public-pose payload per local-search round that carries any.
pub fn pose_payload_per_round(t: &[TranscriptEntry]) -> f64 {
    let updates: Vec<&TranscriptEntry> =
        t.iter().filter(|e| e.phase == Phase::LocalSearch && e.kind == "public-pose-update").collect();
    let mut rounds: Vec<usize> = updates.iter().map(|e| e.round).collect();
    rounds.dedup();
    updates.iter().map(|e| e.payload).sum::<usize>() as f64 / rounds.len().max(1) as f64
}

/// `graph` with every other inter-robot edge removed.
pub fn halve_inter_robot_edges(g: &PoseGraph) -> PoseGraph {
    let mut keep = true;
    let edges = g
        .edges
        .iter()
        .filter(|e| {
            if g.ownership[e.i] == g.ownership[e.j] {
                return true;
            }
            keep = !keep;
            !keep
        })
        .cloned()
        .collect();
    PoseGraph::new(g.dimension, g.num_poses, edges, g.ownership.clone()).unwrap()
}

pub fn doubling_ratio(seed: u64) -> f64 {
    let (full, _) = desk_grid(seed, 3.0);
    let half = halve_inter_robot_edges(&full);
    let mut cfg = SolveConfig { accelerated: false, r_max: Some(4), ..Default::default() };
    cfg.local.selection = Selection::Uniform;
    cfg.local.parallel = false;
    cfg.local.max_iters = 200;
    let a = run_distributed(&half, &cfg, true).unwrap();
    let b = run_distributed(&full, &cfg, true).unwrap();
    let inter = |g: &PoseGraph| g.edges.iter().filter(|e| g.ownership[e.i] != g.ownership[e.j]).count();
    let ratio = pose_payload_per_round(&b.transcript) / pose_payload_per_round(&a.transcript);
    println!("inter-robot edges {} vs {}: payload ratio {ratio:.3}", inter(&full), inter(&half));
    ratio
}

