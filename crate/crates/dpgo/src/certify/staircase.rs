use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::eig::{min_eig, EigInit, EigenResult, PowerConfig};
use super::init::{init_chordal, init_random, init_spanning_tree, InitMethod};
use super::metrics::round_solution;
use crate::error::{Error, Result};
use crate::manifold::{lift_rank, random_lift, retract, LiftedState};
use crate::objective::certificate;
use crate::posegraph::{Pose, PoseGraph};
use crate::rbcd::{local_search, ordered_sum, Backend, IterationLog, Problem, SolverConfig};

/// The certification steps that involve communication in a distributed run.
pub trait CertifyBackend: Backend {
    /// Minimum eigenpair of `S(X)`.
    fn min_eig(&self, x: &LiftedState, cfg: &PowerConfig, init: Option<&[f64]>, seed: u64) -> EigenResult;
    /// Initial poses for the configured method.
    fn initial_poses(&self, graph: &PoseGraph, cfg: &SolveConfig) -> Result<Vec<Pose>>;
    /// Rounds `X` to SE(d)ⁿ in the frame of the first pose.
    fn round(&self, x: &LiftedState) -> Result<Vec<Pose>>;
    /// Called when the staircase moves to rank `_rank`.
    fn rank_transition(&self, _rank: usize) {}
}

impl CertifyBackend for Problem {
    fn min_eig(&self, x: &LiftedState, cfg: &PowerConfig, init: Option<&[f64]>, seed: u64) -> EigenResult {
        let op = certificate(&self.q, x).with_partition(&self.part);
        min_eig(&op, cfg, init, seed)
    }

    fn initial_poses(&self, graph: &PoseGraph, cfg: &SolveConfig) -> Result<Vec<Pose>> {
        initialize(graph, self, cfg)
    }

    fn round(&self, x: &LiftedState) -> Result<Vec<Pose>> {
        round_solution(x)
    }
}

/// Configuration of the full certifiable pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub init: InitMethod,
    pub chordal_sweeps: usize,
    /// Starting rank; `None` means `d + 1`.
    pub r0: Option<usize>,
    /// Last rank tried; `None` means `r0 + 5`.
    pub r_max: Option<usize>,
    /// Certification threshold on `λ_min(S)`; `None` means `1e-4·(1 + |λ_dom|)`.
    pub eig_tol: Option<f64>,
    pub accelerated: bool,
    pub local: SolverConfig,
    pub power: PowerConfig,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            init: InitMethod::Chordal,
            chordal_sweeps: 50,
            r0: None,
            r_max: None,
            eig_tol: None,
            accelerated: true,
            local: SolverConfig::default(),
            power: PowerConfig::default(),
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SolveConfig = toml::from_str(text).map_err(|e| Error::Parameter(format!("solver config: {e}")))?;
        c.local.validate()?;
        Ok(c)
    }

    pub fn ranks(&self, d: usize) -> Result<(usize, usize)> {
        let r0 = self.r0.unwrap_or(d + 1);
        let r_max = self.r_max.unwrap_or(r0 + 5);
        if r0 < d || r_max < r0 {
            return Err(Error::Parameter(format!("rank range [{r0}, {r_max}] invalid for d = {d}")));
        }
        Ok((r0, r_max))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeRecord {
    pub alpha: f64,
    pub trials: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub rank: usize,
    pub iterations: usize,
    pub converged: bool,
    pub cost: f64,
    pub grad_norm: f64,
    pub eigen: EigenResult,
    pub eig_tol: f64,
    pub certified: bool,
    pub escape: Option<EscapeRecord>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct StaircaseResult {
    pub x: LiftedState,
    pub certified: bool,
    pub ranks: Vec<RankRecord>,
    pub logs: Vec<IterationLog>,
}

/// Leaves a saddle `[X*; 0]` along `Ẋ = [0; vᵀ]`, halving the step until the
/// cost drops and the gradient exceeds `grad_tol`. A step that only lowers the
/// cost is used if no step satisfies both.
pub fn escape_saddle<B: Backend + ?Sized>(
    problem: &B,
    x_plus: &LiftedState,
    v: &[f64],
    grad_tol: f64,
) -> Result<(LiftedState, EscapeRecord)> {
    let r = x_plus.r();
    let mut xdot = DMatrix::zeros(r, x_plus.x.ncols());
    for (c, &vc) in v.iter().enumerate() {
        xdot[(r - 1, c)] = vc;
    }
    let f0 = problem.cost(&x_plus.x);
    let mut alpha = 1.0;
    let mut trials = 0;
    let mut fallback = None;
    while alpha >= 1e-16 {
        trials += 1;
        if let Ok(x) = retract(x_plus, &(&xdot * alpha)) {
            let f = problem.cost(&x.x);
            if f < f0 {
                let gn = ordered_sum(problem.grad_norms_sq(&x.x)).sqrt();
                let rec = EscapeRecord { alpha, trials, cost_before: f0, cost_after: f, grad_norm: gn };
                if gn > grad_tol {
                    return Ok((x, rec));
                }
                if fallback.is_none() {
                    fallback = Some((x, rec));
                }
            }
        }
        alpha /= 2.0;
    }
    match fallback {
        Some((x, mut rec)) => {
            rec.trials = trials;
            Ok((x, rec))
        }
        None => Err(Error::EscapeFailed(alpha * 2.0)),
    }
}

/// Initial vector for the second eigen phase: `None` lets the eigensolver draw
/// a random unit vector. The perturbed row is left unnormalized (the solver
/// normalizes it).
pub fn eig_start(x: &LiftedState, cfg: &PowerConfig, seed: u64) -> Option<Vec<f64>> {
    match cfg.init {
        EigInit::Random => None,
        EigInit::PerturbedRow => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let row = x.x.row(0);
            let scale = row.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
            Some(row.iter().map(|a| a / scale + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect())
        }
    }
}

/// Riemannian staircase: local search at rank `r`, certificate check, and
/// saddle escape into rank `r + 1` until certified or `r_max` is reached.
pub fn staircase<B: CertifyBackend + ?Sized>(problem: &B, x0: &LiftedState, cfg: &SolveConfig) -> Result<StaircaseResult> {
    let d = problem.problem().d();
    let (_, r_max) = cfg.ranks(d)?;
    let mut x = x0.clone();
    let mut ranks = Vec::new();
    let mut logs = Vec::new();
    loop {
        let start = Instant::now();
        let r = x.r();
        let ls = local_search(problem, &x, &cfg.local, cfg.accelerated)?;
        let xs = ls.x;
        let last = ls.log.records.last().expect("iteration log starts with the initial point");
        let cost = last.cost;
        let grad_norm = last.grad_norm.unwrap_or(f64::NAN);
        let seed = cfg.seed.wrapping_add(1000 * r as u64);
        let init = eig_start(&xs, &cfg.power, seed);
        let eigen = problem.min_eig(&xs, &cfg.power, init.as_deref(), seed);
        let eig_tol = cfg.eig_tol.unwrap_or(1e-4 * (1.0 + eigen.dominant_value.abs()));
        let certified = eigen.value >= -eig_tol;
        let mut rec = RankRecord {
            rank: r,
            iterations: ls.log.iterations(),
            converged: ls.log.converged,
            cost,
            grad_norm,
            eigen,
            eig_tol,
            certified,
            escape: None,
            wall_time: 0.0,
        };
        logs.push(ls.log);
        if certified || r >= r_max {
            rec.wall_time = start.elapsed().as_secs_f64();
            ranks.push(rec);
            return Ok(StaircaseResult { x: xs, certified, ranks, logs });
        }
        let (next, esc) = escape_saddle(problem, &lift_rank(&xs), &rec.eigen.vector, cfg.local.grad_tol)?;
        rec.escape = Some(esc);
        rec.wall_time = start.elapsed().as_secs_f64();
        ranks.push(rec);
        problem.rank_transition(next.r());
        x = next;
    }
}

/// Summary of a solve, written as JSON by the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub dimension: usize,
    pub num_poses: usize,
    pub num_edges: usize,
    pub num_robots: usize,
    pub init: InitMethod,
    pub initial_cost: f64,
    pub ranks: Vec<RankRecord>,
    pub final_rank: usize,
    pub certified: bool,
    pub lambda_min: f64,
    /// `⟨Q, X*ᵀX*⟩`; a lower bound on the optimum when certified.
    pub f_sdp: f64,
    pub f_rounded: f64,
    /// `(f(T) − f_SDP) / f_SDP`.
    pub suboptimality_bound: f64,
    pub total_iterations: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub report: SolveReport,
    pub poses: Vec<Pose>,
    pub x: LiftedState,
    pub logs: Vec<IterationLog>,
}

/// Certificate of a given estimate at rank `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub cost: f64,
    pub grad_norm: f64,
    pub eigen: EigenResult,
    pub eig_tol: f64,
    pub certified: bool,
    /// Step into rank `d + 1` along the minimum eigenvector, when not certified.
    pub escape: Option<EscapeRecord>,
}

/// Checks global optimality of `poses` through the minimum eigenvalue of `S(X)`.
pub fn certify_estimate(graph: &PoseGraph, poses: &[Pose], cfg: &SolveConfig) -> Result<CertificateCheck> {
    if poses.len() != graph.num_poses || poses.iter().any(|p| p.dim() != graph.dimension) {
        return Err(Error::Dimension(format!(
            "{} poses of dimension {} do not match a graph with {} poses in {}D",
            poses.len(),
            poses.first().map_or(0, Pose::dim),
            graph.num_poses,
            graph.dimension
        )));
    }
    let problem = Problem::new(graph)?;
    let x = LiftedState::from_poses(poses);
    let cost = problem.cost(&x.x);
    let grad_norm = ordered_sum(problem.grad_norms_sq(&x.x)).sqrt();
    let init = eig_start(&x, &cfg.power, cfg.seed);
    let eigen = CertifyBackend::min_eig(&problem, &x, &cfg.power, init.as_deref(), cfg.seed);
    let eig_tol = cfg.eig_tol.unwrap_or(1e-4 * (1.0 + eigen.dominant_value.abs()));
    let certified = eigen.value >= -eig_tol;
    let escape = if certified {
        None
    } else {
        Some(escape_saddle(&problem, &lift_rank(&x), &eigen.vector, cfg.local.grad_tol)?.1)
    };
    Ok(CertificateCheck { cost, grad_norm, eigen, eig_tol, certified, escape })
}

/// Initial poses for `method`.
pub fn initialize(graph: &PoseGraph, problem: &Problem, cfg: &SolveConfig) -> Result<Vec<Pose>> {
    match cfg.init {
        InitMethod::SpanningTree => init_spanning_tree(graph),
        InitMethod::Chordal => init_chordal(graph, &problem.part, cfg.chordal_sweeps),
        InitMethod::Random => Ok(init_random(graph, cfg.seed)),
    }
}

/// Initialization, staircase, rounding and the suboptimality bound.
pub fn solve(graph: &PoseGraph, cfg: &SolveConfig) -> Result<SolveOutcome> {
    let problem = Problem::new(graph)?;
    solve_problem(graph, &problem, cfg)
}

pub fn solve_problem<B: CertifyBackend + ?Sized>(graph: &PoseGraph, problem: &B, cfg: &SolveConfig) -> Result<SolveOutcome> {
    let start = Instant::now();
    cfg.local.validate()?;
    let d = graph.dimension;
    let (r0, _) = cfg.ranks(d)?;
    let t0 = problem.initial_poses(graph, cfg)?;
    let x0 = random_lift(&t0, r0, cfg.seed)?;
    let initial_cost = problem.cost(&x0.x);
    let st = staircase(problem, &x0, cfg)?;
    let poses = problem.round(&st.x)?;
    let f_sdp = problem.cost(&st.x.x);
    let f_rounded = problem.cost(&LiftedState::from_poses(&poses).x);
    let suboptimality_bound = if f_sdp > 0.0 { (f_rounded - f_sdp) / f_sdp } else { f_rounded - f_sdp };
    let last = st.ranks.last().expect("at least one rank");
    let report = SolveReport {
        dimension: d,
        num_poses: graph.num_poses,
        num_edges: graph.edges.len(),
        num_robots: problem.problem().part.num_robots,
        init: cfg.init,
        initial_cost,
        final_rank: st.x.r(),
        certified: st.certified,
        lambda_min: last.eigen.value,
        f_sdp,
        f_rounded,
        suboptimality_bound,
        total_iterations: st.ranks.iter().map(|r| r.iterations).sum(),
        wall_time: start.elapsed().as_secs_f64(),
        ranks: st.ranks,
    };
    Ok(SolveOutcome { report, poses, x: st.x, logs: st.logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::{simulate_grid, SimulationParams};

    fn grid(sigma: f64, seed: u64) -> (PoseGraph, Vec<Pose>) {
        let p = SimulationParams {
            dimension: 2,
            robots: 3,
            grid: vec![4, 4],
            loop_closure_prob: 0.5,
            sigma_r_deg: sigma,
            sigma_t: 0.05 * sigma / 3.0,
            seed,
            ..Default::default()
        };
        simulate_grid(&p).unwrap()
    }

    #[test]
    fn rank_defaults_and_validation() {
        let cfg = SolveConfig::default();
        assert_eq!(cfg.ranks(3).unwrap(), (4, 9));
        assert!(SolveConfig { r0: Some(1), ..Default::default() }.ranks(2).is_err());
        assert!(SolveConfig { r0: Some(5), r_max: Some(4), ..Default::default() }.ranks(3).is_err());
    }

    #[test]
    fn config_from_toml() {
        let c = SolveConfig::from_toml("init = \"spanning-tree\"\nr0 = 3\n[local]\ngrad_tol = 0.01\n").unwrap();
        assert_eq!(c.init, InitMethod::SpanningTree);
        assert_eq!(c.r0, Some(3));
        assert_eq!(c.local.grad_tol, 0.01);
        assert!(SolveConfig::from_toml("bogus = 1").is_err());
        assert!(SolveConfig::from_toml("[local]\ngrad_tol = -1.0").is_err());
    }

    #[test]
    fn exact_regime_certifies_at_first_rank() {
        let (g, _) = grid(3.0, 1);
        let o = solve(&g, &SolveConfig::default()).unwrap();
        assert!(o.report.certified);
        assert_eq!(o.report.ranks.len(), 1);
        assert!(o.report.suboptimality_bound <= 1e-4);
        for p in &o.poses {
            assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn staircase_costs_never_increase() {
        let (g, _) = grid(3.0, 2);
        let cfg = SolveConfig { init: InitMethod::Random, r0: Some(2), ..Default::default() };
        let o = solve(&g, &cfg).unwrap();
        let all: Vec<f64> = o.logs.iter().flat_map(|l| l.costs()).collect();
        assert!(all.windows(2).all(|w| w[1] <= w[0]));
        for r in &o.report.ranks {
            if let Some(e) = &r.escape {
                assert!(e.cost_after < e.cost_before && e.grad_norm > 0.0);
            }
        }
    }

    #[test]
    fn certify_estimate_accepts_optimum_and_rejects_noise() {
        let (g, _) = grid(3.0, 3);
        let cfg = SolveConfig::default();
        let o = solve(&g, &cfg).unwrap();
        let c = certify_estimate(&g, &o.poses, &cfg).unwrap();
        assert!(c.certified && c.escape.is_none());
        let random = crate::certify::init_random(&g, 4);
        let c = certify_estimate(&g, &random, &cfg).unwrap();
        assert!(!c.certified);
        let e = c.escape.unwrap();
        assert!(e.cost_after < e.cost_before);
        assert!(matches!(certify_estimate(&g, &random[1..], &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn lifting_preserves_cost() {
        let (g, _) = grid(3.0, 1);
        let problem = Problem::new(&g).unwrap();
        let x = random_lift(&init_spanning_tree(&g).unwrap(), 3, 0).unwrap();
        assert_eq!(problem.cost(&x.x), problem.cost(&lift_rank(&x).x));
    }

    #[test]
    fn perturbed_row_start() {
        let x = LiftedState::new(2, DMatrix::from_element(2, 6, 1.0));
        let cfg = PowerConfig { init: EigInit::PerturbedRow, ..Default::default() };
        let v = eig_start(&x, &cfg, 3).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.iter().all(|a| (a - 1.0).abs() < 1.0));
        assert!(eig_start(&x, &PowerConfig::default(), 3).is_none());
    }
}
