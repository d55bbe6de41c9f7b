//! Riemannian block-coordinate descent: trust-region block updates, block
//! selection, RBCD and the accelerated RBCD++ with restart.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::manifold::{inner, project_to_manifold, retract_raw, LiftedState, Tangent};
use crate::objective::{
    build_preconditioner, default_regularization, partitioned_cost, robot_grad_norm_sq, BlockStructure,
    Preconditioner, ReducedProblem,
};
use crate::posegraph::{partition, BlockPartition, ConnectionLaplacian, PoseGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Uniform,
    Importance,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restart {
    Adaptive { c1: f64 },
    Fixed { period: usize },
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcgConfig {
    pub max_inner: usize,
    pub kappa: f64,
    pub theta: f64,
}

impl Default for TcgConfig {
    fn default() -> Self {
        TcgConfig { max_inner: 100, kappa: 0.1, theta: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub selection: Selection,
    pub restart: Restart,
    /// Initial trust radius; `None` uses `10·‖grad f_b‖`.
    pub delta0: Option<f64>,
    pub rho_threshold: f64,
    pub tcg: TcgConfig,
    pub max_rejections: usize,
    pub precondition: bool,
    /// Update all robots of one color per iteration instead of a single robot.
    pub parallel: bool,
    pub check_period: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grad_tol: 1e-1,
            max_iters: 2000,
            selection: Selection::Greedy,
            restart: Restart::Adaptive { c1: 1e-4 },
            delta0: None,
            rho_threshold: 0.25,
            tcg: TcgConfig::default(),
            max_rejections: 30,
            precondition: true,
            parallel: true,
            check_period: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.grad_tol > 0.0) {
            return bad("gradient tolerance must be positive");
        }
        if let Restart::Adaptive { c1 } = self.restart {
            if !(c1 > 0.0) {
                return bad("restart constant c1 must be positive");
            }
        }
        if let Restart::Fixed { period } = self.restart {
            if period == 0 {
                return bad("fixed restart period must be positive");
            }
        }
        if let Some(d) = self.delta0 {
            if !(d > 0.0) {
                return bad("initial trust radius must be positive");
            }
        }
        if !(self.rho_threshold > 0.0 && self.rho_threshold < 1.0) {
            return bad("acceptance threshold must lie in (0,1)");
        }
        if self.check_period == 0 {
            return bad("termination check period must be positive");
        }
        Ok(())
    }
}

/// Connection Laplacian, partition, per-robot block data and cached preconditioners.
#[derive(Clone, Debug)]
pub struct Problem {
    pub q: ConnectionLaplacian,
    pub part: BlockPartition,
    pub blocks: Vec<BlockStructure>,
    pub precons: Vec<Preconditioner>,
}

impl Problem {
    pub fn new(graph: &PoseGraph) -> Result<Self> {
        Self::with_partition(crate::posegraph::build_connection_laplacian(graph), partition(graph))
    }

    pub fn with_partition(q: ConnectionLaplacian, part: BlockPartition) -> Result<Self> {
        let blocks = BlockStructure::all(&q, &part);
        let precons = blocks
            .iter()
            .map(|b| build_preconditioner(b.robot, &b.q_b, default_regularization(&b.q_b)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem { q, part, blocks, precons })
    }

    pub fn d(&self) -> usize {
        self.q.d
    }

    /// Selection units: colors in parallel mode, single robots otherwise.
    pub fn units(&self, parallel: bool) -> Vec<Vec<usize>> {
        if parallel {
            (0..self.part.num_colors).map(|c| self.part.robots_of_color(c)).collect()
        } else {
            (0..self.part.num_robots).map(|b| vec![b]).collect()
        }
    }

    pub fn cost(&self, x: &DMatrix<f64>) -> f64 {
        partitioned_cost(&self.q, x, &self.part)
    }

    pub fn robot_grad_norms_sq(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..self.part.num_robots).map(|b| robot_grad_norm_sq(&self.q, x, &self.part, b)).collect()
    }
}

/// Where the per-robot computations of local search run: in process
/// ([`Problem`]) or on simulated agents exchanging messages.
pub trait Backend {
    fn problem(&self) -> &Problem;
    /// Global cost, summed robot by robot in increasing id.
    fn cost(&self, x: &DMatrix<f64>) -> f64;
    /// Squared Riemannian gradient norm of every robot's block.
    fn grad_norms_sq(&self, x: &DMatrix<f64>) -> Vec<f64>;
    /// Block updates of `robots` against the frozen snapshot `base`.
    fn update(&self, base: &DMatrix<f64>, robots: &[usize], cfg: &SolverConfig) -> Result<DMatrix<f64>>;
}

impl Backend for Problem {
    fn problem(&self) -> &Problem {
        self
    }

    fn cost(&self, x: &DMatrix<f64>) -> f64 {
        Problem::cost(self, x)
    }

    fn grad_norms_sq(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.robot_grad_norms_sq(x)
    }

    fn update(&self, base: &DMatrix<f64>, robots: &[usize], cfg: &SolverConfig) -> Result<DMatrix<f64>> {
        update_robots(self, base, robots, cfg)
    }
}

/// Sum in index order.
pub fn ordered_sum(v: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TcgStop {
    Residual,
    NegativeCurvature,
    Boundary,
    MaxInner,
    Cauchy,
    ZeroGradient,
}

#[derive(Clone, Debug)]
pub struct TcgResult {
    pub eta: Tangent,
    pub h_eta: Tangent,
    /// `m(0) − m(η)`.
    pub model_decrease: f64,
    pub inner_iters: usize,
    pub stop: TcgStop,
}

fn boundary_step(eta: &Tangent, delta_dir: &Tangent, radius: f64) -> f64 {
    let a = inner(delta_dir, delta_dir);
    let b = 2.0 * inner(eta, delta_dir);
    let c = inner(eta, eta) - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    (-b + disc.sqrt()) / (2.0 * a)
}

/// Steihaug-Toint truncated CG on `m(η) = ⟨g,η⟩ + ½⟨η,H[η]⟩` within `‖η‖ ≤ Δ`.
/// The result is never worse than the Cauchy point.
pub fn tcg(
    g: &Tangent,
    hess: &dyn Fn(&Tangent) -> Tangent,
    precon: &dyn Fn(&Tangent) -> Tangent,
    radius: f64,
    cfg: &TcgConfig,
) -> TcgResult {
    let (rows, cols) = g.shape();
    let zero = DMatrix::zeros(rows, cols);
    let r0 = g.norm();
    if r0 == 0.0 {
        return TcgResult { eta: zero.clone(), h_eta: zero, model_decrease: 0.0, inner_iters: 0, stop: TcgStop::ZeroGradient };
    }
    let mut eta = zero.clone();
    let mut h_eta = zero;
    let mut r = g.clone();
    let mut z = precon(&r);
    let mut zr = inner(&z, &r);
    let mut dir = -&z;
    let mut stop = TcgStop::MaxInner;
    let mut iters = 0;
    let tol = r0 * r0.powf(cfg.theta).min(cfg.kappa);
    for _ in 0..cfg.max_inner {
        iters += 1;
        let hd = hess(&dir);
        let curv = inner(&dir, &hd);
        let alpha = zr / curv;
        let trial = &eta + &dir * alpha;
        if curv <= 0.0 || !alpha.is_finite() || trial.norm() >= radius {
            let tau = boundary_step(&eta, &dir, radius);
            eta += &dir * tau;
            h_eta += &hd * tau;
            stop = if curv <= 0.0 { TcgStop::NegativeCurvature } else { TcgStop::Boundary };
            break;
        }
        eta = trial;
        h_eta += &hd * alpha;
        r += &hd * alpha;
        if r.norm() <= tol {
            stop = TcgStop::Residual;
            break;
        }
        z = precon(&r);
        let zr_new = inner(&z, &r);
        let beta = zr_new / zr;
        zr = zr_new;
        dir = &dir * beta - &z;
    }
    let model = |e: &Tangent, he: &Tangent| inner(g, e) + 0.5 * inner(e, he);
    let m_cg = model(&eta, &h_eta);
    // Cauchy point along −g
    let hg = hess(g);
    let ghg = inner(g, &hg);
    let gg = r0 * r0;
    let ac = if ghg > 0.0 { (gg / ghg).min(radius / r0) } else { radius / r0 };
    let m_c = -ac * gg + 0.5 * ac * ac * ghg;
    if !m_cg.is_finite() || m_c < m_cg {
        return TcgResult { eta: g * (-ac), h_eta: hg * (-ac), model_decrease: -m_c, inner_iters: iters, stop: TcgStop::Cauchy };
    }
    TcgResult { eta, h_eta, model_decrease: -m_cg, inner_iters: iters, stop }
}

#[derive(Clone, Debug)]
pub struct BlockUpdateOutcome {
    pub x_b: DMatrix<f64>,
    pub accepted: bool,
    /// `f_b(old) − f_b(new)`, zero when not accepted.
    pub decrease: f64,
    pub model_decrease: f64,
    pub rho: f64,
    pub rejections: usize,
    pub grad_norm: f64,
    pub radius: f64,
}

/// One trust-region step on the reduced problem (shrinking the radius by 4
/// until `ρ` exceeds the threshold).
pub fn block_update(
    rp: &ReducedProblem,
    x_b: &DMatrix<f64>,
    precon: Option<&Preconditioner>,
    cfg: &SolverConfig,
) -> Result<BlockUpdateOutcome> {
    let d = rp.d;
    let g = rp.gradient(x_b);
    let gn = g.norm();
    let mut out = BlockUpdateOutcome {
        x_b: x_b.clone(),
        accepted: false,
        decrease: 0.0,
        model_decrease: 0.0,
        rho: 0.0,
        rejections: 0,
        grad_norm: gn,
        radius: 0.0,
    };
    if gn == 0.0 {
        return Ok(out);
    }
    if !gn.is_finite() {
        return Err(Error::Numerical("non-finite block gradient".into()));
    }
    let lambda = rp.lambda(x_b);
    let hess = |e: &Tangent| rp.hessian(x_b, &lambda, e);
    let pre = |e: &Tangent| match precon {
        Some(p) => p.apply(x_b, e, d),
        None => e.clone(),
    };
    let mut radius = cfg.delta0.unwrap_or(10.0 * gn);
    for attempt in 0..=cfg.max_rejections {
        let step = tcg(&g, &hess, &pre, radius, &cfg.tcg);
        if !step.model_decrease.is_finite() {
            return Err(Error::Numerical("non-finite model decrease in trust-region step".into()));
        }
        if step.model_decrease > 0.0 {
            if let Ok(x_new) = retract_raw(x_b, &step.eta, d) {
                let (change, noise) = cost_change_with_noise(rp, x_b, &x_new);
                let actual = -change;
                let rho = actual / step.model_decrease;
                if actual <= 0.0 && step.model_decrease <= noise {
                    // both decreases scale with the radius, so shrinking cannot resolve them
                    break;
                }
                if rho > cfg.rho_threshold && actual > 0.0 {
                    out.x_b = x_new;
                    out.accepted = true;
                    out.decrease = actual;
                    out.model_decrease = step.model_decrease;
                    out.rho = rho;
                    out.rejections = attempt;
                    out.radius = radius;
                    return Ok(out);
                }
            }
        }
        radius /= 4.0;
    }
    out.rejections = cfg.max_rejections + 1;
    Ok(out)
}

/// `f_b(new) − f_b(old)` as `⟨new − old, (new + old)Q_b⟩ + 2⟨F_b, new − old⟩`.
pub fn cost_change(rp: &ReducedProblem, old: &DMatrix<f64>, new: &DMatrix<f64>) -> f64 {
    cost_change_with_noise(rp, old, new).0
}

/// The cost change together with a bound on its rounding error.
fn cost_change_with_noise(rp: &ReducedProblem, old: &DMatrix<f64>, new: &DMatrix<f64>) -> (f64, f64) {
    let diff = new - old;
    let sum = new + old;
    let qs = rp.q_b.right_mul(&sum);
    let noise = 64.0 * f64::EPSILON * diff.norm() * (qs.norm() + 2.0 * rp.f_b.norm());
    (inner(&diff, &qs) + 2.0 * inner(&rp.f_b, &diff), noise)
}

/// Picks a block (or color) from squared gradient norms.
pub fn select(rule: Selection, norms_sq: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let n = norms_sq.len();
    match rule {
        Selection::Uniform => rng.random_range(0..n),
        Selection::Importance => {
            let total = ordered_sum(norms_sq.iter().copied());
            if !(total > 0.0) || !total.is_finite() {
                return rng.random_range(0..n);
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut last = 0;
            for (b, &w) in norms_sq.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    last = b;
                    if u < acc {
                        return b;
                    }
                }
            }
            last
        }
        Selection::Greedy => {
            let mut best = 0;
            for b in 1..n {
                if norms_sq[b] > norms_sq[best] {
                    best = b;
                }
            }
            best
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    /// Selected robot, or color in parallel mode (`None` for the initial record).
    pub unit: Option<usize>,
    pub cost: f64,
    pub grad_norm: Option<f64>,
    pub restart: bool,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub records: Vec<IterRecord>,
    pub converged: bool,
}

impl IterationLog {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    /// First iteration whose logged gradient norm is at most `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.records.iter().find(|r| r.grad_norm.is_some_and(|g| g <= tol)).map(|r| r.iter)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).unwrap());
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,unit,cost,grad_norm,restart,wall_time\n");
        for r in &self.records {
            let unit = r.unit.map(|u| u.to_string()).unwrap_or_default();
            let g = r.grad_norm.map(|g| format!("{g:.17e}")).unwrap_or_default();
            writeln!(s, "{},{},{:.17e},{},{},{:.6}", r.iter, unit, r.cost, g, r.restart as u8, r.wall_time).unwrap();
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct LocalSearchResult {
    pub x: LiftedState,
    pub log: IterationLog,
}

/// Block updates of `robots` against the frozen snapshot `base`, merged in robot order.
fn update_robots(problem: &Problem, base: &DMatrix<f64>, robots: &[usize], cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    let d = problem.d();
    let outcomes: Vec<Result<BlockUpdateOutcome>> = robots
        .par_iter()
        .map(|&b| {
            let bs = &problem.blocks[b];
            let rp = ReducedProblem::local(bs, base, d);
            let x_b = bs.gather(base);
            let pre = cfg.precondition.then(|| &problem.precons[b]);
            block_update(&rp, &x_b, pre, cfg)
        })
        .collect();
    let mut out = base.clone();
    for (&b, o) in robots.iter().zip(outcomes) {
        let o = o?;
        if o.accepted {
            problem.blocks[b].scatter(&o.x_b, &mut out);
        }
    }
    Ok(out)
}

/// Updates every robot of `color` concurrently against the snapshot `x`.
pub fn parallel_sweep(problem: &Problem, x: &LiftedState, color: usize, cfg: &SolverConfig) -> Result<LiftedState> {
    problem.part.check_coloring()?;
    let robots = problem.part.robots_of_color(color);
    Ok(LiftedState { d: x.d, x: update_robots(problem, &x.x, &robots, cfg)? })
}

/// `γ_k` from `γ_{k−1}` for `N` blocks.
pub fn next_gamma(gamma_prev: f64, n: usize) -> f64 {
    let n = n as f64;
    (1.0 + (1.0 + 4.0 * n * n * gamma_prev * gamma_prev).sqrt()) / (2.0 * n)
}

/// Riemannian block-coordinate descent.
pub fn rbcd<B: Backend + ?Sized>(problem: &B, x0: &LiftedState, cfg: &SolverConfig) -> Result<LocalSearchResult> {
    local_search(problem, x0, cfg, false)
}

/// Accelerated block-coordinate descent with restart.
pub fn rbcd_pp<B: Backend + ?Sized>(problem: &B, x0: &LiftedState, cfg: &SolverConfig) -> Result<LocalSearchResult> {
    local_search(problem, x0, cfg, true)
}

pub fn local_search<B: Backend + ?Sized>(
    backend: &B,
    x0: &LiftedState,
    cfg: &SolverConfig,
    accelerated: bool,
) -> Result<LocalSearchResult> {
    let problem = backend.problem();
    cfg.validate()?;
    if cfg.parallel {
        problem.part.check_coloring()?;
    }
    if x0.x.ncols() != problem.q.dim() {
        return Err(Error::Dimension("initial state does not match the problem".into()));
    }
    let d = problem.d();
    let start = Instant::now();
    let units = problem.units(cfg.parallel);
    let n_units = units.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x0.x.clone();
    let mut v = x.clone();
    let mut gamma = 0.0;
    let mut f = backend.cost(&x);
    let mut norms = backend.grad_norms_sq(&x);
    let mut gnorm = ordered_sum(norms.iter().copied()).sqrt();
    let mut log = IterationLog::default();
    log.records.push(IterRecord { iter: 0, unit: None, cost: f, grad_norm: Some(gnorm), restart: false, wall_time: 0.0 });
    let adaptive = matches!(cfg.restart, Restart::Adaptive { .. });
    for k in 0..cfg.max_iters {
        if k % cfg.check_period == 0 && gnorm <= cfg.grad_tol {
            log.converged = true;
            break;
        }
        let unit_norms: Vec<f64> = units.iter().map(|u| ordered_sum(u.iter().map(|&b| norms[b]))).collect();
        let u = select(cfg.selection, &unit_norms, &mut rng);
        let robots = &units[u];
        let mut restart = false;
        let (x_new, f_new) = if !accelerated {
            let xn = backend.update(&x, robots, cfg)?;
            let fnew = backend.cost(&xn);
            (xn, fnew)
        } else {
            gamma = next_gamma(gamma, n_units);
            let alpha = 1.0 / (gamma * n_units as f64);
            let blend = &x * (1.0 - alpha) + &v * alpha;
            let mut candidate = None;
            if let Ok(y) = project_to_manifold(&blend, d) {
                let xn = backend.update(&y, robots, cfg)?;
                let fnew = backend.cost(&xn);
                let keep = match cfg.restart {
                    Restart::Adaptive { c1 } => !(f - fnew < c1 * unit_norms[u]),
                    _ => fnew.is_finite(),
                };
                if keep {
                    candidate = Some((xn, fnew, y));
                }
            }
            match candidate {
                Some((xn, fnew, y)) => {
                    let periodic = matches!(cfg.restart, Restart::Fixed { period } if (k + 1) % period == 0);
                    if periodic {
                        restart = true;
                        v = xn.clone();
                        gamma = 0.0;
                    } else {
                        match project_to_manifold(&(&v + (&xn - &y) * gamma), d) {
                            Ok(vn) => v = vn,
                            Err(_) => {
                                restart = true;
                                v = xn.clone();
                                gamma = 0.0;
                            }
                        }
                    }
                    (xn, fnew)
                }
                None => {
                    restart = true;
                    let xn = backend.update(&x, robots, cfg)?;
                    let fnew = backend.cost(&xn);
                    v = xn.clone();
                    gamma = 0.0;
                    (xn, fnew)
                }
            }
        };
        if !f_new.is_finite() {
            return Err(Error::Numerical(format!("non-finite cost at iteration {}", k + 1)));
        }
        let monotone = !accelerated || adaptive;
        if monotone && f_new > f {
            // rounding-level increase: keep the current iterate
            v = x.clone();
            gamma = 0.0;
        } else {
            x = x_new;
            f = f_new;
        }
        norms = backend.grad_norms_sq(&x);
        gnorm = ordered_sum(norms.iter().copied()).sqrt();
        log.records.push(IterRecord {
            iter: k + 1,
            unit: Some(u),
            cost: f,
            grad_norm: Some(gnorm),
            restart,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    if !log.converged && gnorm <= cfg.grad_tol {
        log.converged = true;
    }
    Ok(LocalSearchResult { x: LiftedState { d, x }, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_picks_argmax_with_smallest_tie() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select(Selection::Greedy, &[0.0, 0.0, 5.0], &mut rng), 2);
        assert_eq!(select(Selection::Greedy, &[3.0, 1.0, 3.0], &mut rng), 0);
    }

    #[test]
    fn importance_with_zero_norms_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [0usize; 3];
        for _ in 0..300 {
            seen[select(Selection::Importance, &[0.0; 3], &mut rng)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 50));
    }

    #[test]
    fn first_gamma_gives_unit_alpha() {
        for n in 1..10 {
            let g = next_gamma(0.0, n);
            assert!((g - 1.0 / n as f64).abs() < 1e-15);
            assert!((1.0 / (g * n as f64) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tcg_exact_on_identity_hessian() {
        let g = DMatrix::from_fn(3, 4, |i, j| 1e-3 * (i as f64 - j as f64));
        let id = |e: &Tangent| e.clone();
        let res = tcg(&g, &id, &id, 1e6, &TcgConfig::default());
        assert!((&res.eta + &g).norm() <= 1e-10);
    }

    #[test]
    fn tcg_negative_curvature_hits_boundary() {
        let g = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64 + 1.0);
        let neg = |e: &Tangent| -e;
        let id = |e: &Tangent| e.clone();
        let res = tcg(&g, &neg, &id, 0.7, &TcgConfig::default());
        assert!((res.eta.norm() - 0.7).abs() < 1e-12);
    }
}
