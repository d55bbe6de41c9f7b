use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::objective::SymmetricOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigInit {
    /// Random unit vector.
    Random,
    /// A row of the candidate solution plus a random perturbation.
    PerturbedRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub dominant_tol: f64,
    pub dominant_max_iters: usize,
    /// Momentum in the second phase; `false` gives plain power iteration.
    pub accelerate: bool,
    pub init: EigInit,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            gamma: 0.999,
            tol: 1e-2,
            max_iters: 50_000,
            dominant_tol: 1e-6,
            dominant_max_iters: 5000,
            accelerate: true,
            init: EigInit::Random,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub value: f64,
    #[serde(skip)]
    pub vector: Vec<f64>,
    pub residual: f64,
    /// Operator applications in the second phase.
    pub iterations: usize,
    pub dominant_iterations: usize,
    pub dominant_value: f64,
    pub converged: bool,
}

/// Gaussian unit vector from `seed` (normalized with the operator's inner product).
pub fn random_unit(op: &dyn SymmetricOperator, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..op.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(op, &mut v);
    v
}

fn normalize(op: &dyn SymmetricOperator, v: &mut [f64]) -> f64 {
    let s = op.dot(v, v).sqrt();
    for x in v.iter_mut() {
        *x /= s;
    }
    s
}

/// `‖Sx − θx‖` for unit `x` with `θ = xᵀSx`; returns `(θ, residual)`.
pub fn ritz(op: &dyn SymmetricOperator, x: &[f64], sx: &[f64]) -> (f64, f64) {
    let theta = op.dot(x, sx);
    let r: Vec<f64> = sx.iter().zip(x).map(|(s, v)| s - theta * v).collect();
    (theta, op.dot(&r, &r).sqrt())
}

struct Dominant {
    value: f64,
    iterations: usize,
    vector: Vec<f64>,
    residual: f64,
}

/// Plain power iteration for the eigenvalue of largest magnitude. Stagnating
/// residuals (e.g. a ±λ pair) trigger up to two restarts; if that does not
/// help, `‖Sx‖` is used as the magnitude estimate.
fn dominant(op: &dyn SymmetricOperator, cfg: &PowerConfig, seed: u64) -> Dominant {
    const WINDOW: usize = 200;
    let n = op.dim();
    let mut total = 0;
    for restart in 0..3u64 {
        let mut x = random_unit(op, seed.wrapping_add(0x9e37_79b9 * (restart + 1)));
        let mut sx = vec![0.0; n];
        let mut history: Vec<f64> = Vec::new();
        let mut last = (0.0, f64::INFINITY, 0.0);
        let budget = cfg.dominant_max_iters.saturating_sub(total).max(1);
        for k in 0..budget {
            op.apply(&x, &mut sx);
            total += 1;
            let (theta, res) = ritz(op, &x, &sx);
            let norm = op.dot(&sx, &sx).sqrt();
            last = (theta, res, norm);
            if res <= cfg.dominant_tol * theta.abs() || norm == 0.0 {
                return Dominant { value: theta, iterations: total, vector: x, residual: res };
            }
            history.push(res);
            if k >= WINDOW && res > 0.99 * history[k - WINDOW] && restart < 2 {
                break;
            }
            for (xi, si) in x.iter_mut().zip(&sx) {
                *xi = si / norm;
            }
        }
        if total >= cfg.dominant_max_iters || restart == 2 {
            let (theta, res, norm) = last;
            let converged_like = res <= 1e-3 * theta.abs();
            let value = if converged_like { theta } else { norm };
            return Dominant { value, iterations: total, vector: x, residual: res };
        }
    }
    unreachable!()
}

/// Minimum eigenpair of `op`: power iteration for the dominant eigenvalue,
/// then accelerated power iteration on `λ_dom·I − S` with `β = γ²λ_dom²/4`.
pub fn min_eig(op: &dyn SymmetricOperator, cfg: &PowerConfig, init: Option<&[f64]>, seed: u64) -> EigenResult {
    let n = op.dim();
    let dom = dominant(op, cfg, seed);
    if dom.value < 0.0 {
        return EigenResult {
            value: dom.value,
            residual: dom.residual,
            converged: dom.residual <= cfg.tol,
            vector: dom.vector,
            iterations: 0,
            dominant_iterations: dom.iterations,
            dominant_value: dom.value,
        };
    }
    let lam = dom.value;
    let beta = if cfg.accelerate { cfg.gamma * cfg.gamma * lam * lam / 4.0 } else { 0.0 };
    let mut x = match init {
        Some(v) => {
            let mut v = v.to_vec();
            normalize(op, &mut v);
            v
        }
        None => random_unit(op, seed),
    };
    let mut prev = vec![0.0; n];
    let mut sx = vec![0.0; n];
    let mut iters = 0;
    let mut converged = false;
    let mut out = (0.0, f64::INFINITY);
    for _ in 0..cfg.max_iters {
        op.apply(&x, &mut sx);
        iters += 1;
        let (theta, res) = ritz(op, &x, &sx);
        out = (theta, res);
        if res <= cfg.tol {
            converged = true;
            break;
        }
        let mut y: Vec<f64> = (0..n).map(|i| lam * x[i] - sx[i] - beta * prev[i]).collect();
        let s = op.dot(&y, &y).sqrt();
        for i in 0..n {
            prev[i] = x[i] / s;
            y[i] /= s;
        }
        x = y;
    }
    EigenResult {
        value: out.0,
        vector: x,
        residual: out.1,
        iterations: iters,
        dominant_iterations: dom.iterations,
        dominant_value: lam,
        converged,
    }
}
