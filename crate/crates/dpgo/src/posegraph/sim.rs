use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::{exp_so, rot2, Pose, PoseGraph, RelativeMeasurement};
use crate::error::{Error, Result};

/// Smallest noise level used to derive precisions, so that noiseless
/// instances still carry finite weights.
const SIGMA_FLOOR: f64 = 1e-2;

/// Parameters of the multi-robot lawn-mower grid simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationParams {
    pub dimension: usize,
    pub robots: usize,
    /// Per-robot grid extent; only the first `dimension` entries are used.
    pub grid: Vec<usize>,
    pub spacing: f64,
    pub loop_closure_prob: f64,
    /// Candidate loop closures connect poses at most this many grid steps apart.
    pub closure_radius: f64,
    pub sigma_r_deg: f64,
    pub sigma_t: f64,
    pub seed: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            dimension: 3,
            robots: 9,
            grid: vec![5, 5, 5],
            spacing: 1.0,
            loop_closure_prob: 0.3,
            closure_radius: 1.0,
            sigma_r_deg: 3.0,
            sigma_t: 0.05,
            seed: 0,
        }
    }
}

impl SimulationParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parameter(format!("simulation config: {e}")))
    }

    pub fn poses_per_robot(&self) -> usize {
        self.grid.iter().take(self.dimension).product()
    }

    fn validate(&self) -> Result<()> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(Error::Parameter(format!("dimension {} not in {{2,3}}", self.dimension)));
        }
        if self.robots == 0 {
            return Err(Error::Parameter("zero robots".into()));
        }
        if self.grid.len() < self.dimension || self.poses_per_robot() == 0 {
            return Err(Error::Parameter("grid has zero poses".into()));
        }
        if !(0.0..=1.0).contains(&self.loop_closure_prob) {
            return Err(Error::Parameter("loop closure probability outside [0,1]".into()));
        }
        if !(self.sigma_r_deg >= 0.0 && self.sigma_t >= 0.0) {
            return Err(Error::Parameter("noise levels must be non-negative".into()));
        }
        if !(self.spacing > 0.0 && self.closure_radius >= 0.0) {
            return Err(Error::Parameter("spacing must be positive and radius non-negative".into()));
        }
        Ok(())
    }
}

fn lawn_mower(dims: &[usize]) -> Vec<[i64; 3]> {
    let gx = dims[0] as i64;
    let gy = dims[1] as i64;
    let gz = dims.get(2).copied().unwrap_or(1) as i64;
    let mut layer = Vec::new();
    for y in 0..gy {
        let xs: Vec<i64> = if y % 2 == 0 { (0..gx).collect() } else { (0..gx).rev().collect() };
        layer.extend(xs.into_iter().map(|x| (x, y)));
    }
    let mut out = Vec::new();
    for z in 0..gz {
        let it: Box<dyn Iterator<Item = &(i64, i64)>> =
            if z % 2 == 0 { Box::new(layer.iter()) } else { Box::new(layer.iter().rev()) };
        out.extend(it.map(|&(x, y)| [x, y, z]));
    }
    out
}

fn heading_rotation(d: usize, dir: [i64; 3]) -> DMatrix<f64> {
    use std::f64::consts::FRAC_PI_2;
    if d == 2 {
        return rot2((dir[1] as f64).atan2(dir[0] as f64));
    }
    match dir {
        [0, 0, 1] => exp_so(3, &[0.0, -FRAC_PI_2, 0.0]),
        [0, 0, -1] => exp_so(3, &[0.0, FRAC_PI_2, 0.0]),
        [x, y, _] => exp_so(3, &[0.0, 0.0, (y as f64).atan2(x as f64)]),
    }
}

/// Simulates `robots` lawn-mower trajectories in adjacent grid cells.
/// Returns the noisy graph (ownership = robot of each trajectory) and ground truth.
pub fn simulate_grid(params: &SimulationParams) -> Result<(PoseGraph, Vec<Pose>)> {
    params.validate()?;
    let d = params.dimension;
    let dims = &params.grid[..d];
    let path = lawn_mower(dims);
    let cols = (params.robots as f64).sqrt().ceil() as i64;
    let mut cells = Vec::new();
    let mut ownership = Vec::new();
    let mut truth = Vec::new();
    for k in 0..params.robots {
        let off = [(k as i64 % cols) * dims[0] as i64, (k as i64 / cols) * dims[1] as i64, 0];
        let pts: Vec<[i64; 3]> = path.iter().map(|p| [p[0] + off[0], p[1] + off[1], p[2]]).collect();
        for (s, p) in pts.iter().enumerate() {
            let dir = if pts.len() == 1 {
                [1, 0, 0]
            } else {
                let (a, b) = if s + 1 < pts.len() { (s, s + 1) } else { (s - 1, s) };
                [pts[b][0] - pts[a][0], pts[b][1] - pts[a][1], pts[b][2] - pts[a][2]]
            };
            let t: Vec<f64> = p[..d].iter().map(|&c| c as f64 * params.spacing).collect();
            truth.push(Pose { rotation: heading_rotation(d, dir), translation: DVector::from_vec(t) });
            ownership.push(k);
            cells.push(*p);
        }
    }
    let n = truth.len();
    let per = path.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for k in 0..params.robots {
        for s in 0..per.saturating_sub(1) {
            pairs.push((k * per + s, k * per + s + 1));
        }
    }
    let lookup: HashMap<[i64; 3], usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let reach = params.closure_radius.floor() as i64;
    let r2 = params.closure_radius * params.closure_radius + 1e-9;
    for a in 0..n {
        let mut cand = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in if d == 3 { -reach..=reach } else { 0..=0 } {
                    if ((dx * dx + dy * dy + dz * dz) as f64) > r2 {
                        continue;
                    }
                    let c = [cells[a][0] + dx, cells[a][1] + dy, cells[a][2] + dz];
                    if let Some(&b) = lookup.get(&c) {
                        let odometry = ownership[a] == ownership[b] && b == a + 1;
                        if b > a && !odometry {
                            cand.push(b);
                        }
                    }
                }
            }
        }
        cand.sort_unstable();
        for b in cand {
            if rng.random::<f64>() < params.loop_closure_prob {
                pairs.push((a, b));
            }
        }
    }

    let sigma_r = params.sigma_r_deg.to_radians();
    let kappa = 1.0 / (2.0 * sigma_r.max(SIGMA_FLOOR).powi(2));
    let tau = 1.0 / params.sigma_t.max(SIGMA_FLOOR).powi(2);
    let tangent_dim = if d == 2 { 1 } else { 3 };
    let mut edges = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let rel = truth[a].between(&truth[b]);
        let w: Vec<f64> = (0..tangent_dim).map(|_| sigma_r * rng.sample::<f64, _>(StandardNormal)).collect();
        let rotation = rel.rotation * exp_so(d, &w);
        let noise = DVector::from_fn(d, |_, _| params.sigma_t * rng.sample::<f64, _>(StandardNormal));
        edges.push(RelativeMeasurement {
            i: a,
            j: b,
            rotation,
            translation: rel.translation + noise,
            kappa,
            tau,
        });
    }
    let graph = PoseGraph::new(d, n, edges, ownership)?;
    Ok((graph, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sim_has_1125_poses() {
        let (g, truth) = simulate_grid(&SimulationParams::default()).unwrap();
        assert_eq!(g.num_poses, 1125);
        assert_eq!(truth.len(), 1125);
        assert_eq!(g.num_robots(), 9);
    }

    #[test]
    fn lawn_mower_steps_are_unit() {
        let p = lawn_mower(&[3, 4, 2]);
        assert_eq!(p.len(), 24);
        for w in p.windows(2) {
            let step: i64 = (0..3).map(|k| (w[1][k] - w[0][k]).abs()).sum();
            assert_eq!(step, 1);
        }
    }

    #[test]
    fn zero_robots_rejected() {
        let p = SimulationParams { robots: 0, ..Default::default() };
        assert!(matches!(simulate_grid(&p), Err(Error::Parameter(_))));
        let p = SimulationParams { grid: vec![0, 5, 5], ..Default::default() };
        assert!(matches!(simulate_grid(&p), Err(Error::Parameter(_))));
    }

    #[test]
    fn toml_config_round_trip() {
        let p = SimulationParams::from_toml("robots = 4\ngrid = [3, 3, 2]\nseed = 11\n").unwrap();
        assert_eq!((p.robots, p.seed, p.dimension), (4, 11, 3));
        assert!(SimulationParams::from_toml("bogus = 1").is_err());
    }
}
