use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::manifold::{project_to_rotation, random_stiefel};
use crate::posegraph::{BlockPartition, Pose, PoseGraph};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    SpanningTree,
    #[default]
    Chordal,
    Random,
}

/// BFS tree rooted at pose 0 in level order: `(pose, parent, edge)` for every
/// pose but the root. Each pose hangs off its smallest-index neighbor on the
/// previous level, through the smallest-index edge between the two.
pub fn spanning_tree_plan(graph: &PoseGraph) -> Result<Vec<(usize, usize, usize)>> {
    let n = graph.num_poses;
    let adj = graph.adjacency();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut order = vec![0];
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Validation("pose graph is disconnected".into()));
    }
    order.sort_by_key(|&v| (level[v], v));
    Ok(order[1..]
        .iter()
        .map(|&v| {
            let (parent, edge) =
                adj[v].iter().filter(|&&(u, _)| level[u] + 1 == level[v]).min().copied().expect("BFS parent");
            (v, parent, edge)
        })
        .collect())
}

/// Pose of `v` from its tree parent's pose and the connecting edge.
pub fn tree_step(graph: &PoseGraph, parent_pose: &Pose, parent: usize, edge: usize) -> Pose {
    let e = &graph.edges[edge];
    let rel = if e.i == parent { e.as_pose() } else { e.as_pose().inverse() };
    parent_pose.compose(&rel)
}

/// Composes measurements along [`spanning_tree_plan`], with pose 0 at identity.
pub fn init_spanning_tree(graph: &PoseGraph) -> Result<Vec<Pose>> {
    let plan = spanning_tree_plan(graph)?;
    let mut poses: Vec<Option<Pose>> = vec![None; graph.num_poses];
    poses[0] = Some(Pose::identity(graph.dimension));
    for (v, parent, edge) in plan {
        poses[v] = Some(tree_step(graph, poses[parent].as_ref().unwrap(), parent, edge));
    }
    Ok(poses.into_iter().map(Option::unwrap).collect())
}

/// Random rotations and Gaussian translations, drawn in pose order from one stream.
pub fn init_random(graph: &PoseGraph, seed: u64) -> Vec<Pose> {
    let d = graph.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..graph.num_poses)
        .map(|_| {
            let mut r = random_stiefel(d, d, &mut rng);
            if r.determinant() < 0.0 {
                let mut c = r.column_mut(0);
                c *= -1.0;
            }
            let t = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            Pose { rotation: r, translation: t }
        })
        .collect()
}

/// One robot's share of a block Gauss-Seidel sweep on a symmetric system.
#[derive(Clone, Debug)]
pub struct GsBlock {
    pub robot: usize,
    /// Unknown variable indices owned by the robot.
    pub unknowns: Vec<usize>,
    chol: Option<EnvelopeCholesky>,
    /// Per unknown, off-block entries `(variable, value)` of its row.
    coupling: Vec<Vec<(usize, f64)>>,
}

impl GsBlock {
    fn new(l: &CsrMatrix, robot: usize, unknowns: Vec<usize>) -> Result<Self> {
        let mut pos = std::collections::HashMap::new();
        for (k, &u) in unknowns.iter().enumerate() {
            pos.insert(u, k);
        }
        let coupling = unknowns
            .iter()
            .map(|&u| {
                let (cols, vals) = l.row(u);
                cols.iter().zip(vals).filter(|(c, _)| !pos.contains_key(c)).map(|(&c, &v)| (c, v)).collect()
            })
            .collect();
        let chol = if unknowns.is_empty() {
            None
        } else {
            Some(EnvelopeCholesky::factor(&l.principal_submatrix(&unknowns), 0.0)?)
        };
        Ok(GsBlock { robot, unknowns, chol, coupling })
    }

    /// Exact solve for the block's unknowns with everything else held fixed.
    /// `z` is `rows × m` (one system per row); `rhs` has the same shape or is absent.
    pub fn solve(&self, z: &mut DMatrix<f64>, rhs: Option<&DMatrix<f64>>) {
        let Some(chol) = &self.chol else { return };
        for a in 0..z.nrows() {
            let mut b: Vec<f64> = self
                .unknowns
                .iter()
                .zip(&self.coupling)
                .map(|(&u, cpl)| {
                    let mut s = rhs.map_or(0.0, |r| r[(a, u)]);
                    for &(c, v) in cpl {
                        s -= v * z[(a, c)];
                    }
                    s
                })
                .collect();
            chol.solve_in_place(&mut b);
            for (&u, v) in self.unknowns.iter().zip(b) {
                z[(a, u)] = v;
            }
        }
    }
}

/// The two linear systems of chordal initialization, split by robot.
#[derive(Clone, Debug)]
pub struct ChordalSystem {
    pub d: usize,
    pub n: usize,
    pub anchor: usize,
    pub rotation: CsrMatrix,
    pub translation: CsrMatrix,
    pub rot_blocks: Vec<GsBlock>,
    pub trans_blocks: Vec<GsBlock>,
    /// Robot order of one sweep: colors in order, robots by id within a color.
    pub order: Vec<usize>,
}

impl ChordalSystem {
    pub fn new(graph: &PoseGraph, part: &BlockPartition) -> Result<Self> {
        let d = graph.dimension;
        let n = graph.num_poses;
        let anchor = part.poses_of[0][0];
        let mut rt = Vec::new();
        let mut tt = Vec::new();
        for e in &graph.edges {
            for a in 0..d {
                rt.push((e.i * d + a, e.i * d + a, e.kappa));
                rt.push((e.j * d + a, e.j * d + a, e.kappa));
                for b in 0..d {
                    // W_i R̃ ≈ W_j couples column a of W_i with column b of W_j through R̃[a,b]
                    rt.push((e.i * d + a, e.j * d + b, -e.kappa * e.rotation[(a, b)]));
                    rt.push((e.j * d + b, e.i * d + a, -e.kappa * e.rotation[(a, b)]));
                }
            }
            tt.push((e.i, e.i, e.tau));
            tt.push((e.j, e.j, e.tau));
            tt.push((e.i, e.j, -e.tau));
            tt.push((e.j, e.i, -e.tau));
        }
        let rotation = CsrMatrix::from_triplets(d * n, &rt);
        let translation = CsrMatrix::from_triplets(n, &tt);
        let mut rot_blocks = Vec::new();
        let mut trans_blocks = Vec::new();
        for (b, poses) in part.poses_of.iter().enumerate() {
            let free: Vec<usize> = poses.iter().copied().filter(|&i| i != anchor).collect();
            let rv = free.iter().flat_map(|&i| i * d..(i + 1) * d).collect();
            rot_blocks.push(GsBlock::new(&rotation, b, rv)?);
            trans_blocks.push(GsBlock::new(&translation, b, free)?);
        }
        let mut order: Vec<usize> = (0..part.num_robots).collect();
        order.sort_by_key(|&b| (part.colors[b], b));
        Ok(ChordalSystem { d, n, anchor, rotation, translation, rot_blocks, trans_blocks, order })
    }

    /// `W = [R₁ … R_n]` with the anchor at identity and all else zero.
    pub fn initial_rotations(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.d, self.d * self.n);
        w.columns_mut(self.anchor * self.d, self.d).fill_with_identity();
        w
    }

    /// Pose `i`'s relaxed rotation projected onto SO(d) (identity if degenerate).
    pub fn rotation_of(&self, w: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
        let d = self.d;
        project_to_rotation(&w.columns(i * d, d).into_owned()).unwrap_or_else(|_| DMatrix::identity(d, d))
    }

    /// Right-hand side of the translation system for the rotations `r`.
    pub fn translation_rhs(&self, graph: &PoseGraph, r: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.d, self.n);
        for e in &graph.edges {
            let c = &r[e.i] * &e.translation * e.tau;
            let mut cj = b.column_mut(e.j);
            cj += &c;
            let mut ci = b.column_mut(e.i);
            ci -= &c;
        }
        b
    }
}

/// Chordal relaxation solved by robot-block Gauss-Seidel: `sweeps` passes over
/// the rotation system, projection onto SO(d), then `sweeps` passes over the
/// translation system.
pub fn init_chordal(graph: &PoseGraph, part: &BlockPartition, sweeps: usize) -> Result<Vec<Pose>> {
    let sys = ChordalSystem::new(graph, part)?;
    let mut w = sys.initial_rotations();
    for _ in 0..sweeps {
        for &b in &sys.order {
            sys.rot_blocks[b].solve(&mut w, None);
        }
    }
    let rotations: Vec<DMatrix<f64>> = (0..sys.n).map(|i| sys.rotation_of(&w, i)).collect();
    let rhs = sys.translation_rhs(graph, &rotations);
    let mut t = DMatrix::zeros(sys.d, sys.n);
    for _ in 0..sweeps {
        for &b in &sys.order {
            sys.trans_blocks[b].solve(&mut t, Some(&rhs));
        }
    }
    Ok(rotations
        .into_iter()
        .enumerate()
        .map(|(i, r)| Pose { rotation: r, translation: t.column(i).into_owned() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::{partition, simulate_grid, SimulationParams};

    fn noiseless() -> (PoseGraph, Vec<Pose>) {
        let p = SimulationParams {
            robots: 4,
            grid: vec![3, 3, 2],
            sigma_r_deg: 0.0,
            sigma_t: 0.0,
            ..Default::default()
        };
        simulate_grid(&p).unwrap()
    }

    fn relative_error(graph: &PoseGraph, poses: &[Pose], truth: &[Pose]) -> f64 {
        graph
            .edges
            .iter()
            .map(|e| {
                let a = poses[e.i].between(&poses[e.j]);
                let b = truth[e.i].between(&truth[e.j]);
                (a.rotation - b.rotation).norm() + (a.translation - b.translation).norm()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn spanning_tree_exact_without_noise() {
        let (g, truth) = noiseless();
        let t = init_spanning_tree(&g).unwrap();
        assert!(relative_error(&g, &t, &truth) < 1e-9);
        assert!((t[0].rotation.clone() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn chordal_single_robot_is_exact() {
        let p = SimulationParams { robots: 1, grid: vec![3, 3, 2], sigma_r_deg: 0.0, sigma_t: 0.0, ..Default::default() };
        let (g, truth) = simulate_grid(&p).unwrap();
        let t = init_chordal(&g, &partition(&g), 1).unwrap();
        assert!(relative_error(&g, &t, &truth) < 1e-6);
    }

    #[test]
    fn chordal_sweeps_converge_to_noiseless_poses() {
        let (g, truth) = noiseless();
        let part = partition(&g);
        let errs: Vec<f64> =
            [10, 50, 1000].iter().map(|&s| relative_error(&g, &init_chordal(&g, &part, s).unwrap(), &truth)).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!(errs[2] < 1e-6, "{errs:?}");
    }

    #[test]
    fn random_init_is_on_so_d() {
        let (g, _) = noiseless();
        for p in init_random(&g, 3) {
            assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
