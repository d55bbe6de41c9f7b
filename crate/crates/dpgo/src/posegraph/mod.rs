//! Problem instances: measurement graphs, g2o ingestion, grid simulation,
//! robot partitioning and the connection Laplacian.

mod g2o;
mod laplacian;
mod partition;
mod sim;

pub use g2o::{parse_g2o, parse_g2o_with, parse_vertices, read_g2o_file, read_vertices_file, write_g2o, write_vertices, InfoReduction};
pub use laplacian::{build_connection_laplacian, expanded_cost, null_vector, ConnectionLaplacian};
pub use partition::{partition, BlockPartition};
pub use sim::{simulate_grid, SimulationParams};

use nalgebra::{DMatrix, DVector, Rotation2, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// A rigid transform in SE(d).
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl Pose {
    pub fn identity(d: usize) -> Self {
        Pose { rotation: DMatrix::identity(d, d), translation: DVector::zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: &self.rotation * &other.rotation,
            translation: &self.translation + &self.rotation * &other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        let t = -(&rt * &self.translation);
        Pose { rotation: rt, translation: t }
    }

    /// `self⁻¹ ∘ other`: the transform of `other` seen from `self`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }
}

/// Rotation in the plane by angle `theta`.
pub fn rot2(theta: f64) -> DMatrix<f64> {
    let r = Rotation2::new(theta);
    DMatrix::from_column_slice(2, 2, r.matrix().as_slice())
}

/// Rotation matrix of the axis-angle vector `w` (exponential map of so(d)).
/// For d = 2 only `w[0]` is used.
pub fn exp_so(d: usize, w: &[f64]) -> DMatrix<f64> {
    match d {
        2 => rot2(w[0]),
        3 => {
            let r = Rotation3::new(Vector3::new(w[0], w[1], w[2]));
            DMatrix::from_column_slice(3, 3, r.matrix().as_slice())
        }
        _ => panic!("unsupported dimension {d}"),
    }
}

/// One relative pose measurement `T̃_ij` with isotropic precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeMeasurement {
    pub i: usize,
    pub j: usize,
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    pub kappa: f64,
    pub tau: f64,
}

impl RelativeMeasurement {
    pub fn as_pose(&self) -> Pose {
        Pose { rotation: self.rotation.clone(), translation: self.translation.clone() }
    }
}

/// Directed measurement graph over `num_poses` poses, with robot ownership.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph {
    pub dimension: usize,
    pub num_poses: usize,
    pub edges: Vec<RelativeMeasurement>,
    pub ownership: Vec<usize>,
}

impl PoseGraph {
    /// Validates and builds a graph. Every robot id in `0..max+1` must own a pose.
    pub fn new(
        dimension: usize,
        num_poses: usize,
        edges: Vec<RelativeMeasurement>,
        ownership: Vec<usize>,
    ) -> Result<Self> {
        let g = PoseGraph { dimension, num_poses, edges, ownership };
        g.validate()?;
        Ok(g)
    }

    pub fn num_robots(&self) -> usize {
        self.ownership.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d != 2 && d != 3 {
            return Err(Error::Validation(format!("dimension {d} not in {{2,3}}")));
        }
        if self.num_poses == 0 {
            return Err(Error::Validation("graph has no poses".into()));
        }
        if self.ownership.len() != self.num_poses {
            return Err(Error::Validation(format!(
                "ownership covers {} poses, graph has {}",
                self.ownership.len(),
                self.num_poses
            )));
        }
        let mut owned = vec![false; self.num_robots()];
        for &o in &self.ownership {
            owned[o] = true;
        }
        if let Some(r) = owned.iter().position(|&x| !x) {
            return Err(Error::Validation(format!("robot {r} owns no poses")));
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.i >= self.num_poses || e.j >= self.num_poses {
                return Err(Error::Validation(format!("edge {k} references pose outside 0..{}", self.num_poses)));
            }
            if e.i == e.j {
                return Err(Error::Validation(format!("edge {k} is a self loop on pose {}", e.i)));
            }
            if e.rotation.shape() != (d, d) || e.translation.len() != d {
                return Err(Error::Validation(format!("edge {k} has wrong shape for d = {d}")));
            }
            let orth = (e.rotation.transpose() * &e.rotation - DMatrix::<f64>::identity(d, d)).norm();
            let det = e.rotation.determinant();
            if orth > 1e-9 || (det - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("edge {k} rotation is not in SO({d})")));
            }
            if !(e.kappa > 0.0 && e.tau > 0.0 && e.kappa.is_finite() && e.tau.is_finite()) {
                return Err(Error::Validation(format!("edge {k} has non-positive precision")));
            }
        }
        if !self.is_connected() {
            return Err(Error::Validation("underlying undirected graph is disconnected".into()));
        }
        Ok(())
    }

    /// Undirected adjacency lists: `(neighbor, edge index)` in edge order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.num_poses];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.i].push((e.j, k));
            adj[e.j].push((e.i, k));
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.num_poses == 0 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.num_poses];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = q.pop_front() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    q.push_back(v);
                }
            }
        }
        count == self.num_poses
    }

    /// Reassigns ownership to `robots` contiguous ranges of pose indices.
    pub fn with_contiguous_ownership(mut self, robots: usize) -> Result<Self> {
        if robots == 0 || robots > self.num_poses {
            return Err(Error::Parameter(format!(
                "cannot split {} poses among {robots} robots",
                self.num_poses
            )));
        }
        let n = self.num_poses;
        self.ownership = (0..n).map(|i| i * robots / n).collect();
        self.validate()?;
        Ok(self)
    }

    /// The PGO objective `Σ κ‖R_j − R_iR̃_ij‖² + τ‖t_j − t_i − R_it̃_ij‖²` at `poses`.
    pub fn cost(&self, poses: &[Pose]) -> f64 {
        let mut f = 0.0;
        for e in &self.edges {
            let (a, b) = (&poses[e.i], &poses[e.j]);
            let dr = &b.rotation - &a.rotation * &e.rotation;
            let dt = &b.translation - &a.translation - &a.rotation * &e.translation;
            f += e.kappa * dr.norm_squared() + e.tau * dt.norm_squared();
        }
        f
    }
}

/// Serializable pose record (row-major rotation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        PoseRecord {
            rotation: p.rotation.transpose().as_slice().to_vec(),
            translation: p.translation.as_slice().to_vec(),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Pose {
        let d = self.translation.len();
        Pose {
            rotation: DMatrix::from_row_slice(d, d, &self.rotation),
            translation: DVector::from_column_slice(&self.translation),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(i: usize, j: usize) -> RelativeMeasurement {
        RelativeMeasurement {
            i,
            j,
            rotation: rot2(0.1),
            translation: DVector::from_vec(vec![1.0, 0.0]),
            kappa: 1.0,
            tau: 1.0,
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = PoseGraph::new(2, 4, vec![edge(0, 1), edge(2, 3)], vec![0; 4]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn self_loop_is_rejected() {
        assert!(PoseGraph::new(2, 2, vec![edge(0, 1), edge(1, 1)], vec![0; 2]).is_err());
    }

    #[test]
    fn pose_algebra() {
        let a = Pose { rotation: rot2(0.3), translation: DVector::from_vec(vec![1.0, 2.0]) };
        let b = Pose { rotation: rot2(-1.1), translation: DVector::from_vec(vec![-0.5, 0.7]) };
        let back = a.compose(&a.between(&b));
        assert!((back.rotation - &b.rotation).norm() < 1e-14);
        assert!((back.translation - &b.translation).norm() < 1e-14);
    }

    #[test]
    fn contiguous_ownership_splits_evenly() {
        let edges = (0..9).map(|i| edge(i, i + 1)).collect();
        let g = PoseGraph::new(2, 10, edges, vec![0; 10]).unwrap().with_contiguous_ownership(3).unwrap();
        assert_eq!(g.ownership, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }
}
