use std::collections::{BTreeSet, VecDeque};

use super::PoseGraph;
use crate::error::{Error, Result};

/// Robot ownership of poses, public/private split, dependency graph and coloring.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    pub num_robots: usize,
    pub poses_of: Vec<Vec<usize>>,
    pub robot_of: Vec<usize>,
    /// Position of each pose inside its robot's sorted pose list.
    pub local_index: Vec<usize>,
    pub public: Vec<bool>,
    /// Sorted neighbor lists of the dependency graph.
    pub neighbors: Vec<Vec<usize>>,
    pub colors: Vec<usize>,
    pub num_colors: usize,
}

pub fn partition(graph: &PoseGraph) -> BlockPartition {
    let n = graph.num_poses;
    let num_robots = graph.num_robots();
    let mut poses_of = vec![Vec::new(); num_robots];
    let mut local_index = vec![0; n];
    for (i, &o) in graph.ownership.iter().enumerate() {
        local_index[i] = poses_of[o].len();
        poses_of[o].push(i);
    }
    let mut public = vec![false; n];
    let mut nb: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_robots];
    for e in &graph.edges {
        let (a, b) = (graph.ownership[e.i], graph.ownership[e.j]);
        if a != b {
            public[e.i] = true;
            public[e.j] = true;
            nb[a].insert(b);
            nb[b].insert(a);
        }
    }
    let neighbors: Vec<Vec<usize>> = nb.into_iter().map(|s| s.into_iter().collect()).collect();
    let colors = greedy_coloring(&neighbors);
    let num_colors = colors.iter().copied().max().map_or(0, |c| c + 1);
    BlockPartition {
        num_robots,
        poses_of,
        robot_of: graph.ownership.clone(),
        local_index,
        public,
        neighbors,
        colors,
        num_colors,
    }
}

/// Greedy coloring in order of descending degree, ties by smallest id.
pub(crate) fn greedy_coloring(neighbors: &[Vec<usize>]) -> Vec<usize> {
    let n = neighbors.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(neighbors[v].len()), v));
    let mut colors = vec![usize::MAX; n];
    for v in order {
        let used: BTreeSet<usize> = neighbors[v].iter().map(|&u| colors[u]).collect();
        colors[v] = (0..).find(|c| !used.contains(c)).unwrap();
    }
    colors
}

impl BlockPartition {
    pub fn num_poses(&self) -> usize {
        self.robot_of.len()
    }

    pub fn is_public(&self, pose: usize) -> bool {
        self.public[pose]
    }

    /// Public poses as sorted `(robot, pose)` pairs.
    pub fn public_poses(&self) -> Vec<(usize, usize)> {
        (0..self.num_poses()).filter(|&i| self.public[i]).map(|i| (self.robot_of[i], i)).collect()
    }

    pub fn dependency_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nb) in self.neighbors.iter().enumerate() {
            for &b in nb {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Robots of color `c` in increasing id order.
    pub fn robots_of_color(&self, c: usize) -> Vec<usize> {
        (0..self.num_robots).filter(|&r| self.colors[r] == c).collect()
    }

    /// Overrides the coloring (for experiments); the result is checked by [`Self::check_coloring`].
    pub fn with_colors(mut self, colors: Vec<usize>) -> Self {
        self.num_colors = colors.iter().copied().max().map_or(0, |c| c + 1);
        self.colors = colors;
        self
    }

    /// One color per robot: every iteration updates a single block.
    pub fn sequential(self) -> Self {
        let c = (0..self.num_robots).collect();
        self.with_colors(c)
    }

    pub fn check_coloring(&self) -> Result<()> {
        for (a, b) in self.dependency_edges() {
            if self.colors[a] == self.colors[b] {
                return Err(Error::Coloring(a, b));
            }
        }
        Ok(())
    }

    /// Hop distances in the dependency graph from `root`.
    pub fn hop_distances(&self, root: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_robots];
        let mut q = VecDeque::from([root]);
        dist[root] = 0;
        while let Some(u) = q.pop_front() {
            for &v in &self.neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Diameter of the dependency graph (0 for a single robot).
    pub fn diameter(&self) -> usize {
        (0..self.num_robots)
            .map(|r| self.hop_distances(r).into_iter().filter(|&d| d != usize::MAX).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// BFS parent of each robot in the dependency graph rooted at robot 0
    /// (`None` for the root). Children are visited in id order.
    pub fn bfs_parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.num_robots];
        let mut seen = vec![false; self.num_robots];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = q.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    q.push_back(v);
                }
            }
        }
        parent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k4_coloring_is_proper_and_distinct() {
        let nb: Vec<Vec<usize>> = (0..4).map(|v| (0..4).filter(|&u| u != v).collect()).collect();
        let c = greedy_coloring(&nb);
        let set: BTreeSet<usize> = c.iter().copied().collect();
        assert_eq!(set.len(), 4);
        assert!(c.iter().all(|&x| x < 4));
    }

    #[test]
    fn path_uses_two_colors() {
        // γ (robot 2) linked to α (0) and β (1)
        let nb = vec![vec![2], vec![2], vec![0, 1]];
        let c = greedy_coloring(&nb);
        assert_eq!(c, vec![1, 1, 0]);
    }
}
