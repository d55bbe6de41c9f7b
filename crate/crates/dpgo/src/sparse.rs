//! Compressed sparse row storage for the symmetric matrices used throughout
//! the solver, plus an envelope Cholesky factorization with reverse
//! Cuthill-McKee ordering.

use nalgebra::DMatrix;
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Square sparse matrix in CSR form with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles an `n × n` matrix. Duplicate entries are summed in input order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (i, j, v) = triplets[k];
            assert!(i < n && j < n, "triplet ({i},{j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.row_dot(i, x);
        }
    }

    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        let mut s = 0.0;
        for (&j, &a) in c.iter().zip(v) {
            s += a * x[j];
        }
        s
    }

    /// Column `j` of `X·A` for a symmetric `A`, written into `out` (length = rows of X).
    /// Only the columns of `X` in the sparsity pattern of row `j` are read.
    #[inline]
    pub fn right_mul_column(&self, x: &DMatrix<f64>, j: usize, out: &mut [f64]) {
        let r = x.nrows();
        let data = x.as_slice();
        out.iter_mut().for_each(|o| *o = 0.0);
        let (c, v) = self.row(j);
        for (&k, &a) in c.iter().zip(v) {
            let col = &data[k * r..(k + 1) * r];
            for (o, &xv) in out.iter_mut().zip(col) {
                *o += a * xv;
            }
        }
    }

    /// `X·A` for a symmetric `A`.
    pub fn right_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.n, "X·A: column count mismatch");
        let r = x.nrows();
        let mut out = DMatrix::zeros(r, self.n);
        for j in 0..self.n {
            let slot = &mut out.as_mut_slice()[j * r..(j + 1) * r];
            self.right_mul_column(x, j, slot);
        }
        out
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn principal_submatrix(&self, idx: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.n];
        for (l, &g) in idx.iter().enumerate() {
            local[g] = l;
        }
        let mut trip = Vec::new();
        for (l, &g) in idx.iter().enumerate() {
            let (c, v) = self.row(g);
            for (&k, &a) in c.iter().zip(v) {
                if local[k] != usize::MAX {
                    trip.push((l, local[k], a));
                }
            }
        }
        CsrMatrix::from_triplets(idx.len(), &trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] += a;
            }
        }
        m
    }

    /// Largest absolute asymmetry `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Reverse Cuthill-McKee ordering of the pattern of `a`. Returns `perm` with
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.iter().filter(|&&j| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, mark: &[bool]| -> (usize, usize) {
        // farthest node (smallest degree among the last level) and eccentricity
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut far = start;
        while let Some(u) = q.pop_front() {
            if dist[u] > dist[far] || (dist[u] == dist[far] && degree[u] < degree[far]) {
                far = u;
            }
            for &v in a.row(u).0 {
                if !mark[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        (far, dist[far])
    };
    while order.len() < n {
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).unwrap();
        // pseudo-peripheral start node
        let mut start = seed;
        let (mut far, mut ecc) = bfs_levels(start, &visited);
        for _ in 0..4 {
            let (f2, e2) = bfs_levels(far, &visited);
            if e2 <= ecc {
                break;
            }
            start = far;
            far = f2;
            ecc = e2;
        }
        let _ = far;
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a.row(u).0.iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                q.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor of `A + shift·I` stored by rows inside the envelope of the
/// reordered matrix.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix, shift: f64) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0usize; n];
        for i in 0..n {
            let old = perm[i];
            first[i] = a.row(old).0.iter().map(|&c| inv[c]).filter(|&c| c <= i).min().unwrap_or(i);
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut l = vec![0.0; start[n]];
        for i in 0..n {
            let old = perm[i];
            let (c, v) = a.row(old);
            for (&cj, &val) in c.iter().zip(v) {
                let j = inv[cj];
                if j <= i {
                    l[start[i] + j - first[i]] += val;
                }
            }
            l[start[i] + i - first[i]] += shift;
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = l[start[i] + j - fi];
                let ri = start[i] + k0 - fi;
                let rj = start[j] + k0 - fj;
                for k in 0..(j - k0) {
                    s -= l[ri + k] * l[rj + k];
                }
                if j < i {
                    s /= l[start[j] + j - fj];
                    l[start[i] + j - fi] = s;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "Cholesky pivot {s:e} at row {i} is not positive"
                        )));
                    }
                    l[start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(EnvelopeCholesky { n, perm, first, start, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.l.len()
    }

    /// Solves `(A + shift·I) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (k, &lv) in row[..i - fi].iter().enumerate() {
                s -= lv * y[fi + k];
            }
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let xi = y[i] / row[i - fi];
            y[i] = xi;
            for (k, &lv) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= lv * xi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 1.0));
            for _ in 0..2 {
                let j = rng.random_range(0..n);
                if j != i {
                    let w: f64 = rng.random_range(0.1..2.0);
                    trip.push((i, i, w));
                    trip.push((j, j, w));
                    trip.push((i, j, -w));
                    trip.push((j, i, -w));
                }
            }
        }
        CsrMatrix::from_triplets(n, &trip)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, &[(0, 1, 1.0), (0, 1, 2.5), (1, 0, 3.5)]);
        assert_eq!(a.get(0, 1), 3.5);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn right_mul_matches_dense() {
        let a = random_spd(30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(4, 30, |_, _| rng.random_range(-1.0..1.0));
        let diff = (a.right_mul(&x) - &x * a.to_dense()).norm();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = random_spd(57, 1);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort();
        assert_eq!(p, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn envelope_cholesky_solves_against_dense() {
        for seed in 0..5 {
            let a = random_spd(40, seed);
            let chol = EnvelopeCholesky::factor(&a, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut x = b.clone();
            chol.solve_in_place(&mut x);
            let dense = a.to_dense() + DMatrix::identity(40, 40) * 0.1;
            let ax = &dense * nalgebra::DVector::from_vec(x);
            let err = (ax - nalgebra::DVector::from_vec(b)).norm();
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(EnvelopeCholesky::factor(&a, 0.0).is_err());
    }
}
