//! Cost, derivatives, reduced block problems, certificate operator and
//! preconditioner for the rank-restricted problem `min ⟨Q, XᵀX⟩` over `M_PGO(r,n)`.

use nalgebra::DMatrix;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::manifold::{block_sym_product, inner, project_in_place, LiftedState, Tangent};
use crate::posegraph::{BlockPartition, ConnectionLaplacian};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

fn check_dims(q: &ConnectionLaplacian, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != q.dim() {
        return Err(Error::Dimension(format!("X has {} columns, Q has dimension {}", x.ncols(), q.dim())));
    }
    Ok(())
}

/// `⟨Q, XᵀX⟩ = Σ_c ⟨X_c, (XQ)_c⟩` over columns in index order.
pub fn cost(q: &ConnectionLaplacian, x: &LiftedState) -> Result<f64> {
    check_dims(q, &x.x)?;
    Ok(columns_cost(&q.matrix, &x.x, 0..q.dim()))
}

/// `Σ_{c ∈ cols} ⟨X_c, (XQ)_c⟩`; reads only the columns coupled to `cols`.
pub fn columns_cost(q: &CsrMatrix, x: &DMatrix<f64>, cols: impl IntoIterator<Item = usize>) -> f64 {
    let r = x.nrows();
    let mut buf = vec![0.0; r];
    let mut total = 0.0;
    for c in cols {
        q.right_mul_column(x, c, &mut buf);
        let xc = &x.as_slice()[c * r..(c + 1) * r];
        let s: f64 = xc.iter().zip(&buf).map(|(a, b)| a * b).sum();
        total += s;
    }
    total
}

/// Per-robot partial cost: the contribution of the columns of `robot`'s poses.
pub fn robot_cost(q: &ConnectionLaplacian, x: &DMatrix<f64>, part: &BlockPartition, robot: usize) -> f64 {
    let k = q.d + 1;
    columns_cost(&q.matrix, x, part.poses_of[robot].iter().flat_map(|&i| i * k..(i + 1) * k))
}

/// Cost summed robot by robot in increasing robot id.
pub fn partitioned_cost(q: &ConnectionLaplacian, x: &DMatrix<f64>, part: &BlockPartition) -> f64 {
    let mut total = 0.0;
    for b in 0..part.num_robots {
        total += robot_cost(q, x, part, b);
    }
    total
}

/// `2XQ`.
pub fn euclidean_gradient(q: &ConnectionLaplacian, x: &LiftedState) -> DMatrix<f64> {
    q.matrix.right_mul(&x.x) * 2.0
}

/// Tangent projection of `2XQ`.
pub fn riemannian_gradient(q: &ConnectionLaplacian, x: &LiftedState) -> Tangent {
    let mut g = euclidean_gradient(q, x);
    project_in_place(&x.x, &mut g, x.d);
    g
}

/// Riemannian gradient restricted to `poses` (columns in pose order), computed
/// from the columns of `X` coupled to those poses only.
pub fn poses_gradient(q: &ConnectionLaplacian, x: &DMatrix<f64>, poses: &[usize]) -> DMatrix<f64> {
    let d = q.d;
    let k = d + 1;
    let r = x.nrows();
    let mut g = DMatrix::zeros(r, k * poses.len());
    let mut xs = DMatrix::zeros(r, k * poses.len());
    for (l, &i) in poses.iter().enumerate() {
        for a in 0..k {
            let slot = &mut g.as_mut_slice()[(l * k + a) * r..(l * k + a + 1) * r];
            q.matrix.right_mul_column(x, i * k + a, slot);
        }
        xs.columns_mut(l * k, k).copy_from(&x.columns(i * k, k));
    }
    g *= 2.0;
    project_in_place(&xs, &mut g, d);
    g
}

/// Squared norm of the Riemannian gradient on one robot's poses.
pub fn robot_grad_norm_sq(q: &ConnectionLaplacian, x: &DMatrix<f64>, part: &BlockPartition, robot: usize) -> f64 {
    let g = poses_gradient(q, x, &part.poses_of[robot]);
    inner(&g, &g)
}

/// `Λ_i = sym(Y_iᵀ (XQ)_{Y_i})`, the diagonal blocks of `SymBlockDiag_d⁺(XᵀXQ)`.
pub fn lagrange_blocks(q: &ConnectionLaplacian, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let xq = q.matrix.right_mul(x);
    (0..q.n).map(|i| block_sym_product(x, &xq, q.d, i)).collect()
}

/// `U − U·Λ` applied blockwise to the rotation columns.
fn subtract_lambda(u: &DMatrix<f64>, out: &mut DMatrix<f64>, lambda: &[DMatrix<f64>], d: usize) {
    for (i, l) in lambda.iter().enumerate() {
        let c = i * (d + 1);
        let corr = u.columns(c, d) * l;
        let mut cols = out.columns_mut(c, d);
        cols -= corr;
    }
}

/// `Hess f(X)[η] = 2·proj(η·S(X))`.
pub fn hessian_vec(q: &ConnectionLaplacian, x: &LiftedState, eta: &Tangent) -> Tangent {
    let lambda = lagrange_blocks(q, &x.x);
    hessian_with(&q.matrix, &x.x, &lambda, eta, x.d)
}

fn hessian_with(q: &CsrMatrix, x: &DMatrix<f64>, lambda: &[DMatrix<f64>], eta: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut h = q.right_mul(eta);
    subtract_lambda(eta, &mut h, lambda, d);
    h *= 2.0;
    project_in_place(x, &mut h, d);
    h
}

/// Per-robot columns, the principal block of `Q`, and the couplings to other
/// robots' columns. Independent of `X` and of the rank.
#[derive(Clone, Debug)]
pub struct BlockStructure {
    pub robot: usize,
    pub poses: Vec<usize>,
    pub cols: Vec<usize>,
    pub q_b: Arc<CsrMatrix>,
    /// For each local column: `(global column, Q entry)` outside the block, in CSR order.
    pub coupling: Vec<Vec<(usize, f64)>>,
}

impl BlockStructure {
    pub fn new(q: &ConnectionLaplacian, part: &BlockPartition, robot: usize) -> Self {
        let k = q.d + 1;
        let poses = part.poses_of[robot].clone();
        let cols: Vec<usize> = poses.iter().flat_map(|&i| i * k..(i + 1) * k).collect();
        let q_b = Arc::new(q.matrix.principal_submatrix(&cols));
        let coupling = cols
            .iter()
            .map(|&c| {
                let (cc, vv) = q.matrix.row(c);
                cc.iter()
                    .zip(vv)
                    .filter(|(&g, _)| part.robot_of[g / k] != robot)
                    .map(|(&g, &v)| (g, v))
                    .collect()
            })
            .collect();
        BlockStructure { robot, poses, cols, q_b, coupling }
    }

    pub fn all(q: &ConnectionLaplacian, part: &BlockPartition) -> Vec<BlockStructure> {
        (0..part.num_robots).map(|b| BlockStructure::new(q, part, b)).collect()
    }

    /// Extracts `X_b` from a full matrix.
    pub fn gather(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let r = x.nrows();
        let mut out = DMatrix::zeros(r, self.cols.len());
        for (l, &c) in self.cols.iter().enumerate() {
            out.column_mut(l).copy_from(&x.column(c));
        }
        out
    }

    /// Writes `X_b` back into a full matrix.
    pub fn scatter(&self, x_b: &DMatrix<f64>, x: &mut DMatrix<f64>) {
        for (l, &c) in self.cols.iter().enumerate() {
            x.column_mut(c).copy_from(&x_b.column(l));
        }
    }

    /// `F_b = X_{¬b}·Q_{¬b,b}`, reading only the coupled columns.
    pub fn linear_term(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let r = x.nrows();
        let data = x.as_slice();
        let mut f = DMatrix::zeros(r, self.cols.len());
        for (l, coup) in self.coupling.iter().enumerate() {
            let out = &mut f.as_mut_slice()[l * r..(l + 1) * r];
            for &(g, v) in coup {
                for (o, &xv) in out.iter_mut().zip(&data[g * r..(g + 1) * r]) {
                    *o += v * xv;
                }
            }
        }
        f
    }
}

/// `f_b(X_b) = ⟨Q_b, X_bᵀX_b⟩ + 2⟨F_b, X_b⟩ + constant`.
#[derive(Clone, Debug)]
pub struct ReducedProblem {
    pub block: usize,
    pub d: usize,
    pub q_b: Arc<CsrMatrix>,
    pub f_b: DMatrix<f64>,
    pub constant: f64,
}

/// Reduced problem of robot `b` with all other blocks frozen at `X`.
pub fn reduce(q: &ConnectionLaplacian, x: &LiftedState, part: &BlockPartition, b: usize) -> ReducedProblem {
    let bs = BlockStructure::new(q, part, b);
    let mut rp = ReducedProblem::local(&bs, &x.x, q.d);
    let k = q.d + 1;
    let others = (0..q.n).filter(|&i| part.robot_of[i] != b).flat_map(|i| i * k..(i + 1) * k);
    // ⟨Q_{¬b¬b}, X_{¬b}ᵀX_{¬b}⟩ with the block columns masked out
    let mut masked = x.x.clone();
    for &c in &bs.cols {
        masked.column_mut(c).fill(0.0);
    }
    rp.constant = columns_cost(&q.matrix, &masked, others);
    rp
}

impl ReducedProblem {
    /// Reduced problem without the constant (which needs the whole graph).
    pub fn local(bs: &BlockStructure, x: &DMatrix<f64>, d: usize) -> Self {
        ReducedProblem { block: bs.robot, d, q_b: bs.q_b.clone(), f_b: bs.linear_term(x), constant: 0.0 }
    }

    /// `X_bQ_b + F_b`, i.e. the block columns of `XQ`.
    pub fn xq(&self, x_b: &DMatrix<f64>) -> DMatrix<f64> {
        self.q_b.right_mul(x_b) + &self.f_b
    }

    pub fn cost(&self, x_b: &DMatrix<f64>) -> f64 {
        let qx = self.q_b.right_mul(x_b);
        inner(x_b, &qx) + 2.0 * inner(&self.f_b, x_b) + self.constant
    }

    pub fn euclidean_gradient(&self, x_b: &DMatrix<f64>) -> DMatrix<f64> {
        self.xq(x_b) * 2.0
    }

    pub fn gradient(&self, x_b: &DMatrix<f64>) -> Tangent {
        let mut g = self.euclidean_gradient(x_b);
        project_in_place(x_b, &mut g, self.d);
        g
    }

    pub fn lambda(&self, x_b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let xq = self.xq(x_b);
        let n = x_b.ncols() / (self.d + 1);
        (0..n).map(|i| block_sym_product(x_b, &xq, self.d, i)).collect()
    }

    /// Riemannian Hessian of `f_b` at `x_b` given `lambda = self.lambda(x_b)`.
    pub fn hessian(&self, x_b: &DMatrix<f64>, lambda: &[DMatrix<f64>], eta: &DMatrix<f64>) -> Tangent {
        hessian_with(&self.q_b, x_b, lambda, eta, self.d)
    }
}

/// `P[η] = proj(η·(Q_b + λI)⁻¹)` with a cached envelope Cholesky factor.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    pub block: usize,
    pub lambda: f64,
    chol: EnvelopeCholesky,
}

/// Default regularization `1e-3·mean diag(Q_b)`.
pub fn default_regularization(q_b: &CsrMatrix) -> f64 {
    let diag = q_b.diagonal();
    1e-3 * diag.iter().sum::<f64>() / diag.len().max(1) as f64
}

pub fn build_preconditioner(block: usize, q_b: &CsrMatrix, lambda: f64) -> Result<Preconditioner> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("preconditioner regularization {lambda} must be positive")));
    }
    let chol = EnvelopeCholesky::factor(q_b, lambda)?;
    Ok(Preconditioner { block, lambda, chol })
}

impl Preconditioner {
    /// `η·(Q_b + λI)⁻¹` without the tangent projection.
    pub fn solve(&self, eta: &DMatrix<f64>) -> DMatrix<f64> {
        let (r, c) = eta.shape();
        let mut out = DMatrix::zeros(r, c);
        let mut row = vec![0.0; c];
        for a in 0..r {
            for (j, v) in row.iter_mut().enumerate() {
                *v = eta[(a, j)];
            }
            self.chol.solve_in_place(&mut row);
            for (j, v) in row.iter().enumerate() {
                out[(a, j)] = *v;
            }
        }
        out
    }

    pub fn apply(&self, x_b: &DMatrix<f64>, eta: &DMatrix<f64>, d: usize) -> Tangent {
        let mut z = self.solve(eta);
        project_in_place(x_b, &mut z, d);
        z
    }
}

/// Symmetric operator with a caller-defined inner product order.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// Matrix-free `S(X) = Q − Λ(X)`.
#[derive(Clone, Debug)]
pub struct CertificateOperator<'a> {
    pub q: &'a ConnectionLaplacian,
    pub lambda: Vec<DMatrix<f64>>,
    /// Coordinate groups summed separately (in order) by [`SymmetricOperator::dot`].
    groups: Option<Vec<Vec<usize>>>,
}

pub fn certificate<'a>(q: &'a ConnectionLaplacian, x: &LiftedState) -> CertificateOperator<'a> {
    CertificateOperator { q, lambda: lagrange_blocks(q, &x.x), groups: None }
}

impl<'a> CertificateOperator<'a> {
    pub fn from_lambda(q: &'a ConnectionLaplacian, lambda: Vec<DMatrix<f64>>) -> Self {
        CertificateOperator { q, lambda, groups: None }
    }

    /// Reductions become per-robot partial sums added in robot order.
    pub fn with_partition(mut self, part: &BlockPartition) -> Self {
        let k = self.q.d + 1;
        self.groups = Some(
            part.poses_of.iter().map(|ps| ps.iter().flat_map(|&i| i * k..(i + 1) * k).collect()).collect(),
        );
        self
    }

    /// `(S w)_c` for one coordinate.
    #[inline]
    pub fn apply_row(&self, w: &[f64], c: usize) -> f64 {
        let d = self.q.d;
        let k = d + 1;
        let mut s = self.q.matrix.row_dot(c, w);
        let (i, a) = (c / k, c % k);
        if a < d {
            let l = &self.lambda[i];
            for b in 0..d {
                s -= l[(a, b)] * w[i * k + b];
            }
        }
        s
    }

    /// `W·S` for an `r × (d+1)n` matrix.
    pub fn apply_matrix(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.q.matrix.right_mul(w);
        subtract_lambda(w, &mut out, &self.lambda, self.q.d);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.q.d;
        let mut s = self.q.matrix.to_dense();
        for (i, l) in self.lambda.iter().enumerate() {
            let mut v = s.view_mut((i * (d + 1), i * (d + 1)), (d, d));
            v -= l;
        }
        s
    }
}

impl SymmetricOperator for CertificateOperator<'_> {
    fn dim(&self) -> usize {
        self.q.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (c, yc) in y.iter_mut().enumerate() {
            *yc = self.apply_row(x, c);
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.groups {
            None => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Some(groups) => {
                let mut total = 0.0;
                for g in groups {
                    let mut s = 0.0;
                    for &c in g {
                        s += a[c] * b[c];
                    }
                    total += s;
                }
                total
            }
        }
    }
}

/// Dense symmetric matrix as an operator (oracles and experiments).
pub struct DenseOperator(pub DMatrix<f64>);

impl SymmetricOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.nrows();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..n {
                s += self.0[(i, j)] * x[j];
            }
            *yi = s;
        }
    }
}
