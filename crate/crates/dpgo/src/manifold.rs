//! Geometry of `M_PGO(r,n) = (St(d,r) × ℝʳ)ⁿ` stored as `X = [Y₁ p₁ … Y_n p_n]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::posegraph::Pose;

/// A point on `M_PGO(r,n)`; also used for a single robot's block of poses.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedState {
    pub d: usize,
    pub x: DMatrix<f64>,
}

/// Tangent vectors share the ambient layout of their base point.
pub type Tangent = DMatrix<f64>;

impl LiftedState {
    pub fn new(d: usize, x: DMatrix<f64>) -> Self {
        assert_eq!(x.ncols() % (d + 1), 0, "column count is not a multiple of d+1");
        LiftedState { d, x }
    }

    pub fn r(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols() / (self.d + 1)
    }

    pub fn y(&self, i: usize) -> DMatrix<f64> {
        self.x.columns(i * (self.d + 1), self.d).into_owned()
    }

    pub fn p(&self, i: usize) -> DVector<f64> {
        self.x.column(i * (self.d + 1) + self.d).into_owned()
    }

    /// Largest `‖Y_iᵀY_i − I‖_F` over all blocks.
    pub fn stiefel_violation(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                let y = self.y(i);
                (y.transpose() * &y - DMatrix::<f64>::identity(self.d, self.d)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// The rank-`d` lift of a set of poses (`Y_i = R_i`, `p_i = t_i`).
    pub fn from_poses(poses: &[Pose]) -> Self {
        let d = poses[0].dim();
        let mut x = DMatrix::zeros(d, (d + 1) * poses.len());
        for (i, p) in poses.iter().enumerate() {
            x.columns_mut(i * (d + 1), d).copy_from(&p.rotation);
            x.column_mut(i * (d + 1) + d).copy_from(&p.translation);
        }
        LiftedState { d, x }
    }
}

/// Frobenius inner product.
#[inline]
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Closest matrix with orthonormal columns, `UVᵀ` from the thin SVD of `a`.
pub fn project_to_stiefel(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("Stiefel projection of a non-finite matrix".into()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin >= 1e-12 * smax) || smax == 0.0 || !smax.is_finite() {
        return Err(Error::Singular(format!("Stiefel projection of a matrix with σ_min/σ_max = {:e}", smin / smax)));
    }
    Ok(svd.u.unwrap() * svd.v_t.unwrap())
}

/// Closest rotation in SO(d) (determinant-corrected SVD).
pub fn project_to_rotation(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("rotation projection of a non-finite matrix".into()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(svd.singular_values.min() >= 1e-12 * smax) || smax == 0.0 {
        return Err(Error::Singular("rotation projection of a rank-deficient matrix".into()));
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = &u * &vt;
    if r.determinant() < 0.0 {
        let mut s = DMatrix::<f64>::identity(d, d);
        s[(d - 1, d - 1)] = -1.0;
        r = u * s * vt;
    }
    Ok(r)
}

#[inline]
fn sym_inplace(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `SymBlockDiag_d⁺(Z)`: symmetric parts of the upper-left `d×d` of every
/// `(d+1)` diagonal block, zero elsewhere. Returned as the list of blocks.
pub fn sym_block_diag_plus(z: &DMatrix<f64>, d: usize) -> Vec<DMatrix<f64>> {
    let n = z.nrows() / (d + 1);
    (0..n)
        .map(|i| {
            let mut b = z.view((i * (d + 1), i * (d + 1)), (d, d)).into_owned();
            sym_inplace(&mut b);
            b
        })
        .collect()
}

/// `sym(Y_iᵀU_i)` for pose `i`.
#[inline]
pub(crate) fn block_sym_product(x: &DMatrix<f64>, u: &DMatrix<f64>, d: usize, i: usize) -> DMatrix<f64> {
    let c = i * (d + 1);
    let mut s = x.columns(c, d).transpose() * u.columns(c, d);
    sym_inplace(&mut s);
    s
}

/// `U − X·SymBlockDiag_d⁺(XᵀU)`.
pub fn project_to_tangent(x: &LiftedState, u: &DMatrix<f64>) -> Tangent {
    project_raw(&x.x, u, x.d)
}

pub(crate) fn project_raw(x: &DMatrix<f64>, u: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    assert_eq!(x.shape(), u.shape(), "tangent projection shape mismatch");
    let mut out = u.clone();
    project_in_place(x, &mut out, d);
    out
}

pub(crate) fn project_in_place(x: &DMatrix<f64>, u: &mut DMatrix<f64>, d: usize) {
    let n = x.ncols() / (d + 1);
    for i in 0..n {
        let s = block_sym_product(x, u, d, i);
        let c = i * (d + 1);
        let corr = x.columns(c, d) * s;
        let mut cols = u.columns_mut(c, d);
        cols -= corr;
    }
}

/// Blockwise projection retraction.
pub fn retract(x: &LiftedState, eta: &Tangent) -> Result<LiftedState> {
    retract_raw(&x.x, eta, x.d).map(|m| LiftedState { d: x.d, x: m })
}

pub(crate) fn retract_raw(x: &DMatrix<f64>, eta: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let mut out = x + eta;
    let n = x.ncols() / (d + 1);
    for i in 0..n {
        let c = i * (d + 1);
        let y = project_to_stiefel(&out.columns(c, d).into_owned())?;
        out.columns_mut(c, d).copy_from(&y);
    }
    Ok(out)
}

/// Blockwise projection of an arbitrary ambient matrix onto the manifold.
pub fn project_to_manifold(x: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    retract_raw(x, &DMatrix::zeros(x.nrows(), x.ncols()), d)
}

/// Appends a zero row.
pub fn lift_rank(x: &LiftedState) -> LiftedState {
    let r = x.r();
    LiftedState { d: x.d, x: x.x.clone().insert_row(r, 0.0) }
}

/// Uniformly distributed point of St(d,r) (QR of a Gaussian matrix).
pub fn random_stiefel(r: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(r, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let q = qr.q();
    let rr = qr.r();
    let mut q = q.columns(0, d).into_owned();
    for j in 0..d {
        if rr[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c *= -1.0;
        }
    }
    q
}

/// `X = Y_rand·T` for a random `Y_rand ∈ St(d,r)`.
pub fn random_lift(poses: &[Pose], r: usize, seed: u64) -> Result<LiftedState> {
    let d = poses[0].dim();
    if r < d {
        return Err(Error::Parameter(format!("rank {r} below dimension {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = random_stiefel(r, d, &mut rng);
    Ok(lift_with(poses, &y))
}

/// `X = Y·T` for a given `Y ∈ St(d,r)`.
pub fn lift_with(poses: &[Pose], y: &DMatrix<f64>) -> LiftedState {
    let t = LiftedState::from_poses(poses);
    LiftedState { d: t.d, x: y * t.x }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn stiefel_projection_basic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_stiefel(5, 3, &mut rng);
        assert!((project_to_stiefel(&q).unwrap() - &q).norm() < 1e-12);
        let mut a = DMatrix::zeros(4, 2);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 2.0;
        let p = project_to_stiefel(&a).unwrap();
        assert!((p - a / 2.0).norm() < 1e-14);
        assert!(project_to_stiefel(&DMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn stiefel_projection_beats_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(5, 3, &mut rng);
        let p = project_to_stiefel(&a).unwrap();
        let best = (&p - &a).norm();
        for _ in 0..1000 {
            let w = random_stiefel(5, 3, &mut rng);
            assert!(best <= (&w - &a).norm() + 1e-12);
        }
    }

    #[test]
    fn normal_space_projects_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        let n = 4;
        let mut x = DMatrix::zeros(5, (d + 1) * n);
        for i in 0..n {
            x.columns_mut(i * 4, 3).copy_from(&random_stiefel(5, 3, &mut rng));
            x.column_mut(i * 4 + 3).copy_from(&rand_mat(5, 1, &mut rng));
        }
        let x = LiftedState::new(d, x);
        let mut s = DMatrix::zeros(4 * n, 4 * n);
        for i in 0..n {
            let b = rand_mat(3, 3, &mut rng);
            s.view_mut((i * 4, i * 4), (3, 3)).copy_from(&(&b + b.transpose()));
        }
        let u = &x.x * s;
        assert!(project_to_tangent(&x, &u).norm() < 1e-12);
    }

    #[test]
    fn lift_appends_zero_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = LiftedState::new(2, rand_mat(3, 9, &mut rng));
        let l = lift_rank(&x);
        assert_eq!(l.r(), 4);
        assert!(l.x.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_projection_has_positive_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = project_to_rotation(&rand_mat(3, 3, &mut rng)).unwrap();
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
