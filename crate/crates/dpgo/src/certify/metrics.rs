use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{project_to_rotation, LiftedState};
use crate::posegraph::Pose;

/// Rounds a lifted solution to SE(d)ⁿ in the frame of the first pose:
/// `R_i = proj_SO(Y₁ᵀY_i)`, `t_i = Y₁ᵀp_i`.
pub fn round_solution(x: &LiftedState) -> Result<Vec<Pose>> {
    let y1t = x.y(0).transpose();
    (0..x.n()).map(|i| round_pose(&y1t, x, i)).collect()
}

/// Pose `i` of the rounded solution given `Y₁ᵀ`.
pub fn round_pose(y1t: &DMatrix<f64>, x: &LiftedState, i: usize) -> Result<Pose> {
    Ok(Pose { rotation: project_to_rotation(&(y1t * x.y(i)))?, translation: y1t * x.p(i) })
}

/// Rotation `G ∈ SO(d)` maximizing `tr(Gᵀm)`; also defined for rank-deficient `m`.
fn nearest_rotation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut s = DMatrix::<f64>::identity(d, d);
    if (&u * &vt).determinant() < 0.0 {
        s[(d - 1, d - 1)] = -1.0;
    }
    u * s * vt
}

/// Error of an estimate against a reference, after gauge alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `min_G (Σ‖G R_i − R'_i‖²)^½` over `G ∈ SO(d)`.
    pub rotation_orbit_distance: f64,
    /// Position RMSE after rigid (Kabsch) alignment.
    pub translation_rmse: f64,
}

fn check(est: &[Pose], reference: &[Pose]) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::Dimension(format!("{} estimated poses vs {} reference poses", est.len(), reference.len())));
    }
    Ok(())
}

pub fn rotation_orbit_distance(est: &[Pose], reference: &[Pose]) -> Result<f64> {
    check(est, reference)?;
    let d = est[0].dim();
    let mut m = DMatrix::zeros(d, d);
    for (a, b) in est.iter().zip(reference) {
        m += &b.rotation * a.rotation.transpose();
    }
    let g = nearest_rotation(&m);
    let s: f64 = est.iter().zip(reference).map(|(a, b)| (&g * &a.rotation - &b.rotation).norm_squared()).sum();
    Ok(s.sqrt())
}

pub fn translation_rmse(est: &[Pose], reference: &[Pose]) -> Result<f64> {
    check(est, reference)?;
    let d = est[0].dim();
    let n = est.len() as f64;
    let ca = est.iter().fold(DVector::zeros(d), |s, p| s + &p.translation) / n;
    let cb = reference.iter().fold(DVector::zeros(d), |s, p| s + &p.translation) / n;
    let mut h = DMatrix::zeros(d, d);
    for (a, b) in est.iter().zip(reference) {
        h += (&b.translation - &cb) * (&a.translation - &ca).transpose();
    }
    let g = nearest_rotation(&h);
    let s: f64 = est
        .iter()
        .zip(reference)
        .map(|(a, b)| (&g * (&a.translation - &ca) - (&b.translation - &cb)).norm_squared())
        .sum();
    Ok((s / n).sqrt())
}

pub fn metrics(est: &[Pose], reference: &[Pose]) -> Result<Metrics> {
    Ok(Metrics {
        rotation_orbit_distance: rotation_orbit_distance(est, reference)?,
        translation_rmse: translation_rmse(est, reference)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::exp_so;

    fn sample() -> Vec<Pose> {
        (0..6)
            .map(|k| Pose {
                rotation: exp_so(3, &[0.1 * k as f64, -0.2, 0.05 * k as f64]),
                translation: DVector::from_vec(vec![k as f64, (k * k) as f64 * 0.3, 1.0 - k as f64]),
            })
            .collect()
    }

    #[test]
    fn gauge_transformed_poses_have_zero_error() {
        let a = sample();
        let g = Pose { rotation: exp_so(3, &[0.4, 1.1, -0.7]), translation: DVector::from_vec(vec![3.0, -2.0, 5.0]) };
        let b: Vec<Pose> = a.iter().map(|p| g.compose(p)).collect();
        let m = metrics(&a, &b).unwrap();
        assert!(m.rotation_orbit_distance < 1e-10);
        assert!(m.translation_rmse < 1e-10);
    }

    #[test]
    fn rounding_inverts_lift() {
        let a = sample();
        let x = crate::manifold::random_lift(&a, 5, 9).unwrap();
        let b = round_solution(&x).unwrap();
        assert!(metrics(&a, &b).unwrap().rotation_orbit_distance < 1e-10);
    }
}
