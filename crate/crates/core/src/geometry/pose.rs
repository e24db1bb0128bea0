use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::numcore::wrap_angle;

/// Rotations are stored as `[roll, pitch, yaw]` (radians) and compose as
/// intrinsic Z-Y-X: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub type Euler = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const GIMBAL_TOL: f64 = 1e-9;

pub fn euler_to_rotmat(r: &Euler) -> Matrix3<f64> {
    let (sr, cr) = r[0].sin_cos();
    let (sp, cp) = r[1].sin_cos();
    let (sy, cy) = r[2].sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::Geometry(format!(
            "matrix is not a rotation (orthonormality residual {ortho:.3e}, det {det:.12})"
        )));
    }
    Ok(())
}

/// Inverse of [`euler_to_rotmat`]. At gimbal lock (|pitch| = pi/2) yaw is
/// set to 0 and the remaining freedom goes into roll.
pub fn rotmat_to_euler(r: &Matrix3<f64>) -> Result<Euler> {
    check_rotation(r)?;
    let cp = r[(0, 0)].hypot(r[(1, 0)]);
    if cp < GIMBAL_TOL {
        let pitch = if -r[(2, 0)] > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        let roll = (-r[(1, 2)]).atan2(r[(1, 1)]);
        return Ok(Euler::new(wrap_angle(roll), pitch, 0.0));
    }
    let pitch = (-r[(2, 0)]).atan2(cp);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    Ok(Euler::new(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw)))
}

/// Rotation angle of `r` in radians, in [0, pi].
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // acos loses precision near 0; recover via the skew part there.
    if c > 0.99 {
        let s = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm()
            / 2.0;
        s.atan2(c)
    } else {
        c.acos()
    }
}

/// Translation (m) plus ZYX Euler rotation (rad).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6DoF {
    pub t: Vector3<f64>,
    pub r: Euler,
}

impl Default for Pose6DoF {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6DoF {
    /// Builds a pose, wrapping each Euler component to (-pi, pi].
    pub fn new(t: Vector3<f64>, r: Euler) -> Self {
        Self {
            t,
            r: r.map(wrap_angle),
        }
    }

    pub fn identity() -> Self {
        Self {
            t: Vector3::zeros(),
            r: Euler::zeros(),
        }
    }

    pub fn from_arrays(t: [f64; 3], r: [f64; 3]) -> Self {
        Self::new(Vector3::from(t), Euler::from(r))
    }

    pub fn from_rt(rot: &Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        Ok(Self {
            t,
            r: rotmat_to_euler(rot)?,
        })
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotmat(&self.r)
    }

    /// `self ∘ rel`: R = R_self R_rel, t = R_self t_rel + t_self.
    pub fn compose(&self, rel: &Pose6DoF) -> Pose6DoF {
        let rp = self.rotation();
        let rot = rp * rel.rotation();
        Self::from_rt_unchecked(&rot, rp * rel.t + self.t)
    }

    pub fn inverse(&self) -> Pose6DoF {
        let rt = self.rotation().transpose();
        Self::from_rt_unchecked(&rt, -(rt * self.t))
    }

    /// Pose of `other` expressed in the frame of `self`: `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose6DoF) -> Pose6DoF {
        let rt = self.rotation().transpose();
        Self::from_rt_unchecked(&(rt * other.rotation()), rt * (other.t - self.t))
    }

    /// Applies the pose to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.t
    }

    fn from_rt_unchecked(rot: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        // Products of exact rotations stay orthonormal to ~1e-15.
        Self::from_rt(rot, t).expect("product of rotations is a rotation")
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.t[0], self.t[1], self.t[2], self.r[0], self.r[1], self.r[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose6DoF {
        Pose6DoF::from_arrays(
            [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ],
            [
                rng.random_range(-PI..PI),
                rng.random_range(-1.4..1.4),
                rng.random_range(-PI..PI),
            ],
        )
    }

    fn pose_err(a: &Pose6DoF, b: &Pose6DoF) -> f64 {
        let dr = a.r - b.r;
        let wrapped = dr.map(wrap_angle).abs().max();
        (a.t - b.t).abs().max().max(wrapped)
    }

    #[test]
    fn identity_euler_is_identity_matrix() {
        assert_eq!(euler_to_rotmat(&Euler::zeros()), Matrix3::identity());
    }

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let r = euler_to_rotmat(&Euler::new(0.0, 0.0, FRAC_PI_2));
        let y = r * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let e = Euler::new(
                rng.random_range(-PI..PI),
                rng.random_range(-(FRAC_PI_2 - 1e-3)..(FRAC_PI_2 - 1e-3)),
                rng.random_range(-PI..PI),
            );
            let back = rotmat_to_euler(&euler_to_rotmat(&e)).unwrap();
            worst = worst.max((back - e).map(wrap_angle).abs().max());
        }
        assert!(worst <= 1e-9, "max error {worst}");
    }

    #[test]
    fn non_orthonormal_is_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(matches!(rotmat_to_euler(&m), Err(Error::Geometry(_))));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rotmat_to_euler(&reflect).is_err());
    }

    #[test]
    fn gimbal_lock_sets_yaw_zero() {
        let e = Euler::new(0.3, FRAC_PI_2, 0.5);
        let r = euler_to_rotmat(&e);
        let back = rotmat_to_euler(&r).unwrap();
        assert_eq!(back[2], 0.0);
        assert_eq!(back[1], FRAC_PI_2);
        // Same rotation, different parameters.
        assert_relative_eq!(euler_to_rotmat(&back), r, epsilon = 1e-12);
    }

    #[test]
    fn compose_identities_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let id = Pose6DoF::identity();
        for _ in 0..200 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            assert!(pose_err(&id.compose(&a), &a) <= 1e-12);
            assert!(pose_err(&a.compose(&id), &a) <= 1e-12);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!(pose_err(&left, &right) <= 1e-9);
            assert!(pose_err(&a.compose(&a.between(&b)), &b) <= 1e-9);
            assert!(pose_err(&a.compose(&a.inverse()), &id) <= 1e-9);
        }
    }

    #[test]
    fn rotation_angle_small_and_large() {
        let r = euler_to_rotmat(&Euler::new(0.0, 0.0, 1e-7));
        assert_relative_eq!(rotation_angle(&r), 1e-7, max_relative = 1e-6);
        let r = euler_to_rotmat(&Euler::new(2.5, 0.0, 0.0));
        assert_relative_eq!(rotation_angle(&r), 2.5, epsilon = 1e-12);
    }
}
