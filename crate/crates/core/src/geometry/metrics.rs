//! Trajectory error metrics: closest-in-time association, rigid (Horn)
//! alignment, absolute trajectory error and relative pose error.

use nalgebra::{Matrix3, Vector3, SVD};

use super::pose::{rotation_angle, Pose6DoF};
use super::trajectory::Trajectory;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_DT: f64 = 0.1;
pub const DEFAULT_RPE_DELTA: usize = 1;

/// Matches estimate poses to reference poses one-to-one. Every pair with
/// |dt| <= `max_dt` is a candidate; candidates are accepted greedily by
/// ascending |dt|. Returned pairs are `(est_index, ref_index)` sorted by
/// estimate index.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>> {
    let ref_ts = reference.timestamps();
    let mut candidates = Vec::new();
    for (i, p) in est.poses().iter().enumerate() {
        let lo = ref_ts.partition_point(|&t| t < p.timestamp - max_dt);
        for (j, &t) in ref_ts.iter().enumerate().skip(lo) {
            let dt = (t - p.timestamp).abs();
            if t > p.timestamp + max_dt {
                break;
            }
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !est_used[i] && !ref_used[j] {
            est_used[i] = true;
            ref_used[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyAssociation { max_dt });
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn as_pose(&self) -> Result<Pose6DoF> {
        Pose6DoF::from_rt(&self.rotation, self.translation)
    }
}

fn centroid(ps: &[Vector3<f64>]) -> Vector3<f64> {
    ps.iter().sum::<Vector3<f64>>() / ps.len() as f64
}

/// Closed-form least-squares rigid alignment of `est` onto `reference`
/// (SVD of the cross-covariance, no scale).
pub fn horn_align(est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<RigidTransform> {
    if est.len() != reference.len() {
        return Err(Error::Alignment(format!(
            "{} estimate points vs {} reference points",
            est.len(),
            reference.len()
        )));
    }
    if est.len() < 3 {
        return Err(Error::Alignment(format!(
            "need at least 3 matched pairs, got {}",
            est.len()
        )));
    }
    let (mu_e, mu_r) = (centroid(est), centroid(reference));
    let mut cov = Matrix3::zeros();
    for (e, r) in est.iter().zip(reference) {
        cov += (r - mu_r) * (e - mu_e).transpose();
    }
    let svd = SVD::new(cov, true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Alignment(format!(
            "cross-covariance is rank deficient (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let translation = mu_r - rotation * mu_e;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Scale that best maps rotated `est` onto `reference` (Umeyama), reported
/// as a drift diagnostic only; trajectory metrics never apply it.
pub fn similarity_scale(est: &[Vector3<f64>], reference: &[Vector3<f64>], rotation: &Matrix3<f64>) -> f64 {
    let (mu_e, mu_r) = (centroid(est), centroid(reference));
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let ec = rotation * (e - mu_e);
        num += ec.dot(&(r - mu_r));
        den += ec.norm_squared();
    }
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

fn rms(residuals: impl Iterator<Item = f64>) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for r in residuals {
        ss += r * r;
        n += 1;
    }
    (ss / n as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct AteReport {
    pub rmse: f64,
    pub transform: RigidTransform,
    pub pairs: Vec<(usize, usize)>,
    pub residuals: Vec<f64>,
    pub scale: f64,
}

pub fn ate_report(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<AteReport> {
    let pairs = associate(est, reference, max_dt)?;
    let e: Vec<_> = pairs.iter().map(|&(i, _)| est.get(i).pose.t).collect();
    let r: Vec<_> = pairs.iter().map(|&(_, j)| reference.get(j).pose.t).collect();
    let transform = horn_align(&e, &r)?;
    let residuals: Vec<f64> = e
        .iter()
        .zip(&r)
        .map(|(e, r)| (transform.apply(e) - r).norm())
        .collect();
    Ok(AteReport {
        rmse: rms(residuals.iter().copied()),
        scale: similarity_scale(&e, &r, &transform.rotation),
        transform,
        pairs,
        residuals,
    })
}

/// Absolute trajectory error: RMS of position residuals after rigid alignment.
pub fn ate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<f64> {
    Ok(ate_report(est, reference, max_dt)?.rmse)
}

/// Per-window relative errors `(translation m, rotation deg)` over associated
/// poses `delta` apart.
pub fn rpe_errors(
    est: &Trajectory,
    reference: &Trajectory,
    delta: usize,
    max_dt: f64,
) -> Result<Vec<(f64, f64)>> {
    if delta == 0 {
        return Err(Error::Parameter("rpe delta must be >= 1".into()));
    }
    let pairs = associate(est, reference, max_dt)?;
    if pairs.len() <= delta {
        return Err(Error::Contract(format!(
            "rpe with delta {delta} needs more than {delta} associated poses, got {}",
            pairs.len()
        )));
    }
    Ok(pairs
        .windows(delta + 1)
        .map(|w| {
            let (a, b) = (w[0], w[delta]);
            let est_rel = est.get(a.0).pose.between(&est.get(b.0).pose);
            let ref_rel = reference.get(a.1).pose.between(&reference.get(b.1).pose);
            let err = ref_rel.between(&est_rel);
            (err.t.norm(), rotation_angle(&err.rotation()).to_degrees())
        })
        .collect())
}

/// Relative pose error as `(translation RMS m, rotation RMS deg)`.
pub fn rpe(est: &Trajectory, reference: &Trajectory, delta: usize, max_dt: f64) -> Result<(f64, f64)> {
    let errs = rpe_errors(est, reference, delta, max_dt)?;
    Ok((
        rms(errs.iter().map(|e| e.0)),
        rms(errs.iter().map(|e| e.1)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::euler_to_rotmat;
    use crate::geometry::trajectory::TimedPose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn curve(n: usize, dt: f64, t0: f64) -> Trajectory {
        let poses: Vec<TimedPose> = (0..n)
            .map(|i| {
                let s = i as f64 * 0.05;
                TimedPose {
                    timestamp: t0 + i as f64 * dt,
                    pose: Pose6DoF::from_arrays(
                        [3.0 * s.cos(), 2.0 * (1.3 * s).sin(), 0.3 * (0.7 * s).sin()],
                        [0.1 * s.sin(), 0.05 * s, s],
                    ),
                }
            })
            .collect();
        Trajectory::new(poses).unwrap()
    }

    #[test]
    fn associate_exact_and_offset() {
        let a = curve(50, 0.2, 0.0);
        let pairs = associate(&a, &a, 0.1).unwrap();
        assert_eq!(pairs, (0..50).map(|i| (i, i)).collect::<Vec<_>>());

        let shifted = curve(50, 0.2, 0.01);
        let pairs = associate(&a, &shifted, 0.05).unwrap();
        assert_eq!(pairs.len(), 50);
        assert!(pairs.iter().all(|&(i, j)| i == j));

        let far = curve(10, 0.2, 100.0);
        assert!(matches!(associate(&a, &far, 0.1), Err(Error::EmptyAssociation { .. })));
    }

    #[test]
    fn associate_is_one_to_one() {
        // Dense estimate against a sparse reference.
        let est = curve(40, 0.05, 0.0);
        let reference = curve(10, 0.2, 0.0);
        let pairs = associate(&est, &reference, 0.1).unwrap();
        assert_eq!(pairs.len(), 10);
        let mut refs: Vec<_> = pairs.iter().map(|p| p.1).collect();
        refs.dedup();
        assert_eq!(refs.len(), 10);
    }

    #[test]
    fn horn_identity_and_known_transform() {
        let pts = curve(30, 0.1, 0.0).positions();
        let t = horn_align(&pts, &pts).unwrap();
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);

        let rot = euler_to_rotmat(&Vector3::new(0.4, -0.3, 2.0));
        let trans = Vector3::new(1.0, -2.0, 0.5);
        let moved: Vec<_> = pts.iter().map(|p| rot * p + trans).collect();
        let back = horn_align(&moved, &pts).unwrap();
        let resid = moved
            .iter()
            .zip(&pts)
            .map(|(m, p)| (back.apply(m) - p).norm())
            .fold(0.0, f64::max);
        assert!(resid <= 1e-9, "{resid}");
        assert!((back.rotation - rot.transpose()).abs().max() < 1e-9);
    }

    #[test]
    fn horn_noisy_residual_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts = curve(200, 0.1, 0.0).positions();
        let rot = euler_to_rotmat(&Vector3::new(0.1, 0.2, -1.0));
        let trans = Vector3::new(4.0, 0.0, -1.0);
        let est: Vec<_> = pts
            .iter()
            .map(|p| rot * p + trans + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let t = horn_align(&est, &pts).unwrap();
        let r = rms(est.iter().zip(&pts).map(|(e, p)| (t.apply(e) - p).norm()));
        assert!(r <= 0.03, "rms {r}");
    }

    #[test]
    fn horn_rejects_degenerate() {
        let two = vec![Vector3::zeros(), Vector3::x()];
        assert!(matches!(horn_align(&two, &two), Err(Error::Alignment(_))));
        let line: Vec<_> = (0..5).map(|i| Vector3::x() * i as f64).collect();
        assert!(matches!(horn_align(&line, &line), Err(Error::Alignment(_))));
    }

    #[test]
    fn ate_invariances() {
        let r = curve(60, 0.1, 0.0);
        assert!(ate(&r, &r, 0.1).unwrap() < 1e-12);
        let offset = r.transformed(&Pose6DoF::from_arrays([3.0, -1.0, 2.0], [0.0; 3]));
        assert!(ate(&offset, &r, 0.1).unwrap() < 1e-9);
        let moved = r.transformed(&Pose6DoF::from_arrays([3.0, -1.0, 2.0], [0.3, 0.2, -2.0]));
        assert!(ate(&moved, &r, 0.1).unwrap() < 1e-9);
    }

    #[test]
    fn ate_single_displaced_pose() {
        // Alignment absorbs O(d/N) of the displacement, so d/sqrt(N) holds to
        // first order in 1/N.
        let n = 1000;
        let r = curve(n, 0.1, 0.0);
        let d = 0.5;
        let mut poses = r.poses().to_vec();
        poses[n / 3].pose.t += Vector3::new(0.0, 0.0, d);
        let est = Trajectory::new(poses).unwrap();
        let got = ate(&est, &r, 0.1).unwrap();
        let expect = d / (n as f64).sqrt();
        assert!((got - expect).abs() / expect < 1e-2, "{got} vs {expect}");
    }

    #[test]
    fn rpe_identity_and_rigid_invariance() {
        let r = curve(40, 0.1, 0.0);
        let (t, rot) = rpe(&r, &r, 1, 0.1).unwrap();
        assert!(t < 1e-12 && rot < 1e-9);
        let moved = r.transformed(&Pose6DoF::from_arrays([1.0, 2.0, 3.0], [0.5, -0.4, 1.0]));
        let (t, rot) = rpe(&moved, &r, 1, 0.1).unwrap();
        assert!(t < 1e-9 && rot < 1e-6, "{t} {rot}");
        assert!(matches!(rpe(&r, &r, 40, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn rpe_single_corrupted_step() {
        let r = curve(101, 0.1, 0.0);
        let mut rels = r.relative_poses();
        rels[37].t += Vector3::new(0.1, 0.0, 0.0);
        let est = crate::geometry::integrate(&r.get(0).pose, &rels, &r.timestamps()).unwrap();
        let (t, rot) = rpe(&est, &r, 1, 0.1).unwrap();
        assert!((t - 0.1 / 100f64.sqrt()).abs() < 1e-9, "{t}");
        assert!(rot < 1e-6);
    }

    #[test]
    fn similarity_scale_recovers_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let scaled: Vec<_> = pts.iter().map(|p| p * 0.5).collect();
        let s = similarity_scale(&scaled, &pts, &Matrix3::identity());
        assert!((s - 2.0).abs() < 1e-12);
    }
}
