use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, TimedPose, Trajectory};

use super::rig::SensorRig;

pub const GRAVITY: f64 = 9.81;

fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Body-frame angular rate (rad/s) and specific force (m/s^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.gyro[0],
            self.gyro[1],
            self.gyro[2],
            self.accel[0],
            self.accel[1],
            self.accel[2],
        ]
    }
}

/// Differentiates a uniformly sampled trajectory into an IMU stream.
///
/// The gyro sample at k is the mean rate over `[t_k, t_k+1]`, so
/// `R_k+1 = R_k Exp(w_k dt)` holds exactly; acceleration uses the central
/// second difference (one-sided at the ends).
pub fn synthesize_imu(traj: &Trajectory, rig: &SensorRig, seed: u64) -> Result<Vec<ImuSample>> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::Contract(format!(
            "IMU synthesis needs at least 3 trajectory samples, got {n}"
        )));
    }
    let dt = 1.0 / rig.imu_rate;
    let ts = traj.timestamps();
    if let Some(w) = ts.windows(2).find(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0)) {
        return Err(Error::Contract(format!(
            "trajectory is not sampled at {} Hz (step {} s)",
            rig.imu_rate,
            w[1] - w[0]
        )));
    }
    let rots: Vec<_> = traj.poses().iter().map(|p| p.pose.rotation()).collect();
    let pos = traj.positions();

    let gyro_dist = Normal::new(0.0, rig.gyro_noise).map_err(|e| Error::Parameter(e.to_string()))?;
    let accel_dist = Normal::new(0.0, rig.accel_noise).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gyro_bias = Vector3::from(rig.gyro_bias);
    let accel_bias = Vector3::from(rig.accel_bias);

    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let j = k.min(n - 2);
        let step = Rotation3::from_matrix_unchecked(rots[j].transpose() * rots[j + 1]);
        let gyro = step.scaled_axis() / dt;
        let c = k.clamp(1, n - 2);
        let acc_world = (pos[c + 1] - 2.0 * pos[c] + pos[c - 1]) / (dt * dt);
        let accel = rots[k].transpose() * (acc_world - gravity());
        let gn = Vector3::from_fn(|_, _| gyro_dist.sample(&mut rng));
        let an = Vector3::from_fn(|_, _| accel_dist.sample(&mut rng));
        out.push(ImuSample {
            timestamp: ts[k],
            gyro: gyro + gyro_bias + gn,
            accel: accel + accel_bias + an,
        });
    }
    Ok(out)
}

/// Strapdown integration of an IMU stream from a known initial state.
pub fn dead_reckon(imu: &[ImuSample], initial: &Pose6DoF, initial_velocity: Vector3<f64>) -> Result<Trajectory> {
    if imu.len() < 2 {
        return Err(Error::Contract("dead reckoning needs at least 2 IMU samples".into()));
    }
    let mut q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(initial.rotation()));
    let mut p = initial.t;
    let dt0 = imu[1].timestamp - imu[0].timestamp;
    let mut v_half = initial_velocity + 0.5 * (q * imu[0].accel + gravity()) * dt0;
    let mut poses = Vec::with_capacity(imu.len());
    poses.push(TimedPose {
        timestamp: imu[0].timestamp,
        pose: *initial,
    });
    for k in 0..imu.len() - 1 {
        let dt = imu[k + 1].timestamp - imu[k].timestamp;
        p += v_half * dt;
        q *= UnitQuaternion::from_scaled_axis(imu[k].gyro * dt);
        let a = q * imu[k + 1].accel + gravity();
        v_half += a * dt;
        poses.push(TimedPose {
            timestamp: imu[k + 1].timestamp,
            pose: Pose6DoF::from_rt(q.to_rotation_matrix().matrix(), p)?,
        });
    }
    Trajectory::new(poses)
}

/// Linear interpolation of the stream at `t`, clamped at both ends.
pub fn interpolate(imu: &[ImuSample], t: f64) -> [f64; 6] {
    let i = imu.partition_point(|s| s.timestamp <= t);
    if i == 0 {
        return imu[0].to_array();
    }
    if i == imu.len() {
        return imu[imu.len() - 1].to_array();
    }
    let (a, b) = (&imu[i - 1], &imu[i]);
    let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    let (xa, xb) = (a.to_array(), b.to_array());
    std::array::from_fn(|c| xa[c] + w * (xb[c] - xa[c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ate;
    use crate::simulator::motion::{Motion, Profile};

    fn clean_rig(rate: f64) -> SensorRig {
        SensorRig {
            imu_rate: rate,
            ..SensorRig::default().without_noise()
        }
    }

    fn traj_from(rate: f64, n: usize, f: impl Fn(f64) -> Pose6DoF) -> Trajectory {
        let ts: Vec<f64> = (0..n).map(|k| k as f64 / rate).collect();
        let poses: Vec<Pose6DoF> = ts.iter().map(|&t| f(t)).collect();
        Trajectory::from_parts(&ts, &poses).unwrap()
    }

    #[test]
    fn too_short() {
        let t = traj_from(200.0, 2, |_| Pose6DoF::identity());
        assert!(matches!(synthesize_imu(&t, &clean_rig(200.0), 0), Err(Error::Contract(_))));
    }

    #[test]
    fn static_reads_gravity() {
        let r = [0.2, -0.1, 0.7];
        let t = traj_from(200.0, 50, |_| Pose6DoF::from_arrays([1.0, 2.0, 0.5], r));
        let imu = synthesize_imu(&t, &clean_rig(200.0), 0).unwrap();
        let rot = Pose6DoF::from_arrays([0.0; 3], r).rotation();
        let expect = rot.transpose() * Vector3::new(0.0, 0.0, GRAVITY);
        for s in &imu {
            assert!(s.gyro.norm() < 1e-12);
            assert!((s.accel - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_velocity_reads_gravity_only() {
        let t = traj_from(200.0, 100, |t| Pose6DoF::from_arrays([0.7 * t, -0.3 * t, 1.0], [0.0, 0.0, 0.4]));
        let imu = synthesize_imu(&t, &clean_rig(200.0), 0).unwrap();
        for s in &imu {
            assert!(s.gyro.norm() < 1e-12);
            assert!((s.accel - Vector3::new(0.0, 0.0, GRAVITY)).norm() < 1e-6);
        }
    }

    #[test]
    fn circular_centripetal() {
        let (radius, speed) = (3.0, 1.5);
        let w = speed / radius;
        let t = traj_from(200.0, 2000, |t| {
            let th = w * t;
            Pose6DoF::from_arrays(
                [radius * th.cos(), radius * th.sin(), 0.0],
                [0.0, 0.0, th + std::f64::consts::FRAC_PI_2],
            )
        });
        let imu = synthesize_imu(&t, &clean_rig(200.0), 0).unwrap();
        let expected = speed * speed / radius;
        for s in &imu[1..imu.len() - 1] {
            let horizontal = (s.accel[0].powi(2) + s.accel[1].powi(2)).sqrt();
            assert!((horizontal - expected).abs() / expected < 0.02);
            assert!((s.gyro[2] - w).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let rig = SensorRig::default();
        let t = Motion::new(1, 2.0, Profile::PlanarWalk).unwrap().sample(rig.imu_rate).unwrap();
        let a = synthesize_imu(&t, &rig, 5).unwrap();
        assert_eq!(a, synthesize_imu(&t, &rig, 5).unwrap());
        assert_ne!(a, synthesize_imu(&t, &rig, 6).unwrap());
    }

    fn dead_reckoning_error(rate: f64) -> (f64, f64) {
        let m = Motion::new(4, 10.0, Profile::PlanarWalk).unwrap();
        let rig = clean_rig(rate);
        let gt = m.sample(rate).unwrap();
        let imu = synthesize_imu(&gt, &rig, 0).unwrap();
        let dr = dead_reckon(&imu, &gt.get(0).pose, m.velocity(0.0)).unwrap();
        let worst = gt
            .positions()
            .iter()
            .zip(dr.positions())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        (worst, gt.path_length())
    }

    #[test]
    fn dead_reckoning_recovers_ground_truth() {
        let (err, len) = dead_reckoning_error(200.0);
        assert!(err <= 0.01 * len, "error {err} over path {len}");
        let (coarse, _) = dead_reckoning_error(50.0);
        let (fine, _) = dead_reckoning_error(800.0);
        assert!(fine < coarse);
    }

    #[test]
    fn noisy_dead_reckoning_drifts() {
        let m = Motion::new(4, 10.0, Profile::PlanarWalk).unwrap();
        let rig = SensorRig::default();
        let gt = m.sample(rig.imu_rate).unwrap();
        let imu = synthesize_imu(&gt, &rig, 0).unwrap();
        let dr = dead_reckon(&imu, &gt.get(0).pose, m.velocity(0.0)).unwrap();
        assert!(ate(&dr, &gt, 1e-3).unwrap() > 0.05);
    }

    #[test]
    fn interpolation() {
        let imu: Vec<ImuSample> = (0..3)
            .map(|k| ImuSample {
                timestamp: k as f64,
                gyro: Vector3::repeat(k as f64),
                accel: Vector3::repeat(2.0 * k as f64),
            })
            .collect();
        assert_eq!(interpolate(&imu, 0.5), [0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(interpolate(&imu, -1.0)[0], 0.0);
        assert_eq!(interpolate(&imu, 9.0)[0], 2.0);
        assert_eq!(interpolate(&imu, 2.0)[3], 4.0);
    }
}
