use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::pose::{rotmat_to_euler, Pose6DoF};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose6DoF,
}

/// Non-empty, strictly time-ordered sequence of absolute poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<TimedPose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Contract("trajectory must hold at least one pose".into()));
        }
        if let Some(w) = poses.windows(2).find(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::Contract(format!(
                "trajectory timestamps must strictly increase ({} then {})",
                w[0].timestamp, w[1].timestamp
            )));
        }
        Ok(Self { poses })
    }

    pub fn from_parts(timestamps: &[f64], poses: &[Pose6DoF]) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::Contract(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        Self::new(
            timestamps
                .iter()
                .zip(poses)
                .map(|(&timestamp, &pose)| TimedPose { timestamp, pose })
                .collect(),
        )
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> &TimedPose {
        &self.poses[i]
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.timestamp).collect()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.pose.t).collect()
    }

    /// Relative poses between consecutive entries.
    pub fn relative_poses(&self) -> Vec<Pose6DoF> {
        self.poses
            .windows(2)
            .map(|w| w[0].pose.between(&w[1].pose))
            .collect()
    }

    /// Sum of consecutive position step lengths.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].pose.t - w[0].pose.t).norm())
            .sum()
    }

    /// Applies a rigid transform on the left of every pose.
    pub fn transformed(&self, by: &Pose6DoF) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|p| TimedPose {
                    timestamp: p.timestamp,
                    pose: by.compose(&p.pose),
                })
                .collect(),
        }
    }

    /// One pose per line: `timestamp tx ty tz qx qy qz qw`.
    pub fn to_tum_string(&self) -> String {
        let mut out = String::new();
        for p in &self.poses {
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                p.pose.rotation(),
            ));
            let t = p.pose.t;
            let _ = writeln!(
                out,
                "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                p.timestamp, t[0], t[1], t[2], q.i, q.j, q.k, q.w
            );
        }
        out
    }

    pub fn parse_tum(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 8 {
                return Err(Error::Format(format!(
                    "line {}: expected 8 fields, found {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            let q = UnitQuaternion::from_quaternion(Quaternion::new(vals[7], vals[4], vals[5], vals[6]));
            let r = rotmat_to_euler(q.to_rotation_matrix().matrix())?;
            poses.push(TimedPose {
                timestamp: vals[0],
                pose: Pose6DoF {
                    t: Vector3::new(vals[1], vals[2], vals[3]),
                    r,
                },
            });
        }
        Self::new(poses)
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tum_string())?;
        Ok(())
    }

    pub fn read_tum(path: &Path) -> Result<Self> {
        Self::parse_tum(&std::fs::read_to_string(path)?)
    }
}

/// Chains relative poses onto `initial`; `timestamps` has one more entry
/// than `rels`.
pub fn integrate(initial: &Pose6DoF, rels: &[Pose6DoF], timestamps: &[f64]) -> Result<Trajectory> {
    if timestamps.len() != rels.len() + 1 {
        return Err(Error::Contract(format!(
            "integrate needs {} timestamps for {} relative poses, got {}",
            rels.len() + 1,
            rels.len(),
            timestamps.len()
        )));
    }
    let mut poses = Vec::with_capacity(timestamps.len());
    let mut cur = *initial;
    poses.push(TimedPose {
        timestamp: timestamps[0],
        pose: cur,
    });
    for (rel, &ts) in rels.iter().zip(&timestamps[1..]) {
        cur = cur.compose(rel);
        poses.push(TimedPose {
            timestamp: ts,
            pose: cur,
        });
    }
    Trajectory::new(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::wrap_angle;

    fn sample() -> Trajectory {
        let poses: Vec<Pose6DoF> = (0..20)
            .map(|i| {
                let s = i as f64 * 0.1;
                Pose6DoF::from_arrays([s.cos(), s.sin(), 0.1 * s], [0.05 * s, -0.02 * s, s])
            })
            .collect();
        let ts: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.2).collect();
        Trajectory::from_parts(&ts, &poses).unwrap()
    }

    #[test]
    fn rejects_empty_and_unordered() {
        assert!(Trajectory::new(vec![]).is_err());
        let p = Pose6DoF::identity();
        assert!(Trajectory::from_parts(&[1.0, 1.0], &[p, p]).is_err());
        assert!(Trajectory::from_parts(&[1.0], &[p, p]).is_err());
    }

    #[test]
    fn integrate_base_cases() {
        let init = Pose6DoF::from_arrays([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]);
        let t = integrate(&init, &[], &[0.0]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get(0).pose, init);

        let ids = vec![Pose6DoF::identity(); 5];
        let ts: Vec<f64> = (0..6).map(f64::from).collect();
        let t = integrate(&init, &ids, &ts).unwrap();
        for p in t.poses() {
            assert!((p.pose.t - init.t).norm() < 1e-12);
            assert!((p.pose.r - init.r).norm() < 1e-12);
        }
        assert!(matches!(integrate(&init, &ids, &ts[..5]), Err(Error::Contract(_))));
    }

    #[test]
    fn integrate_inverts_relative_poses() {
        let traj = sample();
        let rebuilt = integrate(&traj.get(0).pose, &traj.relative_poses(), &traj.timestamps()).unwrap();
        for (a, b) in traj.poses().iter().zip(rebuilt.poses()) {
            assert!((a.pose.t - b.pose.t).norm() < 1e-9);
            assert!((a.pose.r - b.pose.r).map(wrap_angle).norm() < 1e-9);
        }
    }

    #[test]
    fn tum_round_trip() {
        let traj = sample();
        let text = traj.to_tum_string();
        let back = Trajectory::parse_tum(&text).unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in traj.poses().iter().zip(back.poses()) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.pose.t, b.pose.t);
            assert!((a.pose.r - b.pose.r).map(wrap_angle).abs().max() < 1e-12);
        }
    }

    #[test]
    fn tum_parse_errors() {
        assert!(matches!(Trajectory::parse_tum("1 2 3"), Err(Error::Format(_))));
        assert!(matches!(Trajectory::parse_tum("1 2 3 4 5 6 7 x"), Err(Error::Format(_))));
        assert!(Trajectory::parse_tum("# only a comment\n").is_err());
    }
}
