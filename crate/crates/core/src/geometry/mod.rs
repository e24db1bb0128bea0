//! Poses, trajectories and trajectory error metrics.

mod metrics;
mod pose;
mod trajectory;

pub use metrics::{
    associate, ate, ate_report, horn_align, rpe, rpe_errors, similarity_scale, AteReport,
    RigidTransform, DEFAULT_MAX_DT, DEFAULT_RPE_DELTA,
};
pub use pose::{check_rotation, euler_to_rotmat, rotation_angle, rotmat_to_euler, Euler, Pose6DoF};
pub use trajectory::{integrate, TimedPose, Trajectory};
