//! Student and teacher networks, parameters and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod network;
pub mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{InputNorm, Mode, ModelConfig};
pub use network::{
    pairs_tensor, regress_pose, selective_fusion, ClipBatch, FrameNeeds, Fusion, Outputs, Student, Teacher,
    STUDENT_GROUPS, TEACHER_GROUPS,
};
pub use params::{group_of, Bound, ParamStore};
