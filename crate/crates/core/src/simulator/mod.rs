mod dataset;
mod imu;
mod io;
mod motion;
mod render;
mod rig;
mod world;

pub use dataset::{
    generate_sequence, make_dataset, subsample_times, Dataset, DatasetConfig, FramePair, ImuWindow, Sample,
    Sequence, DEFAULT_SUBSAMPLE_FPS,
};
pub use imu::{dead_reckon, interpolate, synthesize_imu, ImuSample, GRAVITY};
pub use io::{imu_to_csv, load_dataset, manifest, parse_imu_csv, read_frames, save_dataset, write_frames, MANIFEST};
pub use motion::{generate_trajectory, Motion, Profile};
pub use render::{render_view, Channel, Frame, Renderer};
pub use rig::{NucSchedule, SensorRig, IMU_WINDOW};
pub use world::{Landmark, World, WorldConfig, MIN_LANDMARKS};
