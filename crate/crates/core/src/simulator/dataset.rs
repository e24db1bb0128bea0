use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, TimedPose, Trajectory};
use crate::parallel::par_map;
use crate::seeds::derive_seed;

use super::imu::{interpolate, synthesize_imu, ImuSample};
use super::motion::{Motion, Profile};
use super::render::{Channel, Frame, Renderer};
use super::rig::{NucSchedule, SensorRig, IMU_WINDOW};
use super::world::{World, WorldConfig};

pub const DEFAULT_SUBSAMPLE_FPS: f64 = 4.5;

#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub first: Arc<Frame>,
    pub second: Arc<Frame>,
}

impl FramePair {
    pub fn identical(&self) -> bool {
        Arc::ptr_eq(&self.first, &self.second) || self.first.data == self.second.data
    }
}

/// `IMU_WINDOW` x 6 inertial samples (gyro xyz, accel xyz), time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuWindow {
    pub data: [[f64; 6]; IMU_WINDOW],
}

impl ImuWindow {
    pub fn new(rows: &[[f64; 6]]) -> Result<ImuWindow> {
        let data = rows.try_into().map_err(|_| {
            Error::Contract(format!("IMU window needs {IMU_WINDOW} samples, got {}", rows.len()))
        })?;
        Ok(ImuWindow { data })
    }

    /// Linear resampling of the stream at `IMU_WINDOW` evenly spaced times
    /// spanning `[t0, t1]`.
    pub fn from_stream(imu: &[ImuSample], t0: f64, t1: f64) -> ImuWindow {
        let step = (t1 - t0) / (IMU_WINDOW - 1) as f64;
        ImuWindow {
            data: std::array::from_fn(|i| interpolate(imu, t0 + step * i as f64)),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.data.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub thermal_pair: FramePair,
    pub visual_pair: FramePair,
    pub imu_window: ImuWindow,
    pub rel_pose_gt: Pose6DoF,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: usize,
    pub profile: Profile,
    pub seed: u64,
    pub nuc_phase: f64,
    /// Ground truth at the IMU rate.
    pub gt: Trajectory,
    pub imu: Vec<ImuSample>,
    /// Ground truth at the (labelled) frame timestamps.
    pub frame_gt: Trajectory,
    pub thermal: Vec<Arc<Frame>>,
    pub visual: Vec<Arc<Frame>>,
    pub samples: Vec<Sample>,
}

impl Sequence {
    pub fn frame_times(&self) -> Vec<f64> {
        self.frame_gt.timestamps()
    }

    /// Velocity consistent with the half-step strapdown scheme of
    /// `dead_reckon`, estimated from the first three GT samples.
    pub fn initial_velocity(&self) -> Vector3<f64> {
        let p = self.gt.positions();
        if p.len() < 3 {
            return Vector3::zeros();
        }
        let dt = self.gt.get(1).timestamp - self.gt.get(0).timestamp;
        let acc = (p[2] - 2.0 * p[1] + p[0]) / (dt * dt);
        (p[1] - p[0]) / dt - 0.5 * acc * dt
    }

    /// Indices of samples whose thermal frames are identical.
    pub fn frozen_samples(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.thermal_pair.identical())
            .map(|(i, _)| i)
            .collect()
    }

    /// Assembles samples from stored frames, IMU and frame-rate ground truth.
    pub fn build_samples(
        imu: &[ImuSample],
        frame_gt: &Trajectory,
        thermal: &[Arc<Frame>],
        visual: &[Arc<Frame>],
    ) -> Result<Vec<Sample>> {
        let n = frame_gt.len();
        if thermal.len() != n || visual.len() != n {
            return Err(Error::Contract(format!(
                "{n} frame poses but {} thermal / {} visual frames",
                thermal.len(),
                visual.len()
            )));
        }
        Ok((0..n.saturating_sub(1))
            .map(|k| {
                let (a, b) = (frame_gt.get(k), frame_gt.get(k + 1));
                Sample {
                    thermal_pair: FramePair {
                        first: Arc::clone(&thermal[k]),
                        second: Arc::clone(&thermal[k + 1]),
                    },
                    visual_pair: FramePair {
                        first: Arc::clone(&visual[k]),
                        second: Arc::clone(&visual[k + 1]),
                    },
                    imu_window: ImuWindow::from_stream(imu, a.timestamp, b.timestamp),
                    rel_pose_gt: a.pose.between(&b.pose),
                    t0: a.timestamp,
                    t1: b.timestamp,
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub world_seed: u64,
    pub world: WorldConfig,
    pub rig: SensorRig,
    pub seed: u64,
    pub n_sequences: usize,
    pub duration: f64,
    pub subsample_fps: f64,
    /// Assigned to sequences round-robin.
    pub profiles: Vec<Profile>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            world_seed: 1,
            world: WorldConfig::default(),
            rig: SensorRig::default(),
            seed: 1,
            n_sequences: 4,
            duration: 60.0,
            subsample_fps: DEFAULT_SUBSAMPLE_FPS,
            profiles: vec![Profile::PlanarWalk, Profile::CorridorLoop, Profile::RobotSmooth],
        }
    }
}

const DATASET_KEYS: &[&str] = &[
    "world_seed",
    "seed",
    "n_sequences",
    "duration",
    "subsample_fps",
    "profiles",
];
const WORLD_KEYS: &[&str] = &["landmarks", "extent", "height"];
const RIG_KEYS: &[&str] = &[
    "width",
    "height",
    "channels",
    "fov",
    "frame_rate",
    "imu_rate",
    "fixed_pattern_sigma",
    "fixed_pattern_seed",
    "nuc",
    "nuc_period",
    "nuc_freeze",
    "time_misalignment",
    "gyro_noise",
    "accel_noise",
    "gyro_bias",
    "accel_bias",
    "thermal_gain",
    "thermal_blur",
    "visual_gain",
];

fn triple(ini: &Ini, section: &str, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
    match ini.get_list::<f64>(section, key)? {
        None => Ok(default),
        Some(v) => v.try_into().map_err(|v: Vec<f64>| {
            Error::config(&[&format!("{section}.{key}")], format!("expected 3 values, got {}", v.len()))
        }),
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.rig.validate_rate(self.subsample_fps)?;
        if self.n_sequences == 0 {
            return Err(Error::config(&["dataset.n_sequences"], "need at least one sequence"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::config(&["dataset.duration"], "duration must be positive"));
        }
        if self.profiles.is_empty() {
            return Err(Error::config(&["dataset.profiles"], "need at least one motion profile"));
        }
        Ok(())
    }

    /// Reads `[dataset]`, `[world]` and `[rig]`; absent keys keep defaults.
    pub fn from_ini(ini: &Ini) -> Result<DatasetConfig> {
        ini.check_keys("dataset", DATASET_KEYS)?;
        ini.check_keys("world", WORLD_KEYS)?;
        ini.check_keys("rig", RIG_KEYS)?;
        let d = DatasetConfig::default();
        let r = &d.rig;
        let nuc_on = ini.get_or("rig", "nuc", r.nuc.is_some())?;
        let nuc_default = r.nuc.unwrap_or(NucSchedule {
            period: 30.0,
            freeze: 1.0,
        });
        let rig = SensorRig {
            width: ini.get_or("rig", "width", r.width)?,
            height: ini.get_or("rig", "height", r.height)?,
            channels: ini.get_or("rig", "channels", r.channels)?,
            fov: ini.get_or("rig", "fov", r.fov)?,
            frame_rate: ini.get_or("rig", "frame_rate", r.frame_rate)?,
            imu_rate: ini.get_or("rig", "imu_rate", r.imu_rate)?,
            fixed_pattern_sigma: ini.get_or("rig", "fixed_pattern_sigma", r.fixed_pattern_sigma)?,
            fixed_pattern_seed: ini.get_or("rig", "fixed_pattern_seed", r.fixed_pattern_seed)?,
            nuc: nuc_on
                .then(|| -> Result<NucSchedule> {
                    Ok(NucSchedule {
                        period: ini.get_or("rig", "nuc_period", nuc_default.period)?,
                        freeze: ini.get_or("rig", "nuc_freeze", nuc_default.freeze)?,
                    })
                })
                .transpose()?,
            time_misalignment: ini.get_or("rig", "time_misalignment", r.time_misalignment)?,
            gyro_noise: ini.get_or("rig", "gyro_noise", r.gyro_noise)?,
            accel_noise: ini.get_or("rig", "accel_noise", r.accel_noise)?,
            gyro_bias: triple(ini, "rig", "gyro_bias", r.gyro_bias)?,
            accel_bias: triple(ini, "rig", "accel_bias", r.accel_bias)?,
            thermal_gain: ini.get_or("rig", "thermal_gain", r.thermal_gain)?,
            thermal_blur: ini.get_or("rig", "thermal_blur", r.thermal_blur)?,
            visual_gain: ini.get_or("rig", "visual_gain", r.visual_gain)?,
        };
        let profiles = match ini.get_list::<String>("dataset", "profiles")? {
            None => d.profiles.clone(),
            Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<Profile>>>()?,
        };
        let cfg = DatasetConfig {
            world_seed: ini.get_or("dataset", "world_seed", d.world_seed)?,
            world: WorldConfig {
                landmarks: ini.get_or("world", "landmarks", d.world.landmarks)?,
                extent: ini.get_or("world", "extent", d.world.extent)?,
                height: ini.get_or("world", "height", d.world.height)?,
            },
            rig,
            seed: ini.get_or("dataset", "seed", d.seed)?,
            n_sequences: ini.get_or("dataset", "n_sequences", d.n_sequences)?,
            duration: ini.get_or("dataset", "duration", d.duration)?,
            subsample_fps: ini.get_or("dataset", "subsample_fps", d.subsample_fps)?,
            profiles,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        ini.set("dataset", "world_seed", self.world_seed);
        ini.set("dataset", "seed", self.seed);
        ini.set("dataset", "n_sequences", self.n_sequences);
        ini.set_f64("dataset", "duration", self.duration);
        ini.set_f64("dataset", "subsample_fps", self.subsample_fps);
        let names: Vec<&str> = self.profiles.iter().map(|p| p.name()).collect();
        ini.set("dataset", "profiles", names.join(", "));
        ini.set("world", "landmarks", self.world.landmarks);
        ini.set_f64("world", "extent", self.world.extent);
        ini.set_f64("world", "height", self.world.height);
        let r = &self.rig;
        ini.set("rig", "width", r.width);
        ini.set("rig", "height", r.height);
        ini.set("rig", "channels", r.channels);
        ini.set_f64("rig", "fov", r.fov);
        ini.set_f64("rig", "frame_rate", r.frame_rate);
        ini.set_f64("rig", "imu_rate", r.imu_rate);
        ini.set_f64("rig", "fixed_pattern_sigma", r.fixed_pattern_sigma);
        ini.set("rig", "fixed_pattern_seed", r.fixed_pattern_seed);
        ini.set("rig", "nuc", r.nuc.is_some());
        if let Some(n) = r.nuc {
            ini.set_f64("rig", "nuc_period", n.period);
            ini.set_f64("rig", "nuc_freeze", n.freeze);
        }
        ini.set_f64("rig", "time_misalignment", r.time_misalignment);
        ini.set_f64("rig", "gyro_noise", r.gyro_noise);
        ini.set_f64("rig", "accel_noise", r.accel_noise);
        ini.set_list("rig", "gyro_bias", &r.gyro_bias);
        ini.set_list("rig", "accel_bias", &r.accel_bias);
        ini.set_f64("rig", "thermal_gain", r.thermal_gain);
        ini.set_f64("rig", "thermal_blur", r.thermal_blur);
        ini.set_f64("rig", "visual_gain", r.visual_gain);
        ini
    }

    pub fn sequence_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[0x5e9, index as u64])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub world: World,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.sequences.iter().flat_map(|s| s.samples.iter())
    }

    pub fn n_samples(&self) -> usize {
        self.sequences.iter().map(|s| s.samples.len()).sum()
    }
}

/// Raw camera indices `round(k * frame_rate / fps)` that fall inside the
/// sequence, returned as timestamps.
pub fn subsample_times(frame_rate: f64, fps: f64, duration: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0.. {
        let idx = (k as f64 * frame_rate / fps).round();
        let t = idx / frame_rate;
        if t > duration + 1e-9 {
            break;
        }
        out.push(t);
    }
    out
}

pub fn generate_sequence(world: &World, cfg: &DatasetConfig, index: usize) -> Result<Sequence> {
    let rig = &cfg.rig;
    let seed = cfg.sequence_seed(index);
    let profile = cfg.profiles[index % cfg.profiles.len()];
    let motion = Motion::new(derive_seed(seed, &[1]), cfg.duration, profile)?;
    let gt = motion.sample(rig.imu_rate)?;
    let imu = synthesize_imu(&gt, rig, derive_seed(seed, &[2]))?;
    let nuc_phase = match rig.nuc {
        Some(n) => ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])).random_range(0.0..n.period),
        None => 0.0,
    };

    let times = subsample_times(rig.frame_rate, cfg.subsample_fps, cfg.duration);
    let mut renderer = Renderer::new(world, rig, nuc_phase);
    let mut thermal = Vec::with_capacity(times.len());
    let mut visual = Vec::with_capacity(times.len());
    let mut frame_poses = Vec::with_capacity(times.len());
    for &t in &times {
        // Camera content lags or leads the labelled timestamp.
        let content_t = t + rig.time_misalignment;
        if let Some(w) = renderer.freeze_window(content_t) {
            if !renderer.holds(w) {
                let start = renderer.window_start(w).expect("NUC enabled");
                let onset = ((start * rig.frame_rate).ceil() - 1.0) / rig.frame_rate;
                renderer.render(&motion.pose(onset), Channel::Thermal, onset);
            }
        }
        let pose = motion.pose(content_t);
        thermal.push(renderer.render(&pose, Channel::Thermal, content_t));
        visual.push(renderer.render(&pose, Channel::Visual, content_t));
        frame_poses.push(TimedPose {
            timestamp: t,
            pose: motion.pose(t),
        });
    }
    let frame_gt = Trajectory::new(frame_poses)?;
    let samples = Sequence::build_samples(&imu, &frame_gt, &thermal, &visual)?;
    Ok(Sequence {
        id: index,
        profile,
        seed,
        nuc_phase,
        gt,
        imu,
        frame_gt,
        thermal,
        visual,
        samples,
    })
}

pub fn make_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let world = World::generate(cfg.world_seed, &cfg.world)?;
    let indices: Vec<usize> = (0..cfg.n_sequences).collect();
    let sequences = par_map(&indices, |_, &i| generate_sequence(&world, cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        world,
        sequences,
    })
}
