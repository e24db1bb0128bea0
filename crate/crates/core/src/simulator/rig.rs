use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Window length of every inertial input.
pub const IMU_WINDOW: usize = 20;

/// Periodic non-uniformity correction: the thermal stream freezes for
/// `freeze` seconds once every `period` seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NucSchedule {
    pub period: f64,
    pub freeze: f64,
}

/// Camera + IMU rig parameters shared by every sequence of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorRig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Horizontal field of view, radians.
    pub fov: f64,
    /// Raw camera frame rate, Hz.
    pub frame_rate: f64,
    pub imu_rate: f64,
    /// Std-dev of the static per-pixel thermal offset map.
    pub fixed_pattern_sigma: f64,
    pub fixed_pattern_seed: u64,
    pub nuc: Option<NucSchedule>,
    /// Constant offset (s) of camera content relative to IMU / ground truth.
    pub time_misalignment: f64,
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Contrast of thermal splats (temperature deviation -> intensity).
    pub thermal_gain: f64,
    /// Thermal splat blur relative to the visual camera.
    pub thermal_blur: f64,
    /// Contrast of visual splats (appearance -> intensity).
    pub visual_gain: f64,
}

impl Default for SensorRig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            channels: 3,
            fov: 80f64.to_radians(),
            frame_rate: 60.0,
            imu_rate: 200.0,
            fixed_pattern_sigma: 0.03,
            fixed_pattern_seed: 17,
            nuc: Some(NucSchedule {
                period: 30.0,
                freeze: 1.0,
            }),
            time_misalignment: 0.0,
            gyro_noise: 0.005,
            accel_noise: 0.05,
            gyro_bias: [0.004, -0.003, 0.002],
            accel_bias: [0.06, -0.04, 0.05],
            thermal_gain: 0.25,
            thermal_blur: 1.8,
            visual_gain: 1.0,
        }
    }
}

impl SensorRig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::config(
                &["rig.width", "rig.height", "rig.channels"],
                "frame extents must be positive",
            ));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::config(&["rig.fov"], "field of view must lie in (0, 180) degrees"));
        }
        if !(self.frame_rate > 0.0) || !(self.imu_rate > 0.0) {
            return Err(Error::config(
                &["rig.frame_rate", "rig.imu_rate"],
                "rates must be positive",
            ));
        }
        if let Some(nuc) = self.nuc {
            if !(0.5..=1.0).contains(&nuc.freeze) {
                return Err(Error::config(
                    &["rig.nuc_freeze"],
                    format!("NUC freeze must lie in [0.5, 1.0] s, got {}", nuc.freeze),
                ));
            }
            if !(nuc.period > nuc.freeze) {
                return Err(Error::config(
                    &["rig.nuc_period", "rig.nuc_freeze"],
                    "NUC period must exceed the freeze duration",
                ));
            }
        }
        if self.gyro_noise < 0.0 || self.accel_noise < 0.0 || self.fixed_pattern_sigma < 0.0 {
            return Err(Error::config(
                &["rig.gyro_noise", "rig.accel_noise", "rig.fixed_pattern_sigma"],
                "noise levels must be non-negative",
            ));
        }
        Ok(())
    }

    /// Checks that frames subsampled to `fps` are reachable and that each
    /// frame pair owns at least a full inertial window.
    pub fn validate_rate(&self, fps: f64) -> Result<()> {
        if !(fps > 0.0) || fps > self.frame_rate {
            return Err(Error::config(
                &["dataset.subsample_fps", "rig.frame_rate"],
                format!(
                    "subsample rate {fps} Hz must lie in (0, {}] Hz",
                    self.frame_rate
                ),
            ));
        }
        if self.imu_rate / fps < IMU_WINDOW as f64 {
            return Err(Error::config(
                &["rig.imu_rate", "dataset.subsample_fps"],
                format!(
                    "imu_rate / subsample_fps = {:.3} < {IMU_WINDOW}",
                    self.imu_rate / fps
                ),
            ));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov).tan()
    }

    /// Static per-pixel thermal offsets, row-major `h x w`.
    pub fn fixed_pattern(&self) -> Vec<f64> {
        let n = self.width * self.height;
        if self.fixed_pattern_sigma == 0.0 {
            return vec![0.0; n];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.fixed_pattern_seed);
        let dist = Normal::new(0.0, self.fixed_pattern_sigma).expect("valid sigma");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn without_noise(&self) -> Self {
        Self {
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            ..self.clone()
        }
    }
}
