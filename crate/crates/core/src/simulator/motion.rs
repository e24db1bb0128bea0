use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, TimedPose, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Profile {
    PlanarWalk,
    CorridorLoop,
    RobotSmooth,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::PlanarWalk, Profile::CorridorLoop, Profile::RobotSmooth];

    pub fn name(self) -> &'static str {
        match self {
            Profile::PlanarWalk => "planar_walk",
            Profile::CorridorLoop => "corridor_loop",
            Profile::RobotSmooth => "robot_smooth",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(&["dataset.profile"], format!("unknown motion profile '{s}'")))
    }
}

/// Closed-form pose curve `t -> Pose6DoF`.
///
/// The floor path is a low-order Fourier curve `c(s)` traversed with phase
/// `s(t) = s0 + w0 t + A sin(wm t + pm)`; the body yaw follows the velocity
/// direction and the camera looks along body +x.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub profile: Profile,
    pub duration: f64,
    center: [f64; 2],
    /// `(a_k, phi_k, b_k, psi_k)` for harmonics k = 1..=3.
    harmonics: [(f64, f64, f64, f64); 3],
    turn: f64,
    s0: f64,
    w0: f64,
    mod_amp: f64,
    mod_freq: f64,
    mod_phase: f64,
    height: f64,
    bob: f64,
    sway_roll: f64,
    sway_pitch: f64,
    step_freq: f64,
    phases: [f64; 3],
}

impl Motion {
    pub fn new(seed: u64, duration: f64, profile: Profile) -> Result<Motion> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::config(
                &["dataset.duration"],
                format!("trajectory duration must be positive, got {duration}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_7469_6f6e);
        let center = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let turn = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let phases = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
        let s0 = rng.random_range(0.0..TAU);

        let m = match profile {
            Profile::PlanarWalk | Profile::RobotSmooth => {
                let r = rng.random_range(5.0..9.0);
                let harmonics = [
                    (r, 0.0, r, 0.0),
                    (
                        rng.random_range(-r / 12.0..r / 12.0),
                        rng.random_range(0.0..TAU),
                        rng.random_range(-r / 12.0..r / 12.0),
                        rng.random_range(0.0..TAU),
                    ),
                    (
                        rng.random_range(-r / 24.0..r / 24.0),
                        rng.random_range(0.0..TAU),
                        rng.random_range(-r / 24.0..r / 24.0),
                        rng.random_range(0.0..TAU),
                    ),
                ];
                let walk = profile == Profile::PlanarWalk;
                let speed = if walk {
                    rng.random_range(0.9..1.4)
                } else {
                    rng.random_range(0.4..0.7)
                };
                let w0 = speed / r;
                let step_freq = TAU * rng.random_range(1.6..2.0);
                let (mod_freq, rel_amp) = if walk {
                    (step_freq, rng.random_range(0.1..0.2))
                } else {
                    (TAU * 0.1, 0.03)
                };
                Motion {
                    profile,
                    duration,
                    center,
                    harmonics,
                    turn,
                    s0,
                    w0,
                    mod_amp: rel_amp * w0 / mod_freq,
                    mod_freq,
                    mod_phase: phases[0],
                    height: if walk { 1.5 } else { 0.4 },
                    bob: if walk { 0.03 } else { 0.0 },
                    sway_roll: if walk { 0.04 } else { 0.0 },
                    sway_pitch: if walk { 0.02 } else { 0.0 },
                    step_freq,
                    phases,
                }
            }
            Profile::CorridorLoop => {
                // Rounded-rectangle loop; every periodic term completes an
                // integer number of cycles so the end pose meets the start.
                let a = rng.random_range(6.0..9.0);
                let b = rng.random_range(4.0..7.0);
                let c3 = 0.1;
                let harmonics = [(a, 0.0, b, 0.0), (0.0, 0.0, 0.0, 0.0), (a * c3, 0.0, -b * c3, 0.0)];
                let perimeter = std::f64::consts::PI * (a + b);
                let speed = rng.random_range(0.9..1.3);
                let laps = (duration * speed / perimeter).round().max(1.0);
                let w0 = TAU * laps / duration;
                let cycles = |f: f64| (f * duration).round().max(1.0) * TAU / duration;
                let step_freq = cycles(rng.random_range(1.6..2.0));
                Motion {
                    profile,
                    duration,
                    center,
                    harmonics,
                    turn,
                    s0,
                    w0,
                    mod_amp: 0.12 * w0 / step_freq,
                    mod_freq: step_freq,
                    mod_phase: 0.0,
                    height: 1.5,
                    bob: 0.03,
                    sway_roll: 0.04,
                    sway_pitch: 0.02,
                    step_freq,
                    phases,
                }
            }
        };
        Ok(m)
    }

    fn phase(&self, t: f64) -> (f64, f64) {
        let arg = self.mod_freq * t + self.mod_phase;
        (
            self.s0 + self.w0 * t + self.mod_amp * arg.sin(),
            self.w0 + self.mod_amp * self.mod_freq * arg.cos(),
        )
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let (s, _) = self.phase(t);
        let mut x = self.center[0];
        let mut y = 0.0;
        for (k, &(a, phi, b, psi)) in self.harmonics.iter().enumerate() {
            let k = (k + 1) as f64;
            x += a * (k * s + phi).cos();
            y += b * (k * s + psi).sin();
        }
        let z = self.height + self.bob * (self.step_freq * t + self.phases[0]).sin();
        Vector3::new(x, self.center[1] + self.turn * y, z)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let (s, ds) = self.phase(t);
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (k, &(a, phi, b, psi)) in self.harmonics.iter().enumerate() {
            let k = (k + 1) as f64;
            vx -= k * a * (k * s + phi).sin();
            vy += k * b * (k * s + psi).cos();
        }
        let vz = self.bob * self.step_freq * (self.step_freq * t + self.phases[0]).cos();
        Vector3::new(vx * ds, self.turn * vy * ds, vz)
    }

    pub fn pose(&self, t: f64) -> Pose6DoF {
        let v = self.velocity(t);
        let yaw = v[1].atan2(v[0]);
        let roll = self.sway_roll * (0.5 * self.step_freq * t + self.phases[1]).sin();
        let pitch = self.sway_pitch * (self.step_freq * t + self.phases[2]).sin();
        Pose6DoF::new(self.position(t), Vector3::new(roll, pitch, yaw))
    }

    /// Poses at `k / rate` for `k = 0..=round(duration * rate)`.
    pub fn sample(&self, rate: f64) -> Result<Trajectory> {
        if !(rate > 0.0) {
            return Err(Error::config(&["rig.imu_rate"], "sampling rate must be positive"));
        }
        let n = (self.duration * rate).round() as usize;
        Trajectory::new(
            (0..=n)
                .map(|k| {
                    let t = k as f64 / rate;
                    TimedPose {
                        timestamp: t,
                        pose: self.pose(t),
                    }
                })
                .collect(),
        )
    }
}

/// Ground-truth trajectory sampled at `rate` Hz.
pub fn generate_trajectory(seed: u64, duration: f64, profile: Profile, rate: f64) -> Result<Trajectory> {
    Motion::new(seed, duration, profile)?.sample(rate)
}
