use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;

use super::rig::{NucSchedule, SensorRig};
use super::world::World;

const NEAR: f64 = 0.3;
const FAR: f64 = 20.0;
const LANDMARK_SIZE: f64 = 0.2;
const VISUAL_BACKGROUND: f64 = 0.2;
const THERMAL_AMBIENT: f64 = 0.5;
const VISUAL_TINT: [f64; 3] = [1.0, 0.85, 0.7];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Thermal,
    Visual,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Thermal => "thermal",
            Channel::Visual => "visual",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thermal" => Ok(Channel::Thermal),
            "visual" => Ok(Channel::Visual),
            _ => Err(Error::config(&["channel"], format!("unknown channel '{s}'"))),
        }
    }
}

/// Channel-major image, `data[(c * h + y) * w + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn uniform(width: usize, height: usize, channels: usize, value: f64) -> Frame {
        Frame {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population variance over all pixels and channels.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.data.len() as f64
    }
}

/// Stateless rendering of one view, without NUC behaviour.
pub fn render_view(world: &World, pose: &Pose6DoF, channel: Channel, rig: &SensorRig, fixed_pattern: &[f64]) -> Frame {
    let (w, h) = (rig.width, rig.height);
    let f = rig.focal();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let rt = pose.rotation().transpose();
    let mut plane = vec![0.0; w * h];

    for lm in &world.landmarks {
        let pb = rt * (lm.position - pose.t);
        let depth = pb[0];
        if !(NEAR..FAR).contains(&depth) {
            continue;
        }
        let u = cx - f * pb[1] / depth;
        let v = cy - f * pb[2] / depth;
        let mut sigma = (LANDMARK_SIZE * f / depth).clamp(0.6, 3.0);
        let weight = match channel {
            Channel::Visual => lm.appearance,
            Channel::Thermal => {
                sigma *= rig.thermal_blur;
                lm.temperature - THERMAL_AMBIENT
            }
        } / (1.0 + depth / 6.0);
        let reach = 3.0 * sigma;
        if u < -reach || u > w as f64 - 1.0 + reach || v < -reach || v > h as f64 - 1.0 + reach {
            continue;
        }
        let x0 = (u - reach).floor().max(0.0) as usize;
        let x1 = ((u + reach).ceil() as usize).min(w - 1);
        let y0 = (v - reach).floor().max(0.0) as usize;
        let y1 = ((v + reach).ceil() as usize).min(h - 1);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in y0..=y1 {
            let dy = y as f64 - v;
            for x in x0..=x1 {
                let dx = x as f64 - u;
                plane[y * w + x] += weight * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }

    let mut data = Vec::with_capacity(rig.frame_len());
    match channel {
        Channel::Visual => {
            for c in 0..rig.channels {
                let tint = VISUAL_TINT[c % VISUAL_TINT.len()];
                data.extend(plane.iter().map(|p| VISUAL_BACKGROUND + rig.visual_gain * tint * p));
            }
        }
        Channel::Thermal => {
            let mono: Vec<f64> = plane
                .iter()
                .zip(fixed_pattern)
                .map(|(p, o)| THERMAL_AMBIENT + rig.thermal_gain * p + o)
                .collect();
            for _ in 0..rig.channels {
                data.extend_from_slice(&mono);
            }
        }
    }
    Frame {
        width: w,
        height: h,
        channels: rig.channels,
        data,
    }
}

/// Camera pair sharing one rig. The thermal stream honours the NUC schedule:
/// inside a freeze window the thermal frame rendered last before the window
/// is returned verbatim.
pub struct Renderer<'a> {
    world: &'a World,
    rig: &'a SensorRig,
    fixed_pattern: Vec<f64>,
    nuc_phase: f64,
    last_thermal: Option<Arc<Frame>>,
    held: Option<(i64, Arc<Frame>)>,
}

impl<'a> Renderer<'a> {
    /// `nuc_phase` is the start of the first freeze window, in [0, period).
    pub fn new(world: &'a World, rig: &'a SensorRig, nuc_phase: f64) -> Renderer<'a> {
        Renderer {
            world,
            rig,
            fixed_pattern: rig.fixed_pattern(),
            nuc_phase,
            last_thermal: None,
            held: None,
        }
    }

    /// Index of the freeze window covering `time`, if any.
    pub fn freeze_window(&self, time: f64) -> Option<i64> {
        let NucSchedule { period, freeze } = self.rig.nuc?;
        let i = ((time - self.nuc_phase) / period).floor();
        let start = self.nuc_phase + i * period;
        (time >= start && time < start + freeze).then_some(i as i64)
    }

    pub fn window_start(&self, window: i64) -> Option<f64> {
        self.rig.nuc.map(|n| self.nuc_phase + window as f64 * n.period)
    }

    /// Whether the renderer already holds a frame for `window`.
    pub fn holds(&self, window: i64) -> bool {
        matches!(self.held, Some((w, _)) if w == window)
    }

    pub fn render(&mut self, pose: &Pose6DoF, channel: Channel, time: f64) -> Arc<Frame> {
        if channel == Channel::Visual {
            return Arc::new(render_view(self.world, pose, channel, self.rig, &self.fixed_pattern));
        }
        if let Some(window) = self.freeze_window(time) {
            if let Some((w, frame)) = &self.held {
                if *w == window {
                    return Arc::clone(frame);
                }
            }
            if let Some(prev) = &self.last_thermal {
                let prev = Arc::clone(prev);
                self.held = Some((window, Arc::clone(&prev)));
                return prev;
            }
        }
        let frame = Arc::new(render_view(self.world, pose, channel, self.rig, &self.fixed_pattern));
        self.last_thermal = Some(Arc::clone(&frame));
        frame
    }
}
