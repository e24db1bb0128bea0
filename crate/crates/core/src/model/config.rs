use std::fmt;
use std::str::FromStr;

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::simulator::IMU_WINDOW;

/// Network dimensions. Thermal, hallucination and visual encoders share one
/// conv spec, so `d_T = d_H = d_V` by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Average-pool factor applied to the flattened last conv activation.
    pub feature_pool: usize,
    pub imu_hidden: usize,
    pub regressor_hidden: usize,
    pub fc_widths: Vec<usize>,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub selective_fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            channels: 3,
            conv_channels: vec![8, 16, 32],
            conv_kernel: 3,
            conv_stride: 2,
            feature_pool: 2,
            imu_hidden: 8,
            regressor_hidden: 32,
            fc_widths: vec![128, 64, 3],
            dropout: 0.25,
            leaky_slope: 0.1,
            selective_fusion: true,
        }
    }
}

impl ModelConfig {
    /// Smallest useful network; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            width: 8,
            height: 8,
            channels: 1,
            conv_channels: vec![2, 4],
            conv_kernel: 3,
            conv_stride: 2,
            feature_pool: 2,
            imu_hidden: 1,
            regressor_hidden: 4,
            fc_widths: vec![5, 4, 3],
            dropout: 0.25,
            leaky_slope: 0.1,
            selective_fusion: true,
        }
    }

    pub fn conv_pad(&self) -> usize {
        self.conv_kernel / 2
    }

    /// `(channels, height, width)` of the last conv activation.
    pub fn conv_output(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = (self.height, self.width);
        let (k, s, p) = (self.conv_kernel, self.conv_stride, self.conv_pad());
        for _ in &self.conv_channels {
            h = (h + 2 * p).saturating_sub(k) / s + 1;
            w = (w + 2 * p).saturating_sub(k) / s + 1;
        }
        (*self.conv_channels.last().unwrap_or(&0), h, w)
    }

    /// Frame feature length (`d_T = d_H = d_V`).
    pub fn d_feature(&self) -> usize {
        let (c, h, w) = self.conv_output();
        c * h * w / self.feature_pool.max(1)
    }

    /// Inertial feature length: all hidden states of the window.
    pub fn d_imu(&self) -> usize {
        self.imu_hidden * IMU_WINDOW
    }

    pub fn d_fused(&self) -> usize {
        2 * self.d_feature() + self.d_imu()
    }

    pub fn d_teacher(&self) -> usize {
        self.d_feature() + self.d_imu()
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::config(&["model.width", "model.height", "model.channels"], "frame extents must be positive"));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::config(&["model.conv_channels"], "need at least one conv layer with positive width"));
        }
        if self.conv_kernel == 0 || self.conv_kernel.is_multiple_of(2) || self.conv_stride == 0 {
            return Err(Error::config(
                &["model.conv_kernel", "model.conv_stride"],
                "kernel must be odd and stride positive",
            ));
        }
        let (c, h, w) = self.conv_output();
        if self.feature_pool == 0 || (c * h * w) % self.feature_pool != 0 {
            return Err(Error::config(
                &["model.feature_pool"],
                format!("pool factor {} does not divide the flattened activation length {}", self.feature_pool, c * h * w),
            ));
        }
        if self.imu_hidden == 0 || self.regressor_hidden == 0 {
            return Err(Error::config(&["model.imu_hidden", "model.regressor_hidden"], "hidden sizes must be positive"));
        }
        if self.fc_widths.last() != Some(&3) || self.fc_widths.contains(&0) {
            return Err(Error::config(&["model.fc_widths"], "FC widths must be positive and end in 3"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(&["model.dropout"], "dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn from_ini(ini: &Ini) -> Result<ModelConfig> {
        ini.check_keys(
            "model",
            &[
                "width",
                "height",
                "channels",
                "conv_channels",
                "conv_kernel",
                "conv_stride",
                "feature_pool",
                "imu_hidden",
                "regressor_hidden",
                "fc_widths",
                "dropout",
                "leaky_slope",
                "selective_fusion",
            ],
        )?;
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            width: ini.get_or("model", "width", d.width)?,
            height: ini.get_or("model", "height", d.height)?,
            channels: ini.get_or("model", "channels", d.channels)?,
            conv_channels: ini.get_list("model", "conv_channels")?.unwrap_or(d.conv_channels),
            conv_kernel: ini.get_or("model", "conv_kernel", d.conv_kernel)?,
            conv_stride: ini.get_or("model", "conv_stride", d.conv_stride)?,
            feature_pool: ini.get_or("model", "feature_pool", d.feature_pool)?,
            imu_hidden: ini.get_or("model", "imu_hidden", d.imu_hidden)?,
            regressor_hidden: ini.get_or("model", "regressor_hidden", d.regressor_hidden)?,
            fc_widths: ini.get_list("model", "fc_widths")?.unwrap_or(d.fc_widths),
            dropout: ini.get_or("model", "dropout", d.dropout)?,
            leaky_slope: ini.get_or("model", "leaky_slope", d.leaky_slope)?,
            selective_fusion: ini.get_or("model", "selective_fusion", d.selective_fusion)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_ini(&self, ini: &mut Ini) {
        ini.set("model", "width", self.width);
        ini.set("model", "height", self.height);
        ini.set("model", "channels", self.channels);
        ini.set_list("model", "conv_channels", &self.conv_channels);
        ini.set("model", "conv_kernel", self.conv_kernel);
        ini.set("model", "conv_stride", self.conv_stride);
        ini.set("model", "feature_pool", self.feature_pool);
        ini.set("model", "imu_hidden", self.imu_hidden);
        ini.set("model", "regressor_hidden", self.regressor_hidden);
        ini.set_list("model", "fc_widths", &self.fc_widths);
        ini.set_f64("model", "dropout", self.dropout);
        ini.set_f64("model", "leaky_slope", self.leaky_slope);
        ini.set("model", "selective_fusion", self.selective_fusion);
    }
}

/// Which feature channels reach the regressor. Excluded channels are fed as
/// zero vectors of the same length, so every mode shares one architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Full,
    NoHallucination,
    ThermalOnly,
    ImuOnly,
    ImuThermal,
    ImuFakeRgb,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Full,
        Mode::NoHallucination,
        Mode::ThermalOnly,
        Mode::ImuOnly,
        Mode::ImuThermal,
        Mode::ImuFakeRgb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoHallucination => "no_hallucination",
            Mode::ThermalOnly => "thermal_only",
            Mode::ImuOnly => "imu_only",
            Mode::ImuThermal => "imu_thermal",
            Mode::ImuFakeRgb => "imu_fake_rgb",
        }
    }

    pub fn uses_thermal(self) -> bool {
        matches!(self, Mode::Full | Mode::NoHallucination | Mode::ThermalOnly | Mode::ImuThermal)
    }

    pub fn uses_hallucination(self) -> bool {
        matches!(self, Mode::Full | Mode::ImuFakeRgb)
    }

    pub fn uses_imu(self) -> bool {
        !matches!(self, Mode::ThermalOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(&["mode"], format!("unknown mode '{s}'")))
    }
}

/// Dataset statistics applied before encoding: frames get a scalar
/// per-modality mean and scale, inertial channels a per-channel one.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub thermal_mean: f64,
    pub thermal_scale: f64,
    pub visual_mean: f64,
    pub visual_scale: f64,
    pub imu_mean: [f64; 6],
    pub imu_scale: [f64; 6],
}

impl Default for InputNorm {
    fn default() -> Self {
        Self {
            thermal_mean: 0.0,
            thermal_scale: 1.0,
            visual_mean: 0.0,
            visual_scale: 1.0,
            imu_mean: [0.0; 6],
            imu_scale: [1.0; 6],
        }
    }
}

impl InputNorm {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a crate::simulator::Sample>) -> Result<InputNorm> {
        let mut th = Moments::default();
        let mut vi = Moments::default();
        let mut imu = [Moments::default(); 6];
        for s in samples {
            th.extend(&s.thermal_pair.first.data);
            vi.extend(&s.visual_pair.first.data);
            for row in &s.imu_window.data {
                for (m, v) in imu.iter_mut().zip(row) {
                    m.push(*v);
                }
            }
        }
        if th.n == 0.0 {
            return Err(Error::Contract("normalization needs at least one sample".into()));
        }
        Ok(InputNorm {
            thermal_mean: th.mean(),
            thermal_scale: th.sd(),
            visual_mean: vi.mean(),
            visual_scale: vi.sd(),
            imu_mean: std::array::from_fn(|i| imu[i].mean()),
            imu_scale: std::array::from_fn(|i| imu[i].sd()),
        })
    }

    pub fn write_ini(&self, ini: &mut Ini) {
        ini.set_f64("norm", "thermal_mean", self.thermal_mean);
        ini.set_f64("norm", "thermal_scale", self.thermal_scale);
        ini.set_f64("norm", "visual_mean", self.visual_mean);
        ini.set_f64("norm", "visual_scale", self.visual_scale);
        ini.set_list("norm", "imu_mean", &self.imu_mean);
        ini.set_list("norm", "imu_scale", &self.imu_scale);
    }

    pub fn from_ini(ini: &Ini) -> Result<InputNorm> {
        let six = |key: &str| -> Result<[f64; 6]> {
            let v: Vec<f64> = ini.get_list("norm", key)?.ok_or_else(|| Error::config(&[&format!("norm.{key}")], "missing"))?;
            v.try_into()
                .map_err(|_| Error::config(&[&format!("norm.{key}")], "expected 6 values"))
        };
        Ok(InputNorm {
            thermal_mean: ini.require("norm", "thermal_mean")?,
            thermal_scale: ini.require("norm", "thermal_scale")?,
            visual_mean: ini.require("norm", "visual_mean")?,
            visual_scale: ini.require("norm", "visual_scale")?,
            imu_mean: six("imu_mean")?,
            imu_scale: six("imu_scale")?,
        })
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sq += v * v;
    }

    fn extend(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.push(v));
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    /// Standard deviation, floored so constant inputs stay finite.
    fn sd(&self) -> f64 {
        let m = self.mean();
        (self.sq / self.n - m * m).max(0.0).sqrt().max(1e-6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.conv_output(), (32, 2, 2));
        assert_eq!(c.d_feature(), 64);
        assert_eq!(c.d_imu(), 160);
        assert_eq!(c.d_fused(), 288);
        let t = ModelConfig::tiny();
        t.validate().unwrap();
        assert!(t.d_feature() <= 32 && t.d_imu() <= 32);
    }

    #[test]
    fn validation_names_keys() {
        let mut c = ModelConfig::default();
        c.fc_widths = vec![128, 64, 4];
        assert!(matches!(c.validate(), Err(Error::Config { keys, .. }) if keys == ["model.fc_widths"]));
        let mut c = ModelConfig::default();
        c.feature_pool = 3;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn ini_round_trip() {
        let mut c = ModelConfig::default();
        c.selective_fusion = false;
        c.conv_channels = vec![4, 8, 16];
        let mut ini = Ini::new();
        c.write_ini(&mut ini);
        assert_eq!(ModelConfig::from_ini(&Ini::parse(&ini.to_string()).unwrap()).unwrap(), c);
    }

    #[test]
    fn mode_channels() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!(!Mode::ThermalOnly.uses_imu());
        assert!(!Mode::ImuOnly.uses_thermal() && !Mode::ImuOnly.uses_hallucination());
        let chan = |m: Mode| (m.uses_thermal(), m.uses_hallucination(), m.uses_imu());
        assert_eq!(chan(Mode::NoHallucination), chan(Mode::ImuThermal));
        assert!("bogus".parse::<Mode>().is_err());
    }
}
