use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig};
use crate::seeds::derive_seed;
use crate::simulator::DatasetConfig;
use crate::training::TrainConfig;

/// A feature set and fusion setting evaluated as one ablation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub mode: Mode,
    pub selective_fusion: bool,
}

/// Feature-set spelling used in reports. `no_hallucination` feeds the same
/// channels as `imu_thermal` and is reported under that name.
pub fn feature_set(mode: Mode) -> &'static str {
    match mode {
        Mode::ThermalOnly => "thermal",
        Mode::ImuOnly => "imu",
        Mode::ImuThermal | Mode::NoHallucination => "imu+thermal",
        Mode::ImuFakeRgb => "imu+fake_rgb",
        Mode::Full => "imu+thermal+fake_rgb",
    }
}

fn parse_feature_set(s: &str) -> Result<Mode> {
    let m = match s {
        "thermal" => Mode::ThermalOnly,
        "imu" => Mode::ImuOnly,
        "imu+thermal" | "thermal+imu" => Mode::ImuThermal,
        "imu+fake_rgb" | "fake_rgb+imu" => Mode::ImuFakeRgb,
        "imu+thermal+fake_rgb" => Mode::Full,
        other => other.parse::<Mode>()?,
    };
    Ok(if m == Mode::NoHallucination { Mode::ImuThermal } else { m })
}

impl Variant {
    pub fn new(mode: Mode, selective_fusion: bool) -> Variant {
        Variant { mode, selective_fusion }
    }

    pub fn label(&self) -> String {
        format!("{}:{}", feature_set(self.mode), if self.selective_fusion { "on" } else { "off" })
    }

    /// Directory-safe form of the label.
    pub fn slug(&self) -> String {
        format!("{}_sf{}", self.mode.name(), if self.selective_fusion { "on" } else { "off" })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `features:on` or `features:off`; a bare feature set means SF on.
impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        let (fs, sf) = s.trim().split_once(':').unwrap_or((s.trim(), "on"));
        let selective_fusion = match sf.trim() {
            "on" | "sf" | "true" => true,
            "off" | "nosf" | "false" => false,
            other => return Err(Error::config(&["experiment.variants"], format!("fusion setting '{other}' is not on/off"))),
        };
        let mode = parse_feature_set(fs.trim()).map_err(|_| {
            Error::config(
                &["experiment.variants"],
                format!("unknown feature set '{fs}' (thermal, imu, imu+thermal, imu+fake_rgb, imu+thermal+fake_rgb)"),
            )
        })?;
        Ok(Variant { mode, selective_fusion })
    }
}

const EXPERIMENT_KEYS: &[&str] = &["test_sequences", "test_seed", "seeds", "variants", "rates", "huber_control"];

/// Everything an experiment needs: data generation, model, training
/// budget, the held-out test set and the seeds to repeat over.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub test_sequences: usize,
    pub test_seed: u64,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Sampling rates (fps) for the rate sweep.
    pub rates: Vec<f64>,
    /// Also run the loss comparison on an outlier-free copy of the data.
    pub huber_control: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        ExperimentConfig {
            test_seed: derive_seed(dataset.seed, &[0x7e57]),
            rates: default_rates(&dataset),
            dataset,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_sequences: 3,
            seeds: vec![1, 2, 3],
            variants: vec![
                Variant::new(Mode::ThermalOnly, true),
                Variant::new(Mode::ImuThermal, true),
                Variant::new(Mode::Full, true),
                Variant::new(Mode::Full, false),
            ],
            huber_control: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_ini(ini: &Ini) -> Result<ExperimentConfig> {
        ini.check_keys("experiment", EXPERIMENT_KEYS)?;
        let dataset = DatasetConfig::from_ini(ini)?;
        let model = ModelConfig::from_ini(ini)?;
        let train = TrainConfig::from_ini(ini)?;
        let d = ExperimentConfig::default();
        let variants = match ini.get_list::<String>("experiment", "variants")? {
            None => d.variants,
            Some(v) => v.iter().map(|s| s.parse()).collect::<Result<Vec<Variant>>>()?,
        };
        let cfg = ExperimentConfig {
            test_sequences: ini.get_or("experiment", "test_sequences", d.test_sequences)?,
            test_seed: ini.get_or("experiment", "test_seed", derive_seed(dataset.seed, &[0x7e57]))?,
            seeds: ini.get_list("experiment", "seeds")?.unwrap_or(d.seeds),
            variants,
            rates: ini
                .get_list("experiment", "rates")?
                .unwrap_or_else(|| default_rates(&dataset)),
            huber_control: ini.get_or("experiment", "huber_control", d.huber_control)?,
            dataset,
            model,
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = self.dataset.to_ini();
        self.model.write_ini(&mut ini);
        self.train.write_ini(&mut ini);
        ini.set("experiment", "test_sequences", self.test_sequences);
        ini.set("experiment", "test_seed", self.test_seed);
        ini.set_list("experiment", "seeds", &self.seeds);
        let v: Vec<String> = self.variants.iter().map(Variant::label).collect();
        ini.set("experiment", "variants", v.join(", "));
        ini.set_list("experiment", "rates", &self.rates);
        ini.set("experiment", "huber_control", self.huber_control);
        ini
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let r = &self.dataset.rig;
        if (self.model.width, self.model.height, self.model.channels) != (r.width, r.height, r.channels) {
            return Err(Error::config(
                &["model.width", "model.height", "model.channels", "rig.width", "rig.height", "rig.channels"],
                format!(
                    "model expects {}x{}x{} frames but the rig renders {}x{}x{}",
                    self.model.width, self.model.height, self.model.channels, r.width, r.height, r.channels
                ),
            ));
        }
        if self.test_sequences == 0 {
            return Err(Error::config(&["experiment.test_sequences"], "need at least one test sequence"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config(&["experiment.seeds"], "need at least one seed"));
        }
        if self.test_seed == self.dataset.seed {
            return Err(Error::config(
                &["experiment.test_seed", "dataset.seed"],
                "test sequences must not reuse the training seed",
            ));
        }
        if self.dataset.n_sequences <= self.train.val_sequences {
            return Err(Error::config(
                &["dataset.n_sequences", "train.val_sequences"],
                "no training sequences left after the validation split",
            ));
        }
        for &rate in &self.rates {
            self.at_rate(rate)?;
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration text, 16 hex digits.
    pub fn hash(&self) -> String {
        config_hash(&self.to_ini())
    }

    /// Held-out sequences from the same world and rig.
    pub fn test_dataset(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.test_seed,
            n_sequences: self.test_sequences,
            ..self.dataset.clone()
        }
    }

    /// The test set re-subsampled at `fps`.
    pub fn at_rate(&self, fps: f64) -> Result<DatasetConfig> {
        let cfg = DatasetConfig {
            subsample_fps: fps,
            ..self.test_dataset()
        };
        if !(fps > 0.0) || fps > cfg.rig.frame_rate {
            return Err(Error::config(
                &["experiment.rates", "rig.frame_rate"],
                format!("rate {fps} fps is not achievable from {} fps raw frames", cfg.rig.frame_rate),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

/// 0.5, 1, 2 and 3 times the training rate, keeping those the rig can
/// deliver with full inertial windows.
pub fn default_rates(dataset: &DatasetConfig) -> Vec<f64> {
    [0.5, 1.0, 2.0, 3.0]
        .iter()
        .map(|k| k * dataset.subsample_fps)
        .filter(|&fps| {
            DatasetConfig {
                subsample_fps: fps,
                ..dataset.clone()
            }
            .validate()
            .is_ok()
        })
        .collect()
}

pub fn config_hash(ini: &Ini) -> String {
    let digest = Sha256::digest(ini.to_string().as_bytes());
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_round_trip() {
        for m in Mode::ALL {
            for sf in [true, false] {
                let v = Variant::new(if m == Mode::NoHallucination { Mode::ImuThermal } else { m }, sf);
                assert_eq!(v.label().parse::<Variant>().unwrap(), v);
            }
        }
        assert_eq!("imu+thermal".parse::<Variant>().unwrap(), Variant::new(Mode::ImuThermal, true));
        assert!("radar:on".parse::<Variant>().is_err());
        assert!("imu:maybe".parse::<Variant>().is_err());
    }

    #[test]
    fn ini_round_trip_and_hash() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_ini(&Ini::parse(&cfg.to_ini().to_string()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = ExperimentConfig {
            seeds: vec![4],
            ..cfg.clone()
        };
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn rejects_bad_rates_and_shapes() {
        let mut cfg = ExperimentConfig::default();
        cfg.rates = vec![1e4];
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let mut cfg = ExperimentConfig::default();
        cfg.model.width += 1;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let mut ini = ExperimentConfig::default().to_ini();
        ini.set("experiment", "bogus", 1);
        assert!(ExperimentConfig::from_ini(&ini).is_err());
    }

    #[test]
    fn test_set_differs_from_training_set() {
        let cfg = ExperimentConfig::default();
        let t = cfg.test_dataset();
        assert_ne!(t.seed, cfg.dataset.seed);
        assert_eq!(t.world_seed, cfg.dataset.world_seed);
        assert_eq!(cfg.at_rate(2.0).unwrap().subsample_fps, 2.0);
        let fps = cfg.dataset.subsample_fps;
        assert_eq!(cfg.rates, vec![0.5 * fps, fps, 2.0 * fps]);
        let mut fast = cfg.dataset.clone();
        fast.rig.imu_rate = 400.0;
        assert_eq!(default_rates(&fast).len(), 4);
    }
}
