use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MIN_LANDMARKS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub appearance: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub landmarks: usize,
    /// Side length of the square floor area, meters.
    pub extent: f64,
    /// Landmarks are scattered between the floor and this height.
    pub height: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            landmarks: 600,
            extent: 30.0,
            height: 3.0,
        }
    }
}

/// Static landmark field. Appearance and temperature are drawn
/// independently, so each camera sees a different texture.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub extent: f64,
}

impl World {
    pub fn generate(seed: u64, cfg: &WorldConfig) -> Result<World> {
        if cfg.landmarks < MIN_LANDMARKS {
            return Err(Error::config(
                &["world.landmarks"],
                format!("need at least {MIN_LANDMARKS} landmarks, got {}", cfg.landmarks),
            ));
        }
        if !(cfg.extent > 0.0) || !(cfg.height > 0.0) {
            return Err(Error::config(
                &["world.extent", "world.height"],
                "world dimensions must be positive",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = cfg.extent / 2.0;
        let landmarks = (0..cfg.landmarks)
            .map(|_| Landmark {
                position: Vector3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(0.0..cfg.height),
                ),
                appearance: rng.random::<f64>(),
                temperature: rng.random::<f64>(),
            })
            .collect();
        Ok(World {
            landmarks,
            extent: cfg.extent,
        })
    }

    pub fn empty(extent: f64) -> World {
        World {
            landmarks: Vec::new(),
            extent,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let half = self.extent / 2.0;
        p[0].abs() <= half && p[1].abs() <= half
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_bounded() {
        let cfg = WorldConfig::default();
        let a = World::generate(3, &cfg).unwrap();
        assert_eq!(a, World::generate(3, &cfg).unwrap());
        assert_ne!(a, World::generate(4, &cfg).unwrap());
        assert_eq!(a.landmarks.len(), 600);
        assert!(a.landmarks.iter().all(|l| a.contains(&l.position)));
    }

    #[test]
    fn too_few_landmarks() {
        let cfg = WorldConfig {
            landmarks: 199,
            ..WorldConfig::default()
        };
        assert!(matches!(World::generate(0, &cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn fields_are_uncorrelated() {
        let w = World::generate(11, &WorldConfig { landmarks: 5000, ..WorldConfig::default() }).unwrap();
        let n = w.landmarks.len() as f64;
        let ma = w.landmarks.iter().map(|l| l.appearance).sum::<f64>() / n;
        let mt = w.landmarks.iter().map(|l| l.temperature).sum::<f64>() / n;
        let (mut cov, mut va, mut vt) = (0.0, 0.0, 0.0);
        for l in &w.landmarks {
            cov += (l.appearance - ma) * (l.temperature - mt);
            va += (l.appearance - ma).powi(2);
            vt += (l.temperature - mt).powi(2);
        }
        let corr = cov / (va * vt).sqrt();
        // 4 sigma for n = 5000.
        assert!(corr.abs() < 4.0 / n.sqrt(), "corr {corr}");
    }
}
