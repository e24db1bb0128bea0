//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.ini
//! <dir>/seq_000/groundtruth.txt      TUM, IMU rate
//! <dir>/seq_000/frames_gt.txt        TUM, frame timestamps
//! <dir>/seq_000/imu.csv              timestamp,gx,gy,gz,ax,ay,az
//! <dir>/seq_000/thermal.bin          frame container
//! <dir>/seq_000/visual.bin
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::geometry::Trajectory;

use super::dataset::{Dataset, DatasetConfig, Sequence};
use super::imu::ImuSample;
use super::render::Frame;
use super::world::World;

pub const FRAME_MAGIC: &[u8; 8] = b"TIOFRM01";
pub const MANIFEST: &str = "manifest.ini";

pub fn write_frames(path: &Path, frames: &[Arc<Frame>], width: usize, height: usize, channels: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(40 + frames.len() * width * height * channels * 8);
    buf.extend_from_slice(FRAME_MAGIC);
    for v in [width, height, channels, frames.len()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for f in frames {
        if (f.width, f.height, f.channels) != (width, height, channels) {
            return Err(Error::Contract("frame container requires uniform frame shapes".into()));
        }
        for v in &f.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<Arc<Frame>>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 40 || &buf[..8] != FRAME_MAGIC {
        return Err(Error::Format(format!("{}: not a frame container", path.display())));
    }
    let word = |i: usize| u64::from_le_bytes(buf[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize;
    let (w, h, c, n) = (word(0), word(1), word(2), word(3));
    let len = w * h * c;
    if buf.len() != 40 + n * len * 8 {
        return Err(Error::Format(format!(
            "{}: header announces {n} frames of {w}x{h}x{c} but file holds {} bytes",
            path.display(),
            buf.len()
        )));
    }
    // Identical consecutive frames (NUC holds) share one allocation again.
    let mut out: Vec<Arc<Frame>> = Vec::with_capacity(n);
    for i in 0..n {
        let start = 40 + i * len * 8;
        let data: Vec<f64> = buf[start..start + len * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        match out.last() {
            Some(prev) if prev.data == data => {
                let prev = Arc::clone(prev);
                out.push(prev);
            }
            _ => out.push(Arc::new(Frame {
                width: w,
                height: h,
                channels: c,
                data,
            })),
        }
    }
    Ok(out)
}

pub fn imu_to_csv(imu: &[ImuSample]) -> String {
    let mut out = String::from("timestamp,gx,gy,gz,ax,ay,az\n");
    for s in imu {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            s.timestamp, s.gyro[0], s.gyro[1], s.gyro[2], s.accel[0], s.accel[1], s.accel[2]
        );
    }
    out
}

pub fn parse_imu_csv(text: &str) -> Result<Vec<ImuSample>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "timestamp,gx,gy,gz,ax,ay,az" => {}
        other => return Err(Error::Format(format!("unexpected IMU CSV header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("IMU CSV line {}: {e}", i + 2)))?;
            if v.len() != 7 {
                return Err(Error::Format(format!("IMU CSV line {}: expected 7 fields", i + 2)));
            }
            Ok(ImuSample {
                timestamp: v[0],
                gyro: Vector3::new(v[1], v[2], v[3]),
                accel: Vector3::new(v[4], v[5], v[6]),
            })
        })
        .collect()
}

fn seq_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("seq_{id:03}"))
}

/// Manifest: the generating configuration plus per-sequence seeds.
pub fn manifest(ds: &Dataset) -> Ini {
    let mut ini = ds.config.to_ini();
    for s in &ds.sequences {
        let sec = format!("sequence.{}", s.id);
        ini.set(&sec, "profile", s.profile);
        ini.set(&sec, "seed", s.seed);
        ini.set_f64(&sec, "nuc_phase", s.nuc_phase);
        ini.set(&sec, "frames", s.thermal.len());
    }
    ini
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rig = &ds.config.rig;
    for s in &ds.sequences {
        let d = seq_dir(dir, s.id);
        std::fs::create_dir_all(&d)?;
        s.gt.write_tum(&d.join("groundtruth.txt"))?;
        s.frame_gt.write_tum(&d.join("frames_gt.txt"))?;
        std::fs::write(d.join("imu.csv"), imu_to_csv(&s.imu))?;
        write_frames(&d.join("thermal.bin"), &s.thermal, rig.width, rig.height, rig.channels)?;
        write_frames(&d.join("visual.bin"), &s.visual, rig.width, rig.height, rig.channels)?;
    }
    manifest(ds).write(&dir.join(MANIFEST))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ini = Ini::read(&dir.join(MANIFEST))?;
    let config = DatasetConfig::from_ini(&ini)?;
    let world = World::generate(config.world_seed, &config.world)?;
    let mut sequences = Vec::with_capacity(config.n_sequences);
    for id in 0..config.n_sequences {
        let sec = format!("sequence.{id}");
        let d = seq_dir(dir, id);
        let gt = Trajectory::read_tum(&d.join("groundtruth.txt"))?;
        let frame_gt = Trajectory::read_tum(&d.join("frames_gt.txt"))?;
        let imu = parse_imu_csv(&std::fs::read_to_string(d.join("imu.csv"))?)?;
        let thermal = read_frames(&d.join("thermal.bin"))?;
        let visual = read_frames(&d.join("visual.bin"))?;
        let samples = Sequence::build_samples(&imu, &frame_gt, &thermal, &visual)?;
        sequences.push(Sequence {
            id,
            profile: ini.require::<String>(&sec, "profile")?.parse()?,
            seed: ini.require(&sec, "seed")?,
            nuc_phase: ini.require(&sec, "nuc_phase")?,
            gt,
            imu,
            frame_gt,
            thermal,
            visual,
            samples,
        });
    }
    Ok(Dataset {
        config,
        world,
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::dataset::make_dataset;

    #[test]
    fn frame_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Arc::new(Frame {
            width: 2,
            height: 1,
            channels: 2,
            data: vec![0.1, -2.5, 1e-300, f64::MAX],
        });
        let g = Arc::new(Frame {
            data: vec![1.0, 2.0, 3.0, 4.0],
            ..(*f).clone()
        });
        let p = dir.path().join("f.bin");
        write_frames(&p, &[f.clone(), g.clone()], 2, 1, 2).unwrap();
        let back = read_frames(&p).unwrap();
        assert_eq!(*back[0], *f);
        assert_eq!(*back[1], *g);
        std::fs::write(&p, b"garbage").unwrap();
        assert!(matches!(read_frames(&p), Err(Error::Format(_))));
    }

    #[test]
    fn imu_csv_round_trip() {
        let imu = vec![ImuSample {
            timestamp: 0.005,
            gyro: Vector3::new(0.1, -0.2, 1e-17),
            accel: Vector3::new(0.0, 0.3, 9.81),
        }];
        assert_eq!(parse_imu_csv(&imu_to_csv(&imu)).unwrap(), imu);
        assert!(parse_imu_csv("a,b\n").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let cfg = DatasetConfig {
            n_sequences: 2,
            duration: 8.0,
            ..DatasetConfig::default()
        };
        let ds = make_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.config, ds.config);
        assert_eq!(back.world, ds.world);
        for (a, b) in ds.sequences.iter().zip(&back.sequences) {
            assert_eq!(a.imu, b.imu);
            assert_eq!(a.thermal, b.thermal);
            assert_eq!(a.visual, b.visual);
            assert_eq!(a.frame_times(), b.frame_times());
            assert_eq!((a.seed, a.nuc_phase, a.profile), (b.seed, b.nuc_phase, b.profile));
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert!((x.rel_pose_gt.t - y.rel_pose_gt.t).norm() < 1e-12);
                assert_eq!(x.imu_window, y.imu_window);
            }
        }
    }
}
