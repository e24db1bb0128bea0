use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::seeds::derive_seed;
use crate::simulator::{FramePair, ImuWindow, Sample, IMU_WINDOW};

use super::config::{InputNorm, Mode, ModelConfig};
use super::layers::{conv_encoder, fc_stack, init_conv_encoder, init_fc, init_lstm, lstm_step, LstmState};
use super::params::{Bound, ParamStore};

pub const STUDENT_GROUPS: [&str; 5] = ["thermal", "halluc", "imu", "fusion", "regressor"];
pub const TEACHER_GROUPS: [&str; 3] = ["visual", "imu", "regressor"];

/// `B` clips of `T` consecutive samples, laid out step-major: row
/// `t * B + b` holds clip `b` at step `t`.
#[derive(Clone, Debug)]
pub struct ClipBatch {
    pub batch: usize,
    pub steps: usize,
    /// `[T*B, 2c, h, w]`
    pub thermal: Option<Tensor>,
    pub visual: Option<Tensor>,
    /// `T * IMU_WINDOW` tensors of shape `[B, 6]`, index `t * IMU_WINDOW + k`.
    pub imu: Vec<Tensor>,
    /// `[T*B, 6]`: translation then Euler rotation.
    pub targets: Tensor,
    /// Precomputed hallucination features `[T*B, d]`.
    pub halluc: Option<Tensor>,
    /// Precomputed (or substituted) visual features `[T*B, d]`.
    pub visual_features: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FrameNeeds {
    pub thermal: bool,
    pub visual: bool,
}

pub fn check_frame(cfg: &ModelConfig, pair: &FramePair) -> Result<()> {
    for f in [&pair.first, &pair.second] {
        if (f.width, f.height, f.channels) != (cfg.width, cfg.height, cfg.channels) {
            return Err(Error::config(
                &["model.width", "model.height", "model.channels"],
                format!(
                    "frame is {}x{}x{} but the model expects {}x{}x{}",
                    f.width, f.height, f.channels, cfg.width, cfg.height, cfg.channels
                ),
            ));
        }
        if f.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("frame holds non-finite pixels".into()));
        }
    }
    Ok(())
}

fn push_pair(out: &mut Vec<f64>, pair: &FramePair, mean: f64, scale: f64) {
    let inv = 1.0 / scale;
    out.extend(pair.first.data.iter().map(|v| (v - mean) * inv));
    out.extend(pair.second.data.iter().map(|v| (v - mean) * inv));
}

/// Stacked, normalised frame pairs `[n, 2c, h, w]`.
pub fn pairs_tensor<'a>(
    cfg: &ModelConfig,
    pairs: impl IntoIterator<Item = &'a FramePair>,
    mean: f64,
    scale: f64,
) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for p in pairs {
        check_frame(cfg, p)?;
        push_pair(&mut data, p, mean, scale);
        n += 1;
    }
    Tensor::new(vec![n, 2 * cfg.channels, cfg.height, cfg.width], data)
}

pub fn imu_row(norm: &InputNorm, window: &ImuWindow, k: usize) -> [f64; 6] {
    std::array::from_fn(|c| (window.data[k][c] - norm.imu_mean[c]) / norm.imu_scale[c])
}

impl ClipBatch {
    pub fn new(clips: &[Vec<&Sample>], cfg: &ModelConfig, norm: &InputNorm, needs: FrameNeeds) -> Result<ClipBatch> {
        let batch = clips.len();
        let steps = clips.first().map_or(0, Vec::len);
        if batch == 0 || steps == 0 || clips.iter().any(|c| c.len() != steps) {
            return Err(Error::Contract("clip batch needs equally long, non-empty clips".into()));
        }
        let ordered: Vec<&Sample> = (0..steps).flat_map(|t| clips.iter().map(move |c| c[t])).collect();
        let thermal = needs
            .thermal
            .then(|| pairs_tensor(cfg, ordered.iter().map(|s| &s.thermal_pair), norm.thermal_mean, norm.thermal_scale))
            .transpose()?;
        let visual = needs
            .visual
            .then(|| pairs_tensor(cfg, ordered.iter().map(|s| &s.visual_pair), norm.visual_mean, norm.visual_scale))
            .transpose()?;
        let mut imu = Vec::with_capacity(steps * IMU_WINDOW);
        for t in 0..steps {
            for k in 0..IMU_WINDOW {
                let data: Vec<f64> = clips.iter().flat_map(|c| imu_row(norm, &c[t].imu_window, k)).collect();
                imu.push(Tensor::new(vec![batch, 6], data)?);
            }
        }
        let targets: Vec<f64> = ordered
            .iter()
            .flat_map(|s| s.rel_pose_gt.to_array())
            .collect();
        Ok(ClipBatch {
            batch,
            steps,
            thermal,
            visual,
            imu,
            targets: Tensor::new(vec![steps * batch, 6], targets)?,
            halluc: None,
            visual_features: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.steps
    }
}

/// Per-row predictions, same layout as [`ClipBatch::targets`].
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub trans: Var,
    pub rot: Var,
    /// `(m_T, m_H, m_I)` when selective fusion is enabled.
    pub masks: Option<(Var, Var, Var)>,
}

fn imu_features(tape: &mut Tape, p: &Bound, prefix: &str, cfg: &ModelConfig, batch: &ClipBatch) -> Result<Var> {
    let mut state = LstmState::zeros(tape, batch.batch, cfg.imu_hidden);
    let mut per_step = Vec::with_capacity(batch.steps);
    for t in 0..batch.steps {
        let mut hs = Vec::with_capacity(IMU_WINDOW);
        for k in 0..IMU_WINDOW {
            let x = tape.constant(batch.imu[t * IMU_WINDOW + k].clone());
            state = lstm_step(tape, p, prefix, x, state)?;
            hs.push(state.h);
        }
        per_step.push(tape.concat(&hs, 1)?);
    }
    tape.concat(&per_step, 0)
}

/// Masks conditioned on all channels, then elementwise gating.
pub fn fuse(tape: &mut Tape, p: &Bound, a_t: Var, a_h: Var, a_i: Var) -> Result<(Var, Var, Var, Var)> {
    let x = tape.concat(&[a_t, a_h, a_i], 1)?;
    let mut masks = Vec::with_capacity(3);
    for (name, a) in [("fusion.w_t", a_t), ("fusion.w_h", a_h), ("fusion.w_i", a_i)] {
        let w = p.get(name)?;
        let wt = tape.transpose(w)?;
        let z = tape.matmul(x, wt)?;
        let m = tape.sigmoid(z);
        if tape.shape(m) != tape.shape(a) {
            return Err(Error::config(
                &["model"],
                format!("fusion weight '{name}' does not match its feature length"),
            ));
        }
        masks.push(m);
    }
    let gt = tape.mul(a_t, masks[0])?;
    let gh = tape.mul(a_h, masks[1])?;
    let gi = tape.mul(a_i, masks[2])?;
    let fused = tape.concat(&[gt, gh, gi], 1)?;
    Ok((masks[0], masks[1], masks[2], fused))
}

fn regress(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    features: Var,
    batch: usize,
    steps: usize,
    training: bool,
    seed: u64,
) -> Result<(Var, Var)> {
    let mut state = LstmState::zeros(tape, batch, cfg.regressor_hidden);
    let mut trans = Vec::with_capacity(steps);
    let mut rot = Vec::with_capacity(steps);
    let layers = cfg.fc_widths.len();
    for t in 0..steps {
        let x = tape.slice(features, 0, t * batch, batch)?;
        state = lstm_step(tape, p, "regressor.lstm", x, state)?;
        let s = derive_seed(seed, &[t as u64]);
        trans.push(fc_stack(
            tape,
            p,
            "regressor.trans",
            layers,
            state.h,
            cfg.leaky_slope,
            cfg.dropout,
            training,
            derive_seed(s, &[0]),
        )?);
        rot.push(fc_stack(
            tape,
            p,
            "regressor.rot",
            layers,
            state.h,
            cfg.leaky_slope,
            cfg.dropout,
            training,
            derive_seed(s, &[1]),
        )?);
    }
    Ok((tape.concat(&trans, 0)?, tape.concat(&rot, 0)?))
}

fn init_regressor(store: &mut ParamStore, seed: u64, cfg: &ModelConfig, input: usize) {
    init_lstm(store, seed, "regressor.lstm", input, cfg.regressor_hidden);
    init_fc(store, seed, "regressor.trans", cfg.regressor_hidden, &cfg.fc_widths);
    init_fc(store, seed, "regressor.rot", cfg.regressor_hidden, &cfg.fc_widths);
}

fn missing(what: &str, mode: &str) -> Error {
    Error::config(&["mode"], format!("mode {mode} needs {what}, which the batch does not carry"))
}

/// Student network: thermal, hallucination and inertial encoders, selective
/// fusion and the recurrent regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    pub cfg: ModelConfig,
    pub norm: InputNorm,
    pub params: ParamStore,
}

impl Student {
    pub fn new(cfg: ModelConfig, norm: InputNorm, seed: u64) -> Result<Student> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        init_conv_encoder(&mut params, seed, "thermal", &cfg);
        init_conv_encoder(&mut params, seed, "halluc", &cfg);
        init_lstm(&mut params, seed, "imu.lstm", 6, cfg.imu_hidden);
        if cfg.selective_fusion {
            let d = cfg.d_fused();
            let bound = 1.0 / (d as f64).sqrt();
            params.insert_uniform(seed, "fusion.w_t", &[cfg.d_feature(), d], bound);
            params.insert_uniform(seed, "fusion.w_h", &[cfg.d_feature(), d], bound);
            params.insert_uniform(seed, "fusion.w_i", &[cfg.d_imu(), d], bound);
        }
        init_regressor(&mut params, seed, &cfg, cfg.d_fused());
        Ok(Student { cfg, norm, params })
    }

    /// Copies a teacher's visual encoder into the hallucination encoder.
    pub fn init_hallucination_from(&mut self, teacher: &Teacher) -> Result<()> {
        if teacher.cfg.d_feature() != self.cfg.d_feature() {
            return Err(Error::config(&["model"], "teacher and student feature sizes differ"));
        }
        self.params.copy_group(&teacher.params, "visual", "halluc")
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &ClipBatch,
        mode: Mode,
        training: bool,
        seed: u64,
    ) -> Result<Outputs> {
        let cfg = &self.cfg;
        let rows = batch.rows();
        let d = cfg.d_feature();
        let frames = match &batch.thermal {
            Some(t) if mode.uses_thermal() || (mode.uses_hallucination() && batch.halluc.is_none()) => {
                Some(tape.constant(t.clone()))
            }
            _ => None,
        };
        let a_t = if mode.uses_thermal() {
            let x = frames.ok_or_else(|| missing("thermal frames", mode.name()))?;
            conv_encoder(tape, p, "thermal", cfg, x)?
        } else {
            tape.constant(Tensor::zeros(&[rows, d]))
        };
        let a_h = if mode.uses_hallucination() {
            match &batch.halluc {
                Some(f) => tape.constant(f.clone()),
                None => {
                    let x = frames.ok_or_else(|| missing("thermal frames", mode.name()))?;
                    conv_encoder(tape, p, "halluc", cfg, x)?
                }
            }
        } else {
            tape.constant(Tensor::zeros(&[rows, d]))
        };
        let a_i = if mode.uses_imu() {
            imu_features(tape, p, "imu.lstm", cfg, batch)?
        } else {
            tape.constant(Tensor::zeros(&[rows, cfg.d_imu()]))
        };
        let (fused, masks) = if cfg.selective_fusion {
            let (mt, mh, mi, fused) = fuse(tape, p, a_t, a_h, a_i)?;
            (fused, Some((mt, mh, mi)))
        } else {
            (tape.concat(&[a_t, a_h, a_i], 1)?, None)
        };
        let (trans, rot) = regress(tape, p, cfg, fused, batch.batch, batch.steps, training, seed)?;
        Ok(Outputs { trans, rot, masks })
    }

    pub fn encode_thermal(&self, pair: &FramePair) -> Result<Tensor> {
        encode_pair(&self.params, "thermal", &self.cfg, pair, self.norm.thermal_mean, self.norm.thermal_scale)
    }

    pub fn encode_hallucination(&self, pair: &FramePair) -> Result<Tensor> {
        encode_pair(&self.params, "halluc", &self.cfg, pair, self.norm.thermal_mean, self.norm.thermal_scale)
    }

    /// Hallucination features for many pairs at once, `[n, d]`.
    pub fn encode_hallucination_batch<'a>(&self, pairs: impl IntoIterator<Item = &'a FramePair>) -> Result<Tensor> {
        encode_batch(&self.params, "halluc", &self.cfg, pairs, self.norm.thermal_mean, self.norm.thermal_scale)
    }

    pub fn encode_imu(&self, window: &ImuWindow, state: Option<&(Tensor, Tensor)>) -> Result<(Tensor, (Tensor, Tensor))> {
        encode_imu_window(&self.params, "imu.lstm", &self.cfg, &self.norm, window, state)
    }
}

/// VINet-style teacher: visual encoder, inertial encoder and regressor over
/// the plain concatenation `[a_V; a_I]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub cfg: ModelConfig,
    pub norm: InputNorm,
    pub params: ParamStore,
}

impl Teacher {
    pub fn new(cfg: ModelConfig, norm: InputNorm, seed: u64) -> Result<Teacher> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        init_conv_encoder(&mut params, seed, "visual", &cfg);
        init_lstm(&mut params, seed, "imu.lstm", 6, cfg.imu_hidden);
        init_regressor(&mut params, seed, &cfg, cfg.d_teacher());
        Ok(Teacher { cfg, norm, params })
    }

    /// Uses `batch.visual_features` instead of encoding frames when present.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &ClipBatch, training: bool, seed: u64) -> Result<Outputs> {
        let cfg = &self.cfg;
        let a_v = match (&batch.visual_features, &batch.visual) {
            (Some(f), _) => {
                if f.shape() != [batch.rows(), cfg.d_feature()] {
                    return Err(Error::config(&["model"], format!("substituted features have shape {:?}", f.shape())));
                }
                tape.constant(f.clone())
            }
            (None, Some(v)) => {
                let x = tape.constant(v.clone());
                conv_encoder(tape, p, "visual", cfg, x)?
            }
            (None, None) => return Err(missing("visual frames or features", "teacher")),
        };
        let a_i = imu_features(tape, p, "imu.lstm", cfg, batch)?;
        let x = tape.concat(&[a_v, a_i], 1)?;
        let (trans, rot) = regress(tape, p, cfg, x, batch.batch, batch.steps, training, seed)?;
        Ok(Outputs { trans, rot, masks: None })
    }

    pub fn encode_visual(&self, pair: &FramePair) -> Result<Tensor> {
        encode_pair(&self.params, "visual", &self.cfg, pair, self.norm.visual_mean, self.norm.visual_scale)
    }

    pub fn encode_visual_batch<'a>(&self, pairs: impl IntoIterator<Item = &'a FramePair>) -> Result<Tensor> {
        encode_batch(&self.params, "visual", &self.cfg, pairs, self.norm.visual_mean, self.norm.visual_scale)
    }
}

fn encode_batch<'a>(
    params: &ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    pairs: impl IntoIterator<Item = &'a FramePair>,
    mean: f64,
    scale: f64,
) -> Result<Tensor> {
    let x = pairs_tensor(cfg, pairs, mean, scale)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, |_| false);
    let xv = tape.constant(x);
    let a = conv_encoder(&mut tape, &p, prefix, cfg, xv)?;
    Ok(tape.value(a).clone())
}

fn encode_pair(params: &ParamStore, prefix: &str, cfg: &ModelConfig, pair: &FramePair, mean: f64, scale: f64) -> Result<Tensor> {
    let t = encode_batch(params, prefix, cfg, [pair], mean, scale)?;
    t.reshape(&[cfg.d_feature()])
}

fn encode_imu_window(
    params: &ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    norm: &InputNorm,
    window: &ImuWindow,
    state: Option<&(Tensor, Tensor)>,
) -> Result<(Tensor, (Tensor, Tensor))> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, |_| false);
    let mut st = match state {
        Some((h, c)) => LstmState {
            h: tape.constant(h.reshape(&[1, cfg.imu_hidden])?),
            c: tape.constant(c.reshape(&[1, cfg.imu_hidden])?),
        },
        None => LstmState::zeros(&mut tape, 1, cfg.imu_hidden),
    };
    let mut hs = Vec::with_capacity(IMU_WINDOW);
    for k in 0..IMU_WINDOW {
        let x = tape.constant(Tensor::new(vec![1, 6], imu_row(norm, window, k).to_vec())?);
        st = lstm_step(&mut tape, &p, prefix, x, st)?;
        hs.push(st.h);
    }
    let a = tape.concat(&hs, 1)?;
    Ok((
        tape.value(a).reshape(&[cfg.d_imu()])?,
        (
            tape.value(st.h).reshape(&[cfg.imu_hidden])?,
            tape.value(st.c).reshape(&[cfg.imu_hidden])?,
        ),
    ))
}

/// Masks and fused features for single feature vectors.
pub struct Fusion {
    pub m_t: Tensor,
    pub m_h: Tensor,
    pub m_i: Tensor,
    pub fused: Tensor,
}

pub fn selective_fusion(params: &ParamStore, a_t: &Tensor, a_h: &Tensor, a_i: &Tensor) -> Result<Fusion> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, |_| false);
    let row = |tape: &mut Tape, a: &Tensor| -> Result<Var> { Ok(tape.constant(a.reshape(&[1, a.len()])?)) };
    let (vt, vh, vi) = (row(&mut tape, a_t)?, row(&mut tape, a_h)?, row(&mut tape, a_i)?);
    let fused_dim = a_t.len() + a_h.len() + a_i.len();
    for name in ["fusion.w_t", "fusion.w_h", "fusion.w_i"] {
        if params.get(name)?.shape()[1] != fused_dim {
            return Err(Error::config(&["model"], format!("'{name}' expects {} inputs, got {fused_dim}", params.get(name)?.shape()[1])));
        }
    }
    let (mt, mh, mi, fused) = fuse(&mut tape, &p, vt, vh, vi)?;
    let flat = |v: Var| tape.value(v).reshape(&[tape.value(v).len()]);
    Ok(Fusion {
        m_t: flat(mt)?,
        m_h: flat(mh)?,
        m_i: flat(mi)?,
        fused: flat(fused)?,
    })
}

/// One regressor step on a single fused vector.
pub fn regress_pose(
    params: &ParamStore,
    cfg: &ModelConfig,
    fused: &Tensor,
    state: Option<&(Tensor, Tensor)>,
    training: bool,
    seed: u64,
) -> Result<([f64; 3], [f64; 3], (Tensor, Tensor))> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, |_| false);
    let x = tape.constant(fused.reshape(&[1, fused.len()])?);
    let st = match state {
        Some((h, c)) => LstmState {
            h: tape.constant(h.reshape(&[1, cfg.regressor_hidden])?),
            c: tape.constant(c.reshape(&[1, cfg.regressor_hidden])?),
        },
        None => LstmState::zeros(&mut tape, 1, cfg.regressor_hidden),
    };
    let st = lstm_step(&mut tape, &p, "regressor.lstm", x, st)?;
    let layers = cfg.fc_widths.len();
    let s = derive_seed(seed, &[0]);
    let tr = fc_stack(&mut tape, &p, "regressor.trans", layers, st.h, cfg.leaky_slope, cfg.dropout, training, derive_seed(s, &[0]))?;
    let ro = fc_stack(&mut tape, &p, "regressor.rot", layers, st.h, cfg.leaky_slope, cfg.dropout, training, derive_seed(s, &[1]))?;
    let arr = |v: Var| -> [f64; 3] { std::array::from_fn(|i| tape.value(v).data()[i]) };
    Ok((
        arr(tr),
        arr(ro),
        (
            tape.value(st.h).reshape(&[cfg.regressor_hidden])?,
            tape.value(st.c).reshape(&[cfg.regressor_hidden])?,
        ),
    ))
}
