use crate::error::{Error, Result};
use crate::geometry::{ate, integrate, rpe, Pose6DoF, Trajectory};
use crate::model::{Bound, ClipBatch, FrameNeeds, InputNorm, Mode, ModelConfig, Outputs, ParamStore, Student, Teacher};
use crate::numcore::{Tape, Tensor};
use crate::simulator::{dead_reckon, Sequence};

use super::data::{build_batch, eval_clips, Clip, FeatureTable};

/// Common surface of the student and the teacher for batched inference.
pub trait PoseNet {
    fn config(&self) -> &ModelConfig;
    fn input_norm(&self) -> &InputNorm;
    fn params(&self) -> &ParamStore;
    /// Frames a forward pass in `mode` reads, given whether precomputed
    /// features are attached.
    fn needs(&self, mode: Mode, with_features: bool) -> FrameNeeds;
    fn attach(&self, batch: &mut ClipBatch, features: Tensor);
    fn run(&self, tape: &mut Tape, p: &Bound, batch: &ClipBatch, mode: Mode, training: bool, seed: u64) -> Result<Outputs>;
}

impl PoseNet for Student {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn needs(&self, mode: Mode, with_features: bool) -> FrameNeeds {
        FrameNeeds {
            thermal: mode.uses_thermal() || (mode.uses_hallucination() && !with_features),
            visual: false,
        }
    }

    fn attach(&self, batch: &mut ClipBatch, features: Tensor) {
        batch.halluc = Some(features);
    }

    fn run(&self, tape: &mut Tape, p: &Bound, batch: &ClipBatch, mode: Mode, training: bool, seed: u64) -> Result<Outputs> {
        self.forward(tape, p, batch, mode, training, seed)
    }
}

impl PoseNet for Teacher {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn needs(&self, _mode: Mode, with_features: bool) -> FrameNeeds {
        FrameNeeds {
            thermal: false,
            visual: !with_features,
        }
    }

    fn attach(&self, batch: &mut ClipBatch, features: Tensor) {
        batch.visual_features = Some(features);
    }

    fn run(&self, tape: &mut Tape, p: &Bound, batch: &ClipBatch, _mode: Mode, training: bool, seed: u64) -> Result<Outputs> {
        self.forward(tape, p, batch, training, seed)
    }
}

const EVAL_BATCH: usize = 32;

/// Predicted relative poses for every sample of `seqs[index]`. Recurrent
/// state is reset every `subseq_len` pairs, as in training.
pub fn predict_relative(
    net: &dyn PoseNet,
    seqs: &[&Sequence],
    index: usize,
    mode: Mode,
    features: Option<&FeatureTable>,
    subseq_len: usize,
) -> Result<Vec<Pose6DoF>> {
    let n = seqs[index].samples.len();
    let clips = eval_clips(index, n, subseq_len);
    let (full, rest): (Vec<Clip>, Vec<Clip>) = clips.into_iter().partition(|c| c.len == subseq_len);
    let groups = full.chunks(EVAL_BATCH).map(<[Clip]>::to_vec).chain((!rest.is_empty()).then_some(rest));
    let needs = net.needs(mode, features.is_some());
    let mut out = vec![Pose6DoF::identity(); n];
    for group in groups {
        let mut batch = build_batch(seqs, &group, net.config(), net.input_norm(), needs)?;
        if let Some(f) = features {
            net.attach(&mut batch, f.gather(&group)?);
        }
        let mut tape = Tape::new();
        let p = net.params().bind(&mut tape, |_| false);
        let o = net.run(&mut tape, &p, &batch, mode, false, 0)?;
        let (tr, ro) = (tape.value(o.trans).data(), tape.value(o.rot).data());
        for t in 0..batch.steps {
            for (b, c) in group.iter().enumerate() {
                let row = t * batch.batch + b;
                out[c.start + t] = Pose6DoF::from_arrays(
                    [tr[3 * row], tr[3 * row + 1], tr[3 * row + 2]],
                    [ro[3 * row], ro[3 * row + 1], ro[3 * row + 2]],
                );
            }
        }
    }
    Ok(out)
}

/// Chains relative poses from the first labelled frame pose.
pub fn chain(seq: &Sequence, rels: &[Pose6DoF]) -> Result<Trajectory> {
    let first = seq
        .samples
        .first()
        .ok_or_else(|| Error::Contract(format!("sequence {} has no samples", seq.id)))?;
    let times: Vec<f64> = std::iter::once(first.t0)
        .chain(seq.samples.iter().map(|s| s.t1))
        .collect();
    integrate(&seq.frame_gt.get(0).pose, rels, &times)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub ate: f64,
    pub rpe_t: f64,
    /// Degrees.
    pub rpe_r: f64,
}

impl EvalMetrics {
    pub fn mean(all: &[EvalMetrics]) -> EvalMetrics {
        let n = all.len().max(1) as f64;
        EvalMetrics {
            ate: all.iter().map(|m| m.ate).sum::<f64>() / n,
            rpe_t: all.iter().map(|m| m.rpe_t).sum::<f64>() / n,
            rpe_r: all.iter().map(|m| m.rpe_r).sum::<f64>() / n,
        }
    }
}

pub fn score(est: &Trajectory, reference: &Trajectory, delta: usize, max_dt: f64) -> Result<EvalMetrics> {
    let (rpe_t, rpe_r) = rpe(est, reference, delta, max_dt)?;
    Ok(EvalMetrics {
        ate: ate(est, reference, max_dt)?,
        rpe_t,
        rpe_r,
    })
}

/// Estimated trajectory and its metrics against the frame-rate ground truth.
pub fn evaluate_sequence(
    net: &dyn PoseNet,
    seqs: &[&Sequence],
    index: usize,
    mode: Mode,
    features: Option<&FeatureTable>,
    subseq_len: usize,
    delta: usize,
    max_dt: f64,
) -> Result<(Trajectory, EvalMetrics)> {
    let rels = predict_relative(net, seqs, index, mode, features, subseq_len)?;
    let est = chain(seqs[index], &rels)?;
    let m = score(&est, &seqs[index].frame_gt, delta, max_dt)?;
    Ok((est, m))
}

/// Mean metrics over all of `seqs`.
pub fn evaluate(
    net: &dyn PoseNet,
    seqs: &[&Sequence],
    mode: Mode,
    features: Option<&FeatureTable>,
    subseq_len: usize,
) -> Result<EvalMetrics> {
    let all = (0..seqs.len())
        .map(|i| {
            evaluate_sequence(net, seqs, i, mode, features, subseq_len, crate::geometry::DEFAULT_RPE_DELTA, crate::geometry::DEFAULT_MAX_DT)
                .map(|r| r.1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMetrics::mean(&all))
}

/// Strapdown integration of the (noisy, biased) IMU stream from the true
/// initial state.
pub fn dead_reckoning(seq: &Sequence) -> Result<Trajectory> {
    dead_reckon(&seq.imu, &seq.gt.get(0).pose, seq.initial_velocity())
}

pub fn dead_reckoning_metrics(seq: &Sequence, delta: usize, max_dt: f64) -> Result<EvalMetrics> {
    score(&dead_reckoning(seq)?, &seq.frame_gt, delta, max_dt)
}
