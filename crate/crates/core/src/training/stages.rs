use std::collections::BTreeMap;
use std::path::Path;

use crate::config::Ini;

use crate::error::{Error, Result};
use crate::model::{
    group_of, layers::conv_encoder, Bound, Checkpoint, ClipBatch, FrameNeeds, InputNorm, Mode, ModelConfig, ParamStore, Student, Teacher,
};
use crate::numcore::{Tape, Var};
use crate::seeds::derive_seed;
use crate::simulator::Sequence;

use super::config::{Stage, TrainConfig};
use super::data::{build_batch, epoch_batches, eval_clips, Clip, FeatureTable, TrainData};
use super::eval::{evaluate, PoseNet};
use super::loss::{hallucination_loss, regression_loss, split_targets};
use super::optim::{Optimizer, OptimizerKind, Schedule};
use super::run::{EpochRecord, RunDir, CHECKPOINT_FILE, FINAL_FILE};

pub use super::run::{metrics_csv, parse_metrics};

/// Models the stage driver can checkpoint and update.
pub trait Trainable: Sized {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn checkpoint(&self) -> Checkpoint;
    fn restore(ck: &Checkpoint) -> Result<Self>;
}

impl Trainable for Student {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn checkpoint(&self) -> Checkpoint {
        self.to_checkpoint()
    }

    fn restore(ck: &Checkpoint) -> Result<Self> {
        Student::from_checkpoint(ck)
    }
}

impl Trainable for Teacher {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn checkpoint(&self) -> Checkpoint {
        self.to_checkpoint()
    }

    fn restore(ck: &Checkpoint) -> Result<Self> {
        Teacher::from_checkpoint(ck)
    }
}

/// A contiguous range of epochs sharing trainable groups and an optimizer.
pub struct Phase {
    pub first: usize,
    pub last: usize,
    pub groups: Vec<&'static str>,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
}

impl Phase {
    fn trains(&self, name: &str) -> bool {
        self.groups.contains(&group_of(name))
    }
}

type LossFn<'a, M> = dyn Fn(&M, &mut Tape, &Bound, &ClipBatch, u64) -> Result<Var> + 'a;
type BuildFn<'a> = dyn Fn(&[Clip]) -> Result<ClipBatch> + 'a;
type ValFn<'a, M> = dyn Fn(&M) -> Result<Option<f64>> + 'a;

struct Job<'a, M> {
    stage: Stage,
    seed: u64,
    lengths: Vec<usize>,
    cfg: &'a TrainConfig,
    build: &'a BuildFn<'a>,
    loss: &'a LossFn<'a, M>,
    validate: &'a ValFn<'a, M>,
}

fn train_state(ck: &mut Checkpoint, stage: Stage, epoch: usize, seed: u64) {
    ck.config.set("train_state", "stage", stage);
    ck.config.set("train_state", "epoch", epoch);
    ck.config.set("train_state", "seed", seed);
}

fn diverged(epoch: usize, reason: String, run: Option<&RunDir>) -> Error {
    let hint = run
        .map(|r| format!("; last good checkpoint: {}", r.file(CHECKPOINT_FILE).display()))
        .unwrap_or_default();
    Error::Diverged {
        epoch,
        reason: format!("{reason}{hint}"),
    }
}

/// One epoch over freshly planned batches; returns the mean batch loss.
fn epoch<M: Trainable>(model: &mut M, opt: &mut Optimizer, phase: &Phase, job: &Job<'_, M>, epoch: usize, run: Option<&RunDir>) -> Result<f64> {
    let lr = phase.schedule.lr(epoch - phase.first + 1);
    let plan = epoch_batches(&job.lengths, job.cfg.subseq_len, job.cfg.batch_size, job.seed, epoch);
    if plan.is_empty() {
        return Err(Error::config(
            &["train.subseq_len"],
            format!("no training sequence holds {} pairs", job.cfg.subseq_len),
        ));
    }
    let mut total = 0.0;
    for (bi, clips) in plan.iter().enumerate() {
        let batch = (job.build)(clips)?;
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, |n| phase.trains(n));
        let l = (job.loss)(model, &mut tape, &p, &batch, derive_seed(job.seed, &[epoch as u64, bi as u64]))?;
        let value = tape.value(l).item();
        if !value.is_finite() {
            return Err(diverged(epoch, format!("loss became {value} at batch {bi}"), run));
        }
        let g = tape.backward(l)?;
        let grads: BTreeMap<String, _> = p
            .iter()
            .filter(|(n, _)| phase.trains(n))
            .map(|(n, v)| (n.clone(), g.get(*v)))
            .collect();
        opt.update(model.params_mut(), &grads, lr)
            .map_err(|e| diverged(epoch, e.to_string(), run))?;
        total += value;
    }
    Ok(total / plan.len() as f64)
}

/// Runs `phases` in order, resuming from `run` when it holds progress.
fn drive<M: Trainable>(model: &mut M, phases: &[Phase], job: &Job<'_, M>, run: Option<&RunDir>) -> Result<Vec<EpochRecord>> {
    let mut done = 0;
    let mut records = Vec::new();
    let mut resumed_opt = None;
    if let Some(r) = run {
        if let Some(ck) = r.final_checkpoint()? {
            *model = M::restore(&ck)?;
            return r.records();
        }
        if let Some(ck) = r.latest()? {
            *model = M::restore(&ck)?;
            done = ck.config.require("train_state", "epoch")?;
            resumed_opt = Some(Optimizer::from_checkpoint(&ck)?);
            records = r.records()?;
            records.retain(|x| x.epoch <= done);
            r.write_records(&records)?;
        } else {
            r.write_records(&[])?;
        }
    }
    for phase in phases {
        if phase.last <= done {
            continue;
        }
        let mut opt = match resumed_opt.take() {
            Some(o) if done >= phase.first => o,
            _ => Optimizer::new(phase.optimizer),
        };
        for e in (done + 1).max(phase.first)..=phase.last {
            let loss = epoch(model, &mut opt, phase, job, e, run)?;
            let rec = EpochRecord {
                epoch: e,
                loss,
                val_ate: (job.validate)(model)?,
                lr: phase.schedule.lr(e - phase.first + 1),
            };
            records.push(rec);
            if let Some(r) = run {
                r.append(&rec)?;
                if e % r.checkpoint_every == 0 {
                    let mut ck = model.checkpoint();
                    opt.write_checkpoint(&mut ck);
                    train_state(&mut ck, job.stage, e, job.seed);
                    ck.save(&r.file(CHECKPOINT_FILE))?;
                }
            }
        }
    }
    if let Some(r) = run {
        let mut ck = model.checkpoint();
        let last = phases.last().map_or(0, |p| p.last);
        train_state(&mut ck, job.stage, last, job.seed);
        ck.save(&r.file(FINAL_FILE))?;
    }
    Ok(records)
}

fn lengths(seqs: &[&Sequence]) -> Vec<usize> {
    seqs.iter().map(|s| s.samples.len()).collect()
}

fn stage_seed(cfg: &TrainConfig, stage: Stage) -> u64 {
    derive_seed(cfg.seed, &[stage as u64 + 1])
}

fn pose_loss<N: PoseNet>(net: &N, tape: &mut Tape, p: &Bound, batch: &ClipBatch, mode: Mode, cfg: &TrainConfig, training: bool, seed: u64) -> Result<Var> {
    let o = net.run(tape, p, batch, mode, training, seed)?;
    let (t, r) = split_targets(tape, &batch.targets)?;
    regression_loss(tape, o.trans, o.rot, t, r, cfg.alpha, cfg.delta)
}

fn val_ate<N: PoseNet>(net: &N, val: &[&Sequence], mode: Mode, features: Option<&FeatureTable>, cfg: &TrainConfig) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(net, val, mode, features, cfg.subseq_len)?.ate))
}

/// Trains the visual-inertial teacher end to end on the pose loss.
pub fn train_teacher(teacher: &mut Teacher, data: &TrainData<'_>, cfg: &TrainConfig, run: Option<&RunDir>) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let (mc, norm) = (teacher.cfg.clone(), teacher.norm.clone());
    let needs = FrameNeeds {
        thermal: false,
        visual: true,
    };
    let build = |c: &[Clip]| build_batch(&data.train, c, &mc, &norm, needs);
    let loss = |m: &Teacher, tape: &mut Tape, p: &Bound, b: &ClipBatch, seed: u64| pose_loss(m, tape, p, b, Mode::Full, cfg, true, seed);
    let validate = |m: &Teacher| val_ate(m, &data.val, Mode::Full, None, cfg);
    let job = Job {
        stage: Stage::Teacher,
        seed: stage_seed(cfg, Stage::Teacher),
        lengths: lengths(&data.train),
        cfg,
        build: &build,
        loss: &loss,
        validate: &validate,
    };
    let phases = [Phase {
        first: 1,
        last: cfg.teacher_epochs,
        groups: vec!["visual", "imu", "regressor"],
        optimizer: cfg.rmsprop(),
        schedule: cfg.decayed(cfg.teacher_lr),
    }];
    drive(teacher, &phases, &job, run)
}

/// Stage 1: distils the frozen teacher's visual features into the
/// hallucination encoder. Only `halluc.*` parameters change.
pub fn train_stage1(student: &mut Student, teacher: &Teacher, data: &TrainData<'_>, cfg: &TrainConfig, run: Option<&RunDir>) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if teacher.cfg.d_feature() != student.cfg.d_feature() {
        return Err(Error::config(&["model"], "teacher and student feature sizes differ"));
    }
    let targets = FeatureTable::visual(teacher, &data.train)?;
    let (mc, norm) = (student.cfg.clone(), student.norm.clone());
    let needs = FrameNeeds {
        thermal: true,
        visual: false,
    };
    let build = |c: &[Clip]| {
        let mut b = build_batch(&data.train, c, &mc, &norm, needs)?;
        b.visual_features = Some(targets.gather(c)?);
        Ok(b)
    };
    let loss = |m: &Student, tape: &mut Tape, p: &Bound, b: &ClipBatch, _seed: u64| -> Result<Var> {
        let frames = b.thermal.as_ref().ok_or_else(|| Error::Contract("stage 1 batch lacks thermal frames".into()))?;
        let x = tape.constant(frames.clone());
        let a_h = conv_encoder(tape, p, "halluc", &m.cfg, x)?;
        let target = b.visual_features.as_ref().ok_or_else(|| Error::Contract("stage 1 batch lacks targets".into()))?;
        let a_v = tape.constant(target.clone());
        hallucination_loss(tape, a_h, a_v, cfg.delta, cfg.loss)
    };
    let validate = |m: &Student| -> Result<Option<f64>> {
        if data.val.is_empty() {
            return Ok(None);
        }
        let fake = FeatureTable::hallucination(m, &data.val)?;
        val_ate(teacher, &data.val, Mode::Full, Some(&fake), cfg)
    };
    let job = Job {
        stage: Stage::Hallucination,
        seed: stage_seed(cfg, Stage::Hallucination),
        lengths: lengths(&data.train),
        cfg,
        build: &build,
        loss: &loss,
        validate: &validate,
    };
    let phases = [Phase {
        first: 1,
        last: cfg.stage1_epochs,
        groups: vec!["halluc"],
        optimizer: cfg.adam(),
        schedule: Schedule::constant(cfg.stage1_lr),
    }];
    drive(student, &phases, &job, run)
}

fn halluc_tables(student: &Student, data: &TrainData<'_>, mode: Mode) -> Result<(Option<FeatureTable>, Option<FeatureTable>)> {
    if !mode.uses_hallucination() {
        return Ok((None, None));
    }
    Ok((
        Some(FeatureTable::hallucination(student, &data.train)?),
        Some(FeatureTable::hallucination(student, &data.val)?),
    ))
}

fn odometry_job<'a>(
    student: &Student,
    data: &'a TrainData<'a>,
    cfg: &'a TrainConfig,
    train_feats: Option<&'a FeatureTable>,
) -> (impl Fn(&[Clip]) -> Result<ClipBatch> + 'a, Vec<usize>) {
    let (mc, norm) = (student.cfg.clone(), student.norm.clone());
    let needs = student.needs(cfg.mode, train_feats.is_some());
    let build = move |c: &[Clip]| {
        let mut b = build_batch(&data.train, c, &mc, &norm, needs)?;
        if let Some(f) = train_feats {
            b.halluc = Some(f.gather(c)?);
        }
        Ok(b)
    };
    (build, lengths(&data.train))
}

const STAGE2_GROUPS: [&str; 4] = ["thermal", "imu", "fusion", "regressor"];

/// Stage 2: trains everything but the (frozen) hallucination encoder on the
/// pose loss, in `cfg.mode`.
pub fn train_stage2(student: &mut Student, data: &TrainData<'_>, cfg: &TrainConfig, run: Option<&RunDir>) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let (train_feats, val_feats) = halluc_tables(student, data, cfg.mode)?;
    let (build, lens) = odometry_job(student, data, cfg, train_feats.as_ref());
    let loss = |m: &Student, tape: &mut Tape, p: &Bound, b: &ClipBatch, seed: u64| pose_loss(m, tape, p, b, cfg.mode, cfg, true, seed);
    let validate = |m: &Student| val_ate(m, &data.val, cfg.mode, val_feats.as_ref(), cfg);
    let job = Job {
        stage: Stage::Odometry,
        seed: stage_seed(cfg, Stage::Odometry),
        lengths: lens,
        cfg,
        build: &build,
        loss: &loss,
        validate: &validate,
    };
    let phases = [Phase {
        first: 1,
        last: cfg.epochs,
        groups: STAGE2_GROUPS.to_vec(),
        optimizer: cfg.rmsprop(),
        schedule: cfg.decayed(cfg.stage2_lr),
    }];
    drive(student, &phases, &job, run)
}

/// Alternates fusion-only and regressor-only phases at the final stage-2
/// learning rate. Without selective fusion only regressor phases run.
pub fn finetune_alternating(student: &mut Student, data: &TrainData<'_>, cfg: &TrainConfig, run: Option<&RunDir>) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let (train_feats, val_feats) = halluc_tables(student, data, cfg.mode)?;
    let (build, lens) = odometry_job(student, data, cfg, train_feats.as_ref());
    let loss = |m: &Student, tape: &mut Tape, p: &Bound, b: &ClipBatch, seed: u64| pose_loss(m, tape, p, b, cfg.mode, cfg, true, seed);
    let validate = |m: &Student| val_ate(m, &data.val, cfg.mode, val_feats.as_ref(), cfg);
    let job = Job {
        stage: Stage::Finetune,
        seed: stage_seed(cfg, Stage::Finetune),
        lengths: lens,
        cfg,
        build: &build,
        loss: &loss,
        validate: &validate,
    };
    let lr = cfg.decayed(cfg.stage2_lr).lr(cfg.epochs.max(1));
    let mut groups: Vec<&'static str> = Vec::new();
    for _ in 0..cfg.finetune_rounds {
        if student.cfg.selective_fusion {
            groups.push("fusion");
        }
        groups.push("regressor");
    }
    let phases: Vec<Phase> = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| Phase {
            first: i * cfg.finetune_epochs + 1,
            last: (i + 1) * cfg.finetune_epochs,
            groups: vec![g],
            optimizer: cfg.rmsprop(),
            schedule: Schedule::constant(lr),
        })
        .collect();
    drive(student, &phases, &job, run)
}

/// Mean eval-mode pose loss over the validation sequences.
pub fn validation_loss(student: &Student, seqs: &[&Sequence], cfg: &TrainConfig) -> Result<f64> {
    let feats = if cfg.mode.uses_hallucination() {
        Some(FeatureTable::hallucination(student, seqs)?)
    } else {
        None
    };
    let needs = student.needs(cfg.mode, feats.is_some());
    let mut total = 0.0;
    let mut rows = 0usize;
    for (i, s) in seqs.iter().enumerate() {
        for clip in eval_clips(i, s.samples.len(), cfg.subseq_len) {
            let mut b = build_batch(seqs, &[clip], &student.cfg, &student.norm, needs)?;
            if let Some(f) = &feats {
                b.halluc = Some(f.gather(&[clip])?);
            }
            let mut tape = Tape::new();
            let p = student.params.bind(&mut tape, |_| false);
            let l = pose_loss(student, &mut tape, &p, &b, cfg.mode, cfg, false, 0)?;
            total += tape.value(l).item() * b.rows() as f64;
            rows += b.rows();
        }
    }
    if rows == 0 {
        return Err(Error::Contract("validation loss over zero samples".into()));
    }
    Ok(total / rows as f64)
}

/// Trained teacher and stage-1 student, shared by odometry variants.
#[derive(Clone, Debug)]
pub struct Base {
    pub teacher: Teacher,
    pub student: Student,
    pub history: BTreeMap<&'static str, Vec<EpochRecord>>,
}

/// Teacher, student and the per-stage loss curves of a full pipeline.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub teacher: Teacher,
    pub student: Student,
    pub history: BTreeMap<&'static str, Vec<EpochRecord>>,
}

fn stage_run(root: Option<&Path>, stage: Stage, snapshot: &Ini, every: usize) -> Result<Option<RunDir>> {
    root.map(|r| RunDir::open(&r.join(stage.name()), snapshot, every)).transpose()
}

/// Configuration snapshot a stage run directory is keyed on.
pub fn run_snapshot(model: &ModelConfig, cfg: &TrainConfig, norm: &InputNorm) -> Ini {
    let mut ini = Ini::default();
    model.write_ini(&mut ini);
    cfg.write_ini(&mut ini);
    norm.write_ini(&mut ini);
    ini
}

/// Teacher training then stage 1. The hallucination encoder starts from the
/// trained teacher's visual encoder.
pub fn train_base(data: &TrainData<'_>, model: &ModelConfig, cfg: &TrainConfig, root: Option<&Path>) -> Result<Base> {
    let norm = InputNorm::from_samples(data.train.iter().flat_map(|s| s.samples.iter()))?;
    let snap = run_snapshot(model, cfg, &norm);
    let mut history = BTreeMap::new();
    let mut teacher = Teacher::new(model.clone(), norm.clone(), derive_seed(cfg.seed, &[100]))?;
    let run = stage_run(root, Stage::Teacher, &snap, cfg.checkpoint_every)?;
    history.insert(Stage::Teacher.name(), train_teacher(&mut teacher, data, cfg, run.as_ref())?);
    let (student, h) = train_hallucination(&teacher, data, cfg, root)?;
    history.insert(Stage::Hallucination.name(), h);
    Ok(Base {
        teacher,
        student,
        history,
    })
}

/// Stage 1 for a fresh student seeded as in [`train_base`], starting from
/// the teacher's visual encoder.
pub fn train_hallucination(
    teacher: &Teacher,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    root: Option<&Path>,
) -> Result<(Student, Vec<EpochRecord>)> {
    let mut student = Student::new(teacher.cfg.clone(), teacher.norm.clone(), derive_seed(cfg.seed, &[101]))?;
    student.init_hallucination_from(teacher)?;
    let snap = run_snapshot(&teacher.cfg, cfg, &teacher.norm);
    let run = stage_run(root, Stage::Hallucination, &snap, cfg.checkpoint_every)?;
    let history = train_stage1(&mut student, teacher, data, cfg, run.as_ref())?;
    Ok((student, history))
}

/// Fresh student of a possibly different fusion setting that reuses the
/// trained hallucination encoder of `base`. All other parameters are drawn
/// from `seed`, name by name, so variants share their common weights.
pub fn odometry_variant(base: &Student, selective_fusion: bool, seed: u64) -> Result<Student> {
    let cfg = ModelConfig {
        selective_fusion,
        ..base.cfg.clone()
    };
    let mut s = Student::new(cfg, base.norm.clone(), seed)?;
    s.params.copy_group(&base.params, "halluc", "halluc")?;
    Ok(s)
}

/// Stage 2 and the alternating fine-tune for one feature set (`cfg.mode`)
/// and fusion setting.
pub fn train_variant(
    base: &Student,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    selective_fusion: bool,
    root: Option<&Path>,
) -> Result<(Student, BTreeMap<&'static str, Vec<EpochRecord>>)> {
    let mut student = odometry_variant(base, selective_fusion, derive_seed(cfg.seed, &[102]))?;
    let snap = run_snapshot(&student.cfg, cfg, &student.norm);
    let mut history = BTreeMap::new();
    let run = stage_run(root, Stage::Odometry, &snap, cfg.checkpoint_every)?;
    history.insert(Stage::Odometry.name(), train_stage2(&mut student, data, cfg, run.as_ref())?);
    let run = stage_run(root, Stage::Finetune, &snap, cfg.checkpoint_every)?;
    history.insert(Stage::Finetune.name(), finetune_alternating(&mut student, data, cfg, run.as_ref())?);
    Ok((student, history))
}

/// Teacher, stage 1, stage 2 and the alternating fine-tune in sequence.
/// With `root`, each stage keeps a run directory below it and resumes.
pub fn train_pipeline(data: &TrainData<'_>, model: &ModelConfig, cfg: &TrainConfig, root: Option<&Path>) -> Result<Pipeline> {
    let base = train_base(data, model, cfg, root)?;
    let (student, h) = train_variant(&base.student, data, cfg, model.selective_fusion, root)?;
    let mut history = base.history;
    history.extend(h);
    Ok(Pipeline {
        teacher: base.teacher,
        student,
        history,
    })
}
