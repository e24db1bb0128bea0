//! Command implementations behind the `tio-forge` binary.

pub mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use tio_forge_core::config::Ini;
use tio_forge_core::experiments::{
    ablate_modalities, config_hash, csv_table, fps_sensitivity, huber_vs_l2, num, trajectory_plot, validate_hallucination,
    ExperimentConfig, Report,
};
use tio_forge_core::geometry::{Pose6DoF, Trajectory};
use tio_forge_core::model::{Checkpoint, InputNorm, Mode, ModelConfig, Student, Teacher};
use tio_forge_core::seeds::derive_seed;
use tio_forge_core::simulator::{load_dataset, make_dataset, manifest as dataset_manifest, save_dataset, Dataset, DatasetConfig, Sequence};
use tio_forge_core::training::{
    chain, evaluate_sequence, finetune_alternating, odometry_variant, run_snapshot, score, train_base, train_hallucination,
    train_pipeline, train_stage2, train_teacher, EvalMetrics, PoseNet, RunDir, Stage, TrainConfig, TrainData, CONFIG_FILE,
    FINAL_FILE,
};
use tio_forge_core::{Error, Result};

use manifest::{RunManifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "tio-forge", version, about = "Thermal-inertial odometry: simulate, train, evaluate, experiment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Teacher,
    Hallucination,
    Odometry,
    Finetune,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage (or all) into a run root with one directory per stage.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Upstream checkpoint; defaults to `<out>/<previous stage>/final.bin`.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "full")]
        mode: Vec<String>,
        #[arg(long, default_value_t = tio_forge_core::geometry::DEFAULT_MAX_DT)]
        max_dt: f64,
        #[arg(long, default_value_t = tio_forge_core::geometry::DEFAULT_RPE_DELTA)]
        rpe_delta: usize,
        /// Chain ground-truth relative poses instead of predictions.
        #[arg(long)]
        oracle: bool,
    },
    /// Modality and fusion ablation.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        assert: bool,
    },
    /// ATE against image sampling rate.
    FpsSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Student to sweep; trained from the config when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        assert: bool,
    },
    /// Teacher driven by real versus hallucinated features.
    ValidateHallucination {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run root holding `teacher/` and `hallucination/`; trained when absent.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        assert: bool,
        #[arg(long, default_value_t = 0.15)]
        ks_max: f64,
    },
    /// Huber against L2 hallucination training on NUC-affected data.
    HuberVsL2 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        assert: bool,
    },
    /// Re-run the command recorded in a manifest into a new directory.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// A directional or threshold assertion did not hold.
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Assertion(m) => write!(f, "assertion failed: {m}"),
        }
    }
}

impl Failure {
    /// 2 configuration, 3 missing prerequisite, 4 incompatible inputs,
    /// 5 failed assertion, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Core(Error::Config { .. } | Error::Parameter(_)) => 2,
            Failure::Core(Error::Dependency(_)) => 3,
            Failure::Core(Error::Compatibility(_)) => 4,
            Failure::Assertion(_) => 5,
            Failure::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(path: Option<&Path>) -> Result<Ini> {
    path.map_or_else(|| Ok(Ini::new()), Ini::read)
}

/// Points every stochastic source at `seed`.
pub fn apply_seed(ini: &mut Ini, seed: u64) -> Result<()> {
    ini.set("dataset", "seed", seed);
    ini.set("dataset", "world_seed", derive_seed(seed, &[1]));
    ini.set("train", "seed", seed);
    let n = ini.get_list::<u64>("experiment", "seeds")?.map_or(3, |v| v.len().max(1));
    let seeds: Vec<u64> = (0..n as u64).map(|k| derive_seed(seed, &[2, k])).collect();
    ini.set_list("experiment", "seeds", &seeds);
    ini.set("experiment", "test_seed", derive_seed(seed, &[3]));
    Ok(())
}

fn resolved(config: Option<&Path>, seed: Option<u64>) -> Result<Ini> {
    let mut ini = load_config(config)?;
    if let Some(s) = seed {
        apply_seed(&mut ini, s)?;
    }
    Ok(ini)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

/// Hash of the sensor rig a dataset was rendered with.
pub fn rig_hash(cfg: &DatasetConfig) -> String {
    config_hash(&cfg.to_ini().subset(&["rig"]))
}

fn check_frames(model: &ModelConfig, rig: &DatasetConfig) -> Result<()> {
    let r = &rig.rig;
    if (model.width, model.height, model.channels) != (r.width, r.height, r.channels) {
        return Err(Error::Compatibility(format!(
            "model takes {}x{}x{} frames but the dataset holds {}x{}x{}",
            model.width, model.height, model.channels, r.width, r.height, r.channels
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let ini = resolved(config.as_deref(), seed)?;
            simulate(&ini, config.as_deref(), &out)
        }
        Command::Train {
            config,
            data,
            out,
            stage,
            init,
            seed,
        } => {
            let ini = resolved(config.as_deref(), seed)?;
            train(&ini, config.as_deref(), &data, &out, stage, init.as_deref())
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            mode,
            max_dt,
            rpe_delta,
            oracle,
        } => eval(checkpoint.as_deref(), &data, &out, &mode, max_dt, rpe_delta, oracle),
        Command::Ablate { config, out, seed, assert } => {
            let ini = resolved(config.as_deref(), seed)?;
            ablate(&ini, config.as_deref(), &out, assert)
        }
        Command::FpsSweep {
            config,
            out,
            rates,
            checkpoint,
            seed,
            assert,
        } => {
            let mut ini = resolved(config.as_deref(), seed)?;
            if let Some(r) = rates {
                ini.set_list("experiment", "rates", &r);
            }
            fps_sweep(&ini, config.as_deref(), &out, checkpoint.as_deref(), assert)
        }
        Command::ValidateHallucination {
            config,
            out,
            run,
            seed,
            assert,
            ks_max,
        } => {
            let ini = resolved(config.as_deref(), seed)?;
            validate(&ini, config.as_deref(), &out, run.as_deref(), assert, ks_max)
        }
        Command::HuberVsL2 { config, out, seed, assert } => {
            let ini = resolved(config.as_deref(), seed)?;
            huber(&ini, config.as_deref(), &out, assert)
        }
        Command::Replay { manifest, out } => replay(&manifest, &out),
    }
}

pub fn simulate(ini: &Ini, config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = DatasetConfig::from_ini(ini)?;
    eprintln!("simulating {} sequences of {} s", cfg.n_sequences, cfg.duration);
    let ds = make_dataset(&cfg)?;
    save_dataset(&ds, out)?;
    // The dataset manifest doubles as the run manifest.
    let m = RunManifest::new("simulate", config, dataset_manifest(&ds), vec![cfg.seed, cfg.world_seed]);
    m.finish(out)?;
    Ok(())
}

fn prerequisite_path(root: &Path, stage: Stage, init: Option<&Path>) -> Result<Option<PathBuf>> {
    let Some(pre) = stage.prerequisite() else {
        return Ok(None);
    };
    let path = init.map_or_else(|| root.join(pre.name()).join(FINAL_FILE), Path::to_path_buf);
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "stage '{stage}' needs a finished '{pre}' stage: {} not found",
            path.display()
        )));
    }
    Ok(Some(absolute(&path)?))
}

pub fn train(ini: &Ini, config: Option<&Path>, data_dir: &Path, root: &Path, stage: StageArg, init: Option<&Path>) -> CliResult<()> {
    let stages: Vec<Stage> = match stage {
        StageArg::Teacher => vec![Stage::Teacher],
        StageArg::Hallucination => vec![Stage::Hallucination],
        StageArg::Odometry => vec![Stage::Odometry],
        StageArg::Finetune => vec![Stage::Finetune],
        StageArg::All => Stage::ALL.to_vec(),
    };
    let model = ModelConfig::from_ini(ini)?;
    let tc = TrainConfig::from_ini(ini)?;
    // Fail on a missing prerequisite before touching the data.
    prerequisite_path(root, stages[0], init)?;
    let ds = load_dataset(data_dir)?;
    check_frames(&model, &ds.config)?;
    let data = TrainData::split(&ds, tc.val_sequences)?;
    let data_abs = absolute(data_dir)?;
    for (i, &st) in stages.iter().enumerate() {
        let pre = prerequisite_path(root, st, if i == 0 { init } else { None })?;
        eprintln!("training stage {st}");
        train_stage(st, &model, &tc, &data, root, pre.as_deref())?;
        let mut m = RunManifest::new("train", config, ini.subset(&["model", "train"]), vec![tc.seed])
            .arg("stage", st.name())
            .arg("data", data_abs.display())
            .arg("data_rig_hash", rig_hash(&ds.config));
        if let Some(p) = &pre {
            m = m.arg("init", p.display());
        }
        m.finish(&root.join(st.name()))?;
    }
    Ok(())
}

fn load_teacher(path: &Path) -> Result<Teacher> {
    Teacher::from_checkpoint(&Checkpoint::load(path)?)
}

fn load_student(path: &Path) -> Result<Student> {
    Student::from_checkpoint(&Checkpoint::load(path)?)
}

fn same_model(found: &ModelConfig, model: &ModelConfig, what: &str) -> Result<()> {
    let strip = |m: &ModelConfig| ModelConfig {
        selective_fusion: true,
        ..m.clone()
    };
    if strip(found) != strip(model) {
        return Err(Error::Compatibility(format!("{what} was trained with a different model configuration")));
    }
    Ok(())
}

fn train_stage(st: Stage, model: &ModelConfig, tc: &TrainConfig, data: &TrainData<'_>, root: &Path, pre: Option<&Path>) -> Result<()> {
    let every = tc.checkpoint_every;
    let dir = root.join(st.name());
    match st {
        Stage::Teacher => {
            let norm = InputNorm::from_samples(data.train.iter().flat_map(|s| s.samples.iter()))?;
            let mut teacher = Teacher::new(model.clone(), norm.clone(), derive_seed(tc.seed, &[100]))?;
            let run = RunDir::open(&dir, &run_snapshot(model, tc, &norm), every)?;
            train_teacher(&mut teacher, data, tc, Some(&run))?;
        }
        Stage::Hallucination => {
            let teacher = load_teacher(pre.expect("prerequisite checked"))?;
            same_model(&teacher.cfg, model, "the teacher")?;
            train_hallucination(&teacher, data, tc, Some(root))?;
        }
        Stage::Odometry => {
            let base = load_student(pre.expect("prerequisite checked"))?;
            same_model(&base.cfg, model, "the hallucination student")?;
            let mut student = odometry_variant(&base, model.selective_fusion, derive_seed(tc.seed, &[102]))?;
            let run = RunDir::open(&dir, &run_snapshot(&student.cfg, tc, &student.norm), every)?;
            train_stage2(&mut student, data, tc, Some(&run))?;
        }
        Stage::Finetune => {
            let mut student = load_student(pre.expect("prerequisite checked"))?;
            same_model(&student.cfg, model, "the odometry student")?;
            let run = RunDir::open(&dir, &run_snapshot(&student.cfg, tc, &student.norm), every)?;
            finetune_alternating(&mut student, data, tc, Some(&run))?;
        }
    }
    Ok(())
}

enum Net {
    Student(Student),
    Teacher(Teacher),
}

impl Net {
    fn as_dyn(&self) -> &dyn PoseNet {
        match self {
            Net::Student(s) => s,
            Net::Teacher(t) => t,
        }
    }
}

fn load_net(path: &Path) -> Result<(Net, Ini)> {
    let ck = Checkpoint::load(path)?;
    let kind: String = ck.config.require("checkpoint", "kind")?;
    let net = match kind.as_str() {
        "student" => Net::Student(Student::from_checkpoint(&ck)?),
        "teacher" => Net::Teacher(Teacher::from_checkpoint(&ck)?),
        other => return Err(Error::Compatibility(format!("unknown checkpoint kind '{other}'"))),
    };
    let mut cfg = ck.config.clone();
    cfg.remove_section("train_state");
    Ok((net, cfg))
}

/// Rig hash and subsequence length recorded by the training run that wrote
/// `checkpoint`, when its directory holds them.
fn training_context(checkpoint: &Path) -> Result<(Option<String>, usize)> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let hash = match dir.join(MANIFEST_FILE) {
        p if p.exists() => RunManifest::read(&p)?.get("data_rig_hash").map(str::to_string),
        _ => None,
    };
    let subseq = match dir.join(CONFIG_FILE) {
        p if p.exists() => TrainConfig::from_ini(&Ini::read(&p)?.subset(&["train"]))?.subseq_len,
        _ => TrainConfig::default().subseq_len,
    };
    Ok((hash, subseq))
}

#[allow(clippy::too_many_arguments)]
pub fn eval(checkpoint: Option<&Path>, data_dir: &Path, out: &Path, modes: &[String], max_dt: f64, rpe_delta: usize, oracle: bool) -> CliResult<()> {
    let ds = load_dataset(data_dir)?;
    let seqs: Vec<&Sequence> = ds.sequences.iter().collect();
    let mut snapshot = Ini::new();
    snapshot.merge(&ds.config.to_ini());
    let mut runs: Vec<(String, Vec<(Trajectory, EvalMetrics)>)> = Vec::new();
    if oracle {
        let mut rows = Vec::new();
        for s in &seqs {
            let rels: Vec<Pose6DoF> = s.samples.iter().map(|x| x.rel_pose_gt).collect();
            let est = chain(s, &rels)?;
            let m = score(&est, &s.frame_gt, rpe_delta, max_dt)?;
            rows.push((est, m));
        }
        runs.push(("oracle".into(), rows));
    } else {
        let path = checkpoint.ok_or_else(|| Error::config(&["checkpoint"], "eval needs --checkpoint unless --oracle"))?;
        let (net, ck_cfg) = load_net(path)?;
        let (hash, subseq) = training_context(path)?;
        if let Some(h) = hash {
            let found = rig_hash(&ds.config);
            if h != found {
                return Err(Error::Compatibility(format!(
                    "checkpoint was trained on rig {h} but the dataset was rendered with rig {found}"
                ))
                .into());
            }
        }
        check_frames(net.as_dyn().config(), &ds.config)?;
        snapshot.merge(&ck_cfg);
        let modes: Vec<Mode> = match &net {
            Net::Teacher(_) => vec![Mode::Full],
            Net::Student(_) => modes.iter().map(|m| m.trim().parse()).collect::<Result<_>>()?,
        };
        for mode in modes {
            let rows = (0..seqs.len())
                .map(|i| evaluate_sequence(net.as_dyn(), &seqs, i, mode, None, subseq, rpe_delta, max_dt))
                .collect::<Result<Vec<_>>>()?;
            let label = if matches!(net, Net::Teacher(_)) { "teacher".to_string() } else { mode.name().to_string() };
            runs.push((label, rows));
        }
    }
    snapshot.set("eval", "max_dt", num(max_dt));
    snapshot.set("eval", "rpe_delta", rpe_delta);
    let hash = config_hash(&snapshot);
    std::fs::create_dir_all(out)?;
    let mut table = Vec::new();
    let mut summary = format!("evaluation\nconfig hash: {hash}\n");
    for (label, rows) in &runs {
        let dir = out.join("trajectories").join(label);
        std::fs::create_dir_all(&dir)?;
        for ((est, m), s) in rows.iter().zip(&seqs) {
            est.write_tum(&dir.join(format!("seq_{:03}.txt", s.id)))?;
            table.push(vec![hash.clone(), label.clone(), s.id.to_string(), num(m.ate), num(m.rpe_t), num(m.rpe_r)]);
        }
        let mean = EvalMetrics::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
        table.push(vec![hash.clone(), label.clone(), "mean".into(), num(mean.ate), num(mean.rpe_t), num(mean.rpe_r)]);
        let _ = writeln!(summary, "{label:<18} ate {:.4} m  rpe_t {:.4} m  rpe_r {:.4} deg", mean.ate, mean.rpe_t, mean.rpe_r);
    }
    let csv = csv_table(&["config_hash", "mode", "seq", "ate_m", "rpe_t_m", "rpe_r_deg"], table)?;
    let plots = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let est: Vec<(&str, &Trajectory)> = runs.iter().map(|(l, rows)| (l.as_str(), &rows[i].0)).collect();
            (format!("trajectory_seq_{:03}.svg", s.id), trajectory_plot(&format!("sequence {}", s.id), &s.frame_gt, &est))
        })
        .collect();
    Report {
        name: "metrics".into(),
        csv,
        summary,
        plots,
    }
    .write(out)?;
    let mut m = RunManifest::new("eval", None, snapshot, vec![])
        .arg("data", absolute(data_dir)?.display())
        .arg("mode", modes.join(","))
        .arg("max_dt", num(max_dt))
        .arg("rpe_delta", rpe_delta)
        .arg("oracle", oracle);
    if let Some(c) = checkpoint {
        m = m.arg("checkpoint", absolute(c)?.display());
    }
    m.finish(out)?;
    Ok(())
}

fn experiment(ini: &Ini) -> Result<ExperimentConfig> {
    ExperimentConfig::from_ini(ini)
}

fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    eprintln!("generating {} training and {} test sequences", cfg.dataset.n_sequences, cfg.test_sequences);
    Ok((make_dataset(&cfg.dataset)?, make_dataset(&cfg.test_dataset())?))
}

fn finish_experiment(name: &str, cfg: &ExperimentConfig, config: Option<&Path>, out: &Path, report: &Report, extra: &[(&str, String)]) -> Result<()> {
    report.write(out)?;
    eprint!("{}", report.summary);
    let mut m = RunManifest::new(name, config, cfg.to_ini(), cfg.seeds.clone());
    for (k, v) in extra {
        m = m.arg(k, v);
    }
    m.finish(out)?;
    Ok(())
}

fn assert_all(checks: &[(String, bool)]) -> CliResult<()> {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(failed.join("; ")))
    }
}

pub fn ablate(ini: &Ini, config: Option<&Path>, out: &Path, assert: bool) -> CliResult<()> {
    let cfg = experiment(ini)?;
    let (train, test) = datasets(&cfg)?;
    let r = ablate_modalities(&cfg, &train, &test, Some(&out.join("runs")))?;
    finish_experiment("ablate", &cfg, config, out, &r.report()?, &[("assert", assert.to_string())])?;
    if assert {
        assert_all(&r.checks().iter().map(|c| (c.line(), c.passed())).collect::<Vec<_>>())?;
    }
    Ok(())
}

pub fn fps_sweep(ini: &Ini, config: Option<&Path>, out: &Path, checkpoint: Option<&Path>, assert: bool) -> CliResult<()> {
    let cfg = experiment(ini)?;
    let student = match checkpoint {
        Some(p) => {
            let s = load_student(p)?;
            check_frames(&s.cfg, &cfg.dataset)?;
            s
        }
        None => {
            let train = make_dataset(&cfg.dataset)?;
            let data = TrainData::split(&train, cfg.train.val_sequences)?;
            let tc = cfg.train_config(cfg.seeds[0]);
            train_pipeline(&data, &cfg.model, &tc, Some(&out.join("runs")))?.student
        }
    };
    let curve = fps_sensitivity(&student, &cfg, &cfg.rates, cfg.train.mode)?;
    let mut extra = vec![("assert", assert.to_string())];
    if let Some(p) = checkpoint {
        extra.push(("checkpoint", absolute(p)?.display().to_string()));
    }
    finish_experiment("fps-sweep", &cfg, config, out, &curve.report()?, &extra)?;
    if assert {
        assert_all(&[
            ("minimum at training rate".into(), curve.minimum_at_train_rate()),
            ("rates >= 2x training strictly worse".into(), curve.faster_is_worse() != Some(false)),
        ])?;
    }
    Ok(())
}

pub fn validate(ini: &Ini, config: Option<&Path>, out: &Path, run: Option<&Path>, assert: bool, ks_max: f64) -> CliResult<()> {
    let cfg = experiment(ini)?;
    let seed = cfg.seeds[0];
    let (teacher, student) = match run {
        Some(root) => {
            let t = prerequisite_path(root, Stage::Hallucination, None)?.expect("teacher path");
            let s = prerequisite_path(root, Stage::Odometry, None)?.expect("hallucination path");
            (load_teacher(&t)?, load_student(&s)?)
        }
        None => {
            let train = make_dataset(&cfg.dataset)?;
            let data = TrainData::split(&train, cfg.train.val_sequences)?;
            let base = train_base(&data, &cfg.model, &cfg.train_config(seed), Some(&out.join("runs")))?;
            (base.teacher, base.student)
        }
    };
    let test = make_dataset(&cfg.test_dataset())?;
    let seqs: Vec<&Sequence> = test.sequences.iter().collect();
    let mut r = validate_hallucination(
        &teacher,
        &student,
        &seqs,
        cfg.train.subseq_len,
        tio_forge_core::geometry::DEFAULT_RPE_DELTA,
        tio_forge_core::geometry::DEFAULT_MAX_DT,
    )?;
    r.config_hash = cfg.hash();
    r.seeds = vec![seed];
    let mut extra = vec![("assert", assert.to_string()), ("ks_max", num(ks_max))];
    if let Some(root) = run {
        extra.push(("run", absolute(root)?.display().to_string()));
    }
    finish_experiment("validate-hallucination", &cfg, config, out, &r.report()?, &extra)?;
    if assert {
        assert_all(&[(format!("ks {:.4} <= {ks_max}", r.ks()), r.ks() <= ks_max)])?;
    }
    Ok(())
}

pub fn huber(ini: &Ini, config: Option<&Path>, out: &Path, assert: bool) -> CliResult<()> {
    let cfg = experiment(ini)?;
    let (train, test) = datasets(&cfg)?;
    let control = if cfg.huber_control {
        let strip = |d: DatasetConfig| DatasetConfig {
            rig: tio_forge_core::simulator::SensorRig { nuc: None, ..d.rig.clone() },
            ..d
        };
        Some((make_dataset(&strip(cfg.dataset.clone()))?, make_dataset(&strip(cfg.test_dataset()))?))
    } else {
        None
    };
    let r = huber_vs_l2(&cfg, &train, &test, control.as_ref().map(|(a, b)| (a, b)), Some(&out.join("runs")))?;
    finish_experiment("huber-vs-l2", &cfg, config, out, &r.report()?, &[("assert", assert.to_string())])?;
    if assert {
        let clean = &r.checks()[0];
        let mut checks = vec![(clean.line(), clean.passed())];
        for ratio in r.control_ratios() {
            checks.push((format!("control ratio {ratio:.3} in [0.8, 1.25]"), (0.8..=1.25).contains(&ratio)));
        }
        assert_all(&checks)?;
    }
    Ok(())
}

pub fn replay(path: &Path, out: &Path) -> CliResult<()> {
    let m = RunManifest::read(path)?;
    let ini = &m.snapshot;
    let cfg = m.config_path.as_deref();
    let flag = |k: &str| m.get(k) == Some("true");
    match m.command.as_str() {
        "simulate" => simulate(ini, cfg, out),
        "train" => {
            let stage = match m.require("stage")? {
                "teacher" => StageArg::Teacher,
                "hallucination" => StageArg::Hallucination,
                "odometry" => StageArg::Odometry,
                "finetune" => StageArg::Finetune,
                other => return Err(Error::config(&["run.arg.stage"], format!("unknown stage '{other}'")).into()),
            };
            let init = m.get("init").map(PathBuf::from);
            train(ini, cfg, Path::new(m.require("data")?), out, stage, init.as_deref())
        }
        "eval" => {
            let modes: Vec<String> = m.require("mode")?.split(',').map(str::to_string).collect();
            let parse = |k: &str| -> Result<f64> {
                m.require(k)?.parse().map_err(|_| Error::config(&[&format!("run.arg.{k}")], "not a number"))
            };
            eval(
                m.get("checkpoint").map(Path::new),
                Path::new(m.require("data")?),
                out,
                &modes,
                parse("max_dt")?,
                parse("rpe_delta")? as usize,
                flag("oracle"),
            )
        }
        "ablate" => ablate(ini, cfg, out, flag("assert")),
        "fps-sweep" => fps_sweep(ini, cfg, out, m.get("checkpoint").map(Path::new), flag("assert")),
        "validate-hallucination" => {
            let ks_max = m.require("ks_max")?.parse().map_err(|_| Error::config(&["run.arg.ks_max"], "not a number"))?;
            validate(ini, cfg, out, m.get("run").map(Path::new), flag("assert"), ks_max)
        }
        "huber-vs-l2" => huber(ini, cfg, out, flag("assert")),
        other => Err(Error::config(&["run.command"], format!("unknown command '{other}'")).into()),
    }
}
