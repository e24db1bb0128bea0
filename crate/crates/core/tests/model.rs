use tio_forge_core::model::{
    group_of, regress_pose, selective_fusion, Bound, ClipBatch, FrameNeeds, InputNorm, Mode, ModelConfig, ParamStore,
    Student, Teacher,
};
use tio_forge_core::numcore::{finite_diff_check, Tape, Tensor, Var};
use tio_forge_core::simulator::{make_dataset, Dataset, DatasetConfig, SensorRig};
use tio_forge_core::Error;

fn tiny_dataset() -> Dataset {
    let cfg = DatasetConfig {
        rig: SensorRig {
            width: 8,
            height: 8,
            channels: 1,
            ..SensorRig::default()
        },
        n_sequences: 1,
        duration: 4.0,
        ..DatasetConfig::default()
    };
    make_dataset(&cfg).unwrap()
}

fn clips(ds: &Dataset, batch: usize, steps: usize) -> ClipBatch {
    let samples = &ds.sequences[0].samples;
    let clips: Vec<Vec<_>> = (0..batch).map(|b| samples[b * steps..(b + 1) * steps].iter().collect()).collect();
    let norm = InputNorm::from_samples(ds.samples()).unwrap();
    ClipBatch::new(
        &clips,
        &ModelConfig::tiny(),
        &norm,
        FrameNeeds {
            thermal: true,
            visual: true,
        },
    )
    .unwrap()
}

fn student(ds: &Dataset) -> Student {
    Student::new(ModelConfig::tiny(), InputNorm::from_samples(ds.samples()).unwrap(), 11).unwrap()
}

#[test]
fn forward_shapes_follow_batch_layout() {
    let ds = tiny_dataset();
    let s = student(&ds);
    let b = clips(&ds, 3, 2);
    let mut tape = Tape::new();
    let p = s.params.bind(&mut tape, |_| true);
    let out = s.forward(&mut tape, &p, &b, Mode::Full, false, 0).unwrap();
    assert_eq!(tape.shape(out.trans), &[6, 3]);
    assert_eq!(tape.shape(out.rot), &[6, 3]);
    let (mt, mh, mi) = out.masks.unwrap();
    assert_eq!(tape.shape(mt), &[6, 8]);
    assert_eq!(tape.shape(mh), &[6, 8]);
    assert_eq!(tape.shape(mi), &[6, 20]);
    assert!(tape.value(mi).data().iter().all(|&m| m > 0.0 && m < 1.0));
}

#[test]
fn batched_forward_matches_single_sample_ops() {
    let ds = tiny_dataset();
    let s = student(&ds);
    let b = clips(&ds, 1, 2);
    let mut tape = Tape::new();
    let p = s.params.bind(&mut tape, |_| false);
    let out = s.forward(&mut tape, &p, &b, Mode::Full, false, 0).unwrap();
    let samples = &ds.sequences[0].samples;
    let mut reg = None;
    let mut imu = None;
    for (t, sample) in samples[..2].iter().enumerate() {
        let a_t = s.encode_thermal(&sample.thermal_pair).unwrap();
        let a_h = s.encode_hallucination(&sample.thermal_pair).unwrap();
        let (a_i, st) = s.encode_imu(&sample.imu_window, imu.as_ref()).unwrap();
        imu = Some(st);
        let fusion = selective_fusion(&s.params, &a_t, &a_h, &a_i).unwrap();
        let (tr, ro, st) = regress_pose(&s.params, &s.cfg, &fusion.fused, reg.as_ref(), false, 0).unwrap();
        reg = Some(st);
        for k in 0..3 {
            assert!((tape.value(out.trans).data()[t * 3 + k] - tr[k]).abs() < 1e-12);
            assert!((tape.value(out.rot).data()[t * 3 + k] - ro[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn excluded_channels_do_not_influence_output() {
    let ds = tiny_dataset();
    let s = student(&ds);
    let b = clips(&ds, 2, 2);
    let mut other = b.clone();
    other.thermal = Some(other.thermal.as_ref().unwrap().map(|v| v * -3.0 + 1.0));
    let run = |batch: &ClipBatch, mode| {
        let mut tape = Tape::new();
        let p = s.params.bind(&mut tape, |_| false);
        let out = s.forward(&mut tape, &p, batch, mode, false, 0).unwrap();
        tape.value(out.trans).clone()
    };
    assert_eq!(run(&b, Mode::ImuOnly), run(&other, Mode::ImuOnly));
    assert_ne!(run(&b, Mode::Full), run(&other, Mode::Full));
}

#[test]
fn mode_without_required_input_is_a_config_error() {
    let ds = tiny_dataset();
    let s = student(&ds);
    let mut b = clips(&ds, 1, 1);
    b.thermal = None;
    let mut tape = Tape::new();
    let p = s.params.bind(&mut tape, |_| true);
    assert!(matches!(s.forward(&mut tape, &p, &b, Mode::ThermalOnly, false, 0), Err(Error::Config { .. })));
    assert!(s.forward(&mut tape, &p, &b, Mode::ImuOnly, false, 0).is_ok());
}

#[test]
fn teacher_accepts_substituted_features() {
    let ds = tiny_dataset();
    let t = Teacher::new(ModelConfig::tiny(), InputNorm::from_samples(ds.samples()).unwrap(), 2).unwrap();
    let mut b = clips(&ds, 2, 1);
    let feats = t
        .encode_visual_batch(ds.sequences[0].samples[..2].iter().map(|s| &s.visual_pair))
        .unwrap();
    let run = |batch: &ClipBatch| {
        let mut tape = Tape::new();
        let p = t.params.bind(&mut tape, |_| false);
        let out = t.forward(&mut tape, &p, batch, false, 0).unwrap();
        tape.value(out.trans).clone()
    };
    let direct = run(&b);
    b.visual_features = Some(feats);
    let substituted = run(&b);
    for (x, y) in direct.data().iter().zip(substituted.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    b.visual_features = Some(Tensor::zeros(&[2, 5]));
    let mut tape = Tape::new();
    let p = t.params.bind(&mut tape, |_| false);
    assert!(t.forward(&mut tape, &p, &b, false, 0).is_err());
}

#[test]
fn hallucination_copy_reproduces_teacher_features() {
    let ds = tiny_dataset();
    let norm = InputNorm::from_samples(ds.samples()).unwrap();
    let t = Teacher::new(ModelConfig::tiny(), norm.clone(), 2).unwrap();
    let mut s = Student::new(ModelConfig::tiny(), norm, 3).unwrap();
    s.init_hallucination_from(&t).unwrap();
    assert_eq!(s.params.checksum("halluc"), {
        let mut renamed = ParamStore::new();
        renamed.copy_group(&t.params, "visual", "halluc").unwrap();
        renamed.checksum("halluc")
    });
}

#[test]
fn student_gradients_match_finite_differences() {
    let ds = tiny_dataset();
    let s = student(&ds);
    let b = clips(&ds, 2, 2);
    let names = s.params.names();
    let tensors: Vec<Tensor> = names.iter().map(|n| s.params.get(n).unwrap().clone()).collect();
    let report = finite_diff_check(&tensors, 1e-5, |tape: &mut Tape, vars: &[Var]| {
        let p = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
        let out = s.forward(tape, &p, &b, Mode::Full, true, 9)?;
        let a = tape.square(out.trans);
        let c = tape.square(out.rot);
        let a = tape.mean(a);
        let c = tape.mean(c);
        tape.add(a, c)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    assert_eq!(report.coordinates, s.params.count(None));
    let groups: Vec<String> = names.iter().map(|n| group_of(n).to_string()).collect();
    assert!(groups.iter().any(|g| g == "fusion"));
}
