use nalgebra::Vector3;
use proptest::prelude::*;

use tio_forge_core::geometry::{
    ate, euler_to_rotmat, horn_align, rotation_angle, rotmat_to_euler, rpe, Euler, Pose6DoF, Trajectory,
};
use tio_forge_core::model::{selective_fusion, InputNorm, ModelConfig, Student};
use tio_forge_core::numcore::{finite_diff_check, huber_grad, huber_value, wrap_angle, Tape, Tensor};
use tio_forge_core::simulator::{make_dataset, DatasetConfig, Profile, SensorRig};
use tio_forge_core::training::{hallucination_loss, regression_loss, LossKind};

use std::f64::consts::PI;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn vals(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

fn pose() -> impl Strategy<Value = Pose6DoF> {
    (vals(3, 5.0), -PI..PI, -1.4..1.4, -PI..PI)
        .prop_map(|(t, roll, pitch, yaw)| Pose6DoF::from_arrays([t[0], t[1], t[2]], [roll, pitch, yaw]))
}

fn trajectory(n: usize) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(pose(), n).prop_map(|poses| {
        let ts: Vec<f64> = (0..poses.len()).map(|i| i as f64 * 0.1).collect();
        Trajectory::from_parts(&ts, &poses).unwrap()
    })
}

fn tiny_dataset(seed: u64, duration: f64) -> tio_forge_core::simulator::Dataset {
    let cfg = DatasetConfig {
        rig: SensorRig {
            width: 8,
            height: 8,
            channels: 1,
            ..SensorRig::default()
        },
        n_sequences: 1,
        duration,
        seed,
        profiles: vec![Profile::PlanarWalk],
        ..DatasetConfig::default()
    };
    make_dataset(&cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn elementwise_gradients_match_differences(x in vals(6, 2.0), y in vals(6, 2.0)) {
        let params = [tensor(&[2, 3], x), tensor(&[3, 2], y)];
        let check = finite_diff_check(&params, 1e-5, |tape, v| {
            let m = tape.matmul(v[0], v[1])?;
            let s = tape.sigmoid(m);
            let t = tape.tanh(v[0]);
            let l = tape.leaky_relu(t, 0.1);
            let h = tape.huber(l, 0.5)?;
            let a = tape.sum(s);
            let b = tape.mean(h);
            let w = tape.wrap_angle(v[1]);
            let sq = tape.square(w);
            let c = tape.sum(sq);
            let ab = tape.add(a, b)?;
            tape.add(ab, c)
        })
        .unwrap();
        prop_assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    #[test]
    fn conv_and_pool_gradients_match_differences(
        x in vals(2 * 16, 1.0),
        w in vals(3 * 2 * 9, 0.5),
        b in vals(3, 0.5),
    ) {
        let params = [tensor(&[1, 2, 4, 4], x), tensor(&[3, 2, 3, 3], w), tensor(&[3], b)];
        let check = finite_diff_check(&params, 1e-5, |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = tape.reshape(y, &[3, 16])?;
            let y = tape.avg_pool(y, 4)?;
            let y = tape.tanh(y);
            let d = tape.dropout(y, 0.3, true, 7)?;
            Ok(tape.sum(d))
        })
        .unwrap();
        prop_assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    #[test]
    fn squashing_functions_stay_in_range(x in vals(32, 60.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(tensor(&[32], x));
        let s = tape.sigmoid(v);
        let t = tape.tanh(v);
        prop_assert!(tape.value(s).data().iter().all(|&y| y > 0.0 && y < 1.0));
        prop_assert!(tape.value(t).data().iter().all(|&y| (-1.0..=1.0).contains(&y)));
    }

    #[test]
    fn average_pooling_keeps_the_mean(x in vals(24, 10.0), factor in prop::sample::select(vec![1usize, 2, 3, 4, 6])) {
        let mut tape = Tape::new();
        let v = tape.constant(tensor(&[2, 12], x));
        let p = tape.avg_pool(v, factor).unwrap();
        prop_assert!((tape.value(p).mean() - tape.value(v).mean()).abs() < 1e-12);
    }

    #[test]
    fn reused_values_accumulate_gradient(x in vals(5, 3.0)) {
        let mut tape = Tape::new();
        let v = tape.param(tensor(&[5], x.clone()));
        let a = tape.sum(v);
        let b = tape.sum(v);
        let l = tape.add(a, b).unwrap();
        let g = tape.backward(l).unwrap().get(v);
        prop_assert!(g.data().iter().all(|&d| d == 2.0));

        let sq = tape.mul(v, v).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap().get(v);
        for (d, xi) in g.data().iter().zip(&x) {
            prop_assert!((d - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn huber_slope_is_bounded_by_delta(x in -100.0..100.0f64, delta in 0.01..5.0f64) {
        prop_assert!(huber_grad(x, delta).abs() <= delta);
        prop_assert!(huber_value(x, delta) >= 0.0);
        prop_assert!(huber_value(x, delta) <= 0.5 * x * x + 1e-12);
    }

    #[test]
    fn wrapped_angles_land_in_the_half_open_interval(x in -1e3..1e3f64) {
        let w = wrap_angle(x);
        prop_assert!(w > -PI && w <= PI);
        let turns = (x - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn euler_angles_round_trip(roll in -PI..PI, pitch in -1.5..1.5f64, yaw in -PI..PI) {
        let e = Euler::new(roll, pitch, yaw);
        let back = rotmat_to_euler(&euler_to_rotmat(&e)).unwrap();
        for i in 0..3 {
            prop_assert!(wrap_angle(back[i] - e[i]).abs() < 1e-8, "{e:?} vs {back:?}");
        }
    }

    #[test]
    fn alignment_never_increases_the_residual(a in prop::collection::vec(vals(3, 4.0), 4..12), noise in vals(36, 0.3)) {
        let est: Vec<Vector3<f64>> = a.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
        let reference: Vec<Vector3<f64>> = est
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vector3::new(noise[3 * i], noise[3 * i + 1], noise[3 * i + 2]))
            .collect();
        let tr = horn_align(&est, &reference).unwrap();
        let sq = |f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>| -> f64 {
            est.iter().zip(&reference).map(|(e, r)| (f(e) - r).norm_squared()).sum()
        };
        prop_assert!(sq(&|e| tr.apply(e)) <= sq(&|e| *e) + 1e-9);
        prop_assert!((tr.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ate_ignores_a_rigid_motion_of_the_estimate(est in trajectory(8), reference in trajectory(8), by in pose()) {
        let base = ate(&est, &reference, 0.01).unwrap();
        let moved = ate(&est.transformed(&by), &reference, 0.01).unwrap();
        prop_assert!((base - moved).abs() < 1e-7 * (1.0 + base), "{base} vs {moved}");
    }

    #[test]
    fn rpe_ignores_the_world_frame(est in trajectory(6), reference in trajectory(6), by in pose(), delta in 1usize..4) {
        let (t0, r0) = rpe(&est, &reference, delta, 0.01).unwrap();
        let (t1, r1) = rpe(&est.transformed(&by), &reference, delta, 0.01).unwrap();
        prop_assert!((t0 - t1).abs() < 1e-8 * (1.0 + t0));
        prop_assert!((r0 - r1).abs() < 1e-6 * (1.0 + r0));
    }

    #[test]
    fn fusion_masks_stay_open(seed in any::<u64>(), a in vals(3 * 64 + 160, 20.0)) {
        let cfg = ModelConfig::default();
        let s = Student::new(cfg.clone(), InputNorm::default(), seed).unwrap();
        let d = cfg.d_feature();
        let f = selective_fusion(
            &s.params,
            &tensor(&[d], a[..d].to_vec()),
            &tensor(&[d], a[d..2 * d].to_vec()),
            &tensor(&[cfg.d_imu()], a[2 * d..2 * d + cfg.d_imu()].to_vec()),
        )
        .unwrap();
        for m in [&f.m_t, &f.m_h, &f.m_i] {
            prop_assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn common_weight_scaling_keeps_mask_order(seed in any::<u64>(), a in vals(3 * 64 + 160, 2.0), k in 0.2..5.0f64) {
        let cfg = ModelConfig::default();
        let s = Student::new(cfg.clone(), InputNorm::default(), seed).unwrap();
        let mut scaled = s.params.clone();
        for (name, w) in scaled.iter_mut() {
            if name.starts_with("fusion.") {
                *w = w.map(|v| v * k);
            }
        }
        let d = cfg.d_feature();
        let (at, ah, ai) = (
            tensor(&[d], a[..d].to_vec()),
            tensor(&[d], a[d..2 * d].to_vec()),
            tensor(&[cfg.d_imu()], a[2 * d..2 * d + cfg.d_imu()].to_vec()),
        );
        let f0 = selective_fusion(&s.params, &at, &ah, &ai).unwrap();
        let f1 = selective_fusion(&scaled, &at, &ah, &ai).unwrap();
        let all = |f: &tio_forge_core::model::Fusion| -> Vec<f64> {
            [&f.m_t, &f.m_h, &f.m_i].iter().flat_map(|m| m.data().to_vec()).collect()
        };
        let (m0, m1) = (all(&f0), all(&f1));
        for i in 0..m0.len() {
            for j in (i + 1)..m0.len().min(i + 16) {
                if (m0[i] - m0[j]).abs() > 1e-9 {
                    prop_assert_eq!(m0[i] < m0[j], m1[i] < m1[j]);
                }
            }
        }
    }

    #[test]
    fn zero_fusion_weights_halve_the_features(a in vals(3 * 64 + 160, 5.0)) {
        let cfg = ModelConfig::default();
        let mut s = Student::new(cfg.clone(), InputNorm::default(), 3).unwrap();
        for (name, w) in s.params.iter_mut() {
            if name.starts_with("fusion.") {
                *w = w.map(|_| 0.0);
            }
        }
        let d = cfg.d_feature();
        let f = selective_fusion(
            &s.params,
            &tensor(&[d], a[..d].to_vec()),
            &tensor(&[d], a[d..2 * d].to_vec()),
            &tensor(&[cfg.d_imu()], a[2 * d..2 * d + cfg.d_imu()].to_vec()),
        )
        .unwrap();
        for (got, want) in f.fused.data().iter().zip(&a) {
            prop_assert_eq!(*got, 0.5 * want);
        }
    }

    #[test]
    fn hallucination_loss_leaves_the_target_alone(h in vals(8, 3.0), v in vals(8, 3.0), huber in any::<bool>()) {
        let kind = if huber { LossKind::Huber } else { LossKind::L2 };
        let mut tape = Tape::new();
        let ah = tape.param(tensor(&[2, 4], h));
        let av = tape.param(tensor(&[2, 4], v));
        let l = hallucination_loss(&mut tape, ah, av, 1.0, kind).unwrap();
        let g = tape.backward(l).unwrap();
        prop_assert!(g.get(av).data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn rotation_residuals_are_periodic(
        th in vals(6, 2.0), rh in vals(6, 2.0), t in vals(6, 2.0), r in vals(6, 2.0),
        turns in prop::collection::vec(-3i32..4, 6),
    ) {
        let loss = |r_target: Vec<f64>| {
            let mut tape = Tape::new();
            let a = tape.constant(tensor(&[2, 3], th.clone()));
            let b = tape.constant(tensor(&[2, 3], rh.clone()));
            let c = tape.constant(tensor(&[2, 3], t.clone()));
            let d = tape.constant(tensor(&[2, 3], r_target));
            let l = regression_loss(&mut tape, a, b, c, d, 0.01, 1.0).unwrap();
            tape.value(l).item()
        };
        let shifted: Vec<f64> = r.iter().zip(&turns).map(|(x, k)| x + 2.0 * PI * *k as f64).collect();
        prop_assert!((loss(r.clone()) - loss(shifted)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn simulation_is_a_pure_function_of_its_seed(seed in 1u64..1000) {
        prop_assert_eq!(tiny_dataset(seed, 3.0), tiny_dataset(seed, 3.0));
    }

    #[test]
    fn relative_labels_compose_to_ground_truth(seed in 1u64..1000) {
        let ds = tiny_dataset(seed, 3.0);
        let s = &ds.sequences[0];
        let mut pose = s.frame_gt.get(0).pose;
        for (k, sample) in s.samples.iter().enumerate() {
            pose = pose.compose(&sample.rel_pose_gt);
            let want = s.frame_gt.get(k + 1).pose;
            prop_assert!((pose.t - want.t).norm() < 1e-6);
            prop_assert!(rotation_angle(&(pose.rotation().transpose() * want.rotation())) < 1e-6);
        }
    }

    #[test]
    fn thermal_frames_carry_less_texture_than_visual(seed in 1u64..1000) {
        let ds = tiny_dataset(seed, 3.0);
        let s = &ds.sequences[0];
        let mean_var = |fs: &[std::sync::Arc<tio_forge_core::simulator::Frame>]| {
            fs.iter().map(|f| f.variance()).sum::<f64>() / fs.len() as f64
        };
        prop_assert!(mean_var(&s.thermal) < mean_var(&s.visual));
    }
}
