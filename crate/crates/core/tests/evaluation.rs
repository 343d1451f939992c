mod common;

use common::{quat_close, random_quat_rng};
use quatmotion::autodiff::{Tape, Tensor};
use quatmotion::evaluation::ablation::{euler_to_quat_tape, expmap_to_quat_tape, plateau_index, tail_mass, Parameterization};
use quatmotion::evaluation::baselines::Frame;
use quatmotion::evaluation::bootstrap::{mean, quantile};
use quatmotion::evaluation::protocol::frame_error;
use quatmotion::evaluation::*;
use quatmotion::rng::{seeded, uniform_range};
use quatmotion::rotmath::{euler_to_quat, expmap_to_quat, EulerAngles, EulerOrder, ExpMap, UnitQuaternion};

fn random_clip(action: &str, len: usize, joints: usize, seed: u64) -> EvalClip {
    let mut rng = seeded(seed);
    let mut frames: Vec<Frame> = Vec::with_capacity(len);
    let mut cur: Frame = (0..joints).map(|_| random_quat_rng(&mut rng)).collect();
    for _ in 0..len {
        cur = cur
            .iter()
            .map(|q| {
                let step = UnitQuaternion::from_axis_angle([uniform_range(&mut rng, -1.0, 1.0), 1.0, 0.3], 0.05);
                quatmotion::rotmath::qmul(*q, step)
            })
            .collect();
        frames.push(cur.clone());
    }
    EvalClip { action: action.into(), frames }
}

#[test]
fn zero_velocity_repeats_the_last_frame() {
    let clip = random_clip("walk", 20, 4, 1);
    let out = baseline_zero_velocity(&clip.frames[..10], 5).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|f| f == &clip.frames[9]));
    assert_eq!(frame_error(&out[0], &clip.frames[9], EulerOrder::Xyz, true), 0.0);
    assert!(baseline_zero_velocity(&[], 3).is_err());
}

#[test]
fn running_average_ignores_sign_flips() {
    let q = UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 0.4);
    let frames: Vec<Frame> = (0..4).map(|i| vec![if i % 2 == 0 { q } else { -q }]).collect();
    let out = baseline_running_average(&frames, 4, 2).unwrap();
    assert!(quat_close(out[0][0], q, 1e-12));
    // Mean of two rotations about one axis bisects the angle.
    let a = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 0.2);
    let b = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 0.6);
    let out = baseline_running_average(&[vec![a], vec![b]], 2, 1).unwrap();
    assert!(quat_close(out[0][0], UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 0.4), 1e-12));
    assert!(baseline_running_average(&frames, 5, 1).is_err());
    assert!(baseline_running_average(&frames, 0, 1).is_err());
}

#[test]
fn bootstrap_interval_behaves() {
    let cfg = BootstrapConfig::default();
    let same = vec![2.5; 30];
    assert_eq!(bootstrap_ci(&same, &cfg, &mut seeded(0)).unwrap(), (2.5, 2.5));
    let mut rng = seeded(3);
    let x: Vec<f64> = (0..200).map(|_| uniform_range(&mut rng, 0.0, 1.0)).collect();
    let (lo, hi) = bootstrap_ci(&x, &cfg, &mut seeded(1)).unwrap();
    let m = mean(&x);
    assert!(lo < m && m < hi);
    // Interquartile width of the mean is about 1.349 σ/√n.
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 199.0).sqrt();
    let expected = 1.349 * sd / (200f64).sqrt();
    assert!(((hi - lo) / expected - 1.0).abs() < 0.25, "{} vs {expected}", hi - lo);
    assert!(bootstrap_ci(&[1.0], &cfg, &mut seeded(0)).is_err());
    assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
}

#[test]
fn protocol_matches_brute_force() {
    let clips = vec![random_clip("walk", 120, 5, 1), random_clip("run", 90, 5, 2), random_clip("walk", 100, 5, 3)];
    let protocol = EvalProtocol::standard(9);
    let report = run_protocol(&ZeroVelocity, &clips, &protocol).unwrap();
    assert_eq!(report, run_protocol(&ZeroVelocity, &clips, &protocol).unwrap());

    let starts = protocol.chunk_starts(&[120, 90, 100]).unwrap();
    for (action, ids) in [("walk", vec![0, 2]), ("run", vec![1])] {
        for &ms in &protocol.horizons_ms {
            let h = (ms * 25.0 / 1000.0).round() as usize - 1;
            let mut errs = Vec::new();
            for &c in &ids {
                for &s in &starts[c] {
                    let last = &clips[c].frames[s + 49];
                    let truth = &clips[c].frames[s + 50 + h];
                    let d: f64 = last[1..]
                        .iter()
                        .zip(&truth[1..])
                        .flat_map(|(p, t)| {
                            let pe = quatmotion::rotmath::quat_to_euler(*p, EulerOrder::Xyz).euler.angles;
                            let te = quatmotion::rotmath::quat_to_euler(*t, EulerOrder::Xyz).euler.angles;
                            (0..3).map(move |i| {
                                let x = (pe[i] - te[i]).sin().atan2((pe[i] - te[i]).cos());
                                x * x
                            })
                        })
                        .sum();
                    errs.push(d.sqrt());
                }
            }
            let row = report.row(action, ms).unwrap();
            assert_eq!(row.n_samples, 4 * ids.len());
            assert!((row.mean_error - mean(&errs)).abs() < 1e-12);
            assert!(row.ci_low <= row.mean_error + 1e-12 && row.mean_error <= row.ci_high + 1e-12);
        }
    }
    assert!(report.to_table().contains("walk"));
}

#[test]
fn constant_clips_have_zero_error() {
    let q = vec![UnitQuaternion::from_axis_angle([0.2, 0.3, 0.9], 1.1); 4];
    let clips = vec![EvalClip { action: "idle".into(), frames: vec![q; 80] }];
    for p in [EvalProtocol::standard(0), EvalProtocol::h36m_legacy(8, 0)] {
        for pred in [&ZeroVelocity as &dyn Predictor, &RunningAverage(4)] {
            let r = run_protocol(pred, &clips, &p).unwrap();
            assert!(r.rows.iter().all(|row| row.mean_error < 1e-12));
        }
    }
}

#[test]
fn short_clips_are_skipped_and_bad_protocols_rejected() {
    let clips = vec![random_clip("a", 30, 3, 0), random_clip("b", 80, 3, 1)];
    let r = run_protocol(&ZeroVelocity, &clips, &EvalProtocol::standard(0)).unwrap();
    assert_eq!(r.skipped, vec!["a".to_string()]);
    assert!(r.row("a", 80.0).is_none());
    let bad = EvalProtocol { horizons_ms: vec![10.0], ..EvalProtocol::standard(0) };
    assert!(run_protocol(&ZeroVelocity, &clips, &bad).is_err());
}

#[test]
fn plateau_and_tail_helpers() {
    assert_eq!(plateau_index(&[1.0, 0.5, 0.3, 0.299, 0.2985], 0.01), Some(2));
    assert_eq!(plateau_index(&[1.0, 0.5, 0.25], 0.01), Some(2));
    assert_eq!(tail_mass(&[0.1, 0.5, 0.9, 1.0], 0.5), 0.5);
    assert_eq!(tail_mass(&[], 0.0), 0.0);
}

#[test]
fn tape_conversions_match_direct_ones() {
    let mut rng = seeded(12);
    for order in EulerOrder::ALL {
        let angles: Vec<f64> = (0..6).map(|_| uniform_range(&mut rng, -3.0, 3.0)).collect();
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::row(angles.clone())).unwrap();
        let q = euler_to_quat_tape(&mut tape, e, order).unwrap();
        let got = tape.value(q).data().to_vec();
        for j in 0..2 {
            let want = euler_to_quat(EulerAngles::new(angles[3 * j], angles[3 * j + 1], angles[3 * j + 2], order));
            assert!(quat_close(UnitQuaternion::from_array(got[4 * j..4 * j + 4].try_into().unwrap()), want, 1e-12));
        }
    }
    for scale in [1e-10, 0.3, 3.0] {
        let v: Vec<f64> = (0..6).map(|_| scale * uniform_range(&mut rng, -1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::row(v.clone())).unwrap();
        let q = expmap_to_quat_tape(&mut tape, e).unwrap();
        let got = tape.value(q).data().to_vec();
        for j in 0..2 {
            let want = expmap_to_quat(ExpMap::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]));
            assert!(quat_close(UnitQuaternion::from_array(got[4 * j..4 * j + 4].try_into().unwrap()), want, 1e-12));
        }
    }
}

#[test]
fn parameterization_widths_and_names() {
    let clip = quatmotion::motiondata::synth_chain(5, 10, 25.0, 0).unwrap();
    let skel = &clip.skeleton;
    let a = skel.active_count();
    let pos = clip.positions().unwrap();
    let active = clip.active_rotations();
    for (p, w) in [
        (Parameterization::Quaternion, 4 * a),
        (Parameterization::ExpMap, 3 * a),
        (Parameterization::Euler(EulerOrder::Yzx), 3 * a),
        (Parameterization::Positions, 3 * skel.len()),
    ] {
        assert_eq!(p.width(skel), w);
        assert_eq!(p.encode(&active[3], &pos[3]).len(), w);
    }
    assert_eq!(Parameterization::Euler(EulerOrder::Yzx).name(), "euler-yzx");
}
