use std::f64::consts::PI;

use quatmotion::autodiff::{Tape, Tensor};
use quatmotion::kinematics::Skeleton;
use quatmotion::models::{Backbone, PoseNetwork, PoseNetworkConfig};
use quatmotion::motiondata::{synth_corpus, MotionClip};
use quatmotion::rng::{seeded, uniform_range};
use quatmotion::rotmath::{angle_distance_l1, euler_to_quat, EulerAngles, EulerOrder};
use quatmotion::training::adam::{clip_global_norm, global_norm};
use quatmotion::training::losses::{loss_euler_l1, loss_positional, loss_quat_dot, penalty_unit_norm};
use quatmotion::training::*;

fn corpus() -> (Vec<MotionClip>, Skeleton) {
    let clips = synth_corpus(4, 4.0, 25.0, 11, 12).unwrap();
    let skel = clips[0].skeleton.clone();
    (clips, skel)
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        condition: 6,
        predict: 4,
        epoch_episodes: Some(8),
        validation_episodes: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn quat_row(angles: &[[f64; 3]], order: EulerOrder) -> Tensor {
    Tensor::row(
        angles
            .iter()
            .flat_map(|a| euler_to_quat(EulerAngles::new(a[0], a[1], a[2], order)).to_array())
            .collect(),
    )
}

#[test]
fn euler_l1_takes_the_short_way_round() {
    let order = EulerOrder::Xyz;
    let mut tape = Tape::new();
    let q = tape.constant(quat_row(&[[PI - 0.1, 0.0, 0.0]], order)).unwrap();
    let r = tape.constant(Tensor::row(vec![-PI + 0.1, 0.0, 0.0])).unwrap();
    let l = loss_euler_l1(&mut tape, q, r, &[order]).unwrap();
    // One of three components differs by 0.2.
    assert!((tape.scalar(l) - 0.2 / 3.0).abs() < 1e-12);
}

#[test]
fn euler_l1_matches_brute_force_over_periods() {
    let mut rng = seeded(4);
    for order in EulerOrder::ALL {
        let a: Vec<[f64; 3]> = (0..3)
            .map(|_| [uniform_range(&mut rng, -3.0, 3.0), uniform_range(&mut rng, -1.4, 1.4), uniform_range(&mut rng, -3.0, 3.0)])
            .collect();
        let reference: Vec<f64> = (0..9).map(|_| uniform_range(&mut rng, -9.0, 9.0)).collect();
        let mut tape = Tape::new();
        let q = tape.constant(quat_row(&a, order)).unwrap();
        let r = tape.constant(Tensor::row(reference.clone())).unwrap();
        let l = loss_euler_l1(&mut tape, q, r, &[order; 3]).unwrap();
        let brute: f64 = a
            .iter()
            .flatten()
            .zip(&reference)
            .map(|(p, t)| (-2..=2).map(|k| (p - t + f64::from(k) * 2.0 * PI).abs()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / 9.0;
        assert!((tape.scalar(l) - brute).abs() < 1e-9, "{order:?}");
        let direct: f64 = a.iter().flatten().zip(&reference).map(|(p, t)| angle_distance_l1(*p, *t)).sum::<f64>() / 9.0;
        assert!((direct - brute).abs() < 1e-9);
    }
}

#[test]
fn losses_vanish_on_ground_truth() {
    let (clips, skel) = corpus();
    let rots = skel.restrict(&clips[0].rotations[5]);
    let q = Tensor::row(rots.iter().flat_map(|q| q.to_array()).collect());
    let root = clips[0].root_positions[5];
    let pos = clips[0].positions().unwrap()[5].concat();
    let mut tape = Tape::new();
    let qv = tape.constant(q).unwrap();
    let rv = tape.constant(Tensor::row(root.to_vec())).unwrap();
    let tv = tape.constant(Tensor::row(pos)).unwrap();
    let lp = loss_positional(&mut tape, &skel, rv, qv, tv).unwrap();
    assert!(tape.scalar(lp) < 1e-12);
    let ld = loss_quat_dot(&mut tape, qv, qv).unwrap();
    assert!(tape.scalar(ld).abs() < 1e-12);
    let pen = penalty_unit_norm(&mut tape, qv, 0.01).unwrap();
    assert!(tape.scalar(pen) < 1e-20);
    let orders: Vec<_> = skel.active_joints().iter().map(|&j| skel.joints()[j].order()).collect();
    let e = euler_targets(&tape.value(qv).clone(), &orders).unwrap();
    let ev = tape.constant(e).unwrap();
    let le = loss_euler_l1(&mut tape, qv, ev, &orders).unwrap();
    assert!(tape.scalar(le) < 1e-9);
}

#[test]
fn schedules_follow_closed_forms() {
    let s = Schedule::default();
    let (mut lr, mut p) = (1e-3, 1.0);
    for e in 0..2000 {
        assert_eq!(s.lr(e), 1e-3 * 0.999f64.powi(e as i32));
        assert_eq!(s.teacher_prob(e), 0.995f64.powi(e as i32));
        assert!((s.lr(e) - lr).abs() <= 1e-12 * lr);
        assert!((s.teacher_prob(e) - p).abs() <= 1e-12 * p);
        lr *= 0.999;
        p *= 0.995;
    }
    let e = s.epochs_until_teacher_prob(0.5);
    assert!(s.teacher_prob(e) <= 0.5 && s.teacher_prob(e - 1) > 0.5);
}

#[test]
fn gradient_clipping_caps_the_global_norm() {
    let mut g = vec![Tensor::row(vec![3.0, 4.0]), Tensor::row(vec![12.0])];
    assert_eq!(global_norm(&g), 13.0);
    let before = clip_global_norm(&mut g, 0.1);
    assert_eq!(before, 13.0);
    assert!((global_norm(&g) - 0.1).abs() < 1e-15);
    assert!((g[0].data()[0] / g[0].data()[1] - 0.75).abs() < 1e-15);
    let mut small = vec![Tensor::row(vec![0.01])];
    clip_global_norm(&mut small, 0.1);
    assert_eq!(small[0].data(), &[0.01]);
}

#[test]
fn adam_steps_report_clipped_norms() {
    let mut params = vec![Tensor::row(vec![1.0, -1.0])];
    let mut adam = Adam::new(&params, AdamConfig::default());
    let info = adam.step(&mut params, vec![Tensor::row(vec![30.0, 40.0])], 1e-3).unwrap();
    assert_eq!(info.grad_norm, 50.0);
    assert!(info.applied_norm <= 0.1 + 1e-15);
    // First Adam step moves each coordinate by about lr against its gradient.
    assert!((params[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
}

#[test]
fn teacher_forced_rollout_sees_only_ground_truth() {
    let (clips, skel) = corpus();
    let data = PoseDataset::from_clips(&clips).unwrap();
    let net = PoseNetwork::new(PoseNetworkConfig::desk(skel.active_count(), Backbone::Recurrent), 1).unwrap();
    let (gt, _) = data.batch(&[(0, 0), (1, 10)], 10).unwrap();
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape).unwrap();
    let r = scheduled_sampling_rollout(&mut tape, &net, &vars, &skel, &gt, None, 6, 4, 1.0, &mut seeded(0), LossKind::EulerL1, 0.01).unwrap();
    assert!(r.fed_ground_truth.iter().flatten().all(|&b| b));
    // Each teacher-forced prediction is a one-step prediction from ground truth.
    let pred = tape.value(r.predicted).clone();
    let d = data.frame_dim();
    for step in 0..4 {
        let ctx_len = 6 + step;
        let ctx: Vec<f64> = (0..2).flat_map(|b| gt.data()[b * 10 * d..(b * 10 + ctx_len) * d].to_vec()).collect();
        let ctx = Tensor::new(vec![2, ctx_len, d], ctx).unwrap();
        let one = net.predict(&ctx, None, 1).unwrap();
        for b in 0..2 {
            let got = &pred.data()[(b * 4 + step) * d..(b * 4 + step + 1) * d];
            for (x, y) in got.iter().zip(&one.data()[b * d..(b + 1) * d]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
    let r0 = scheduled_sampling_rollout(&mut tape, &net, &vars, &skel, &gt, None, 6, 4, 0.0, &mut seeded(0), LossKind::EulerL1, 0.01).unwrap();
    assert!(r0.fed_ground_truth.iter().flatten().all(|&b| !b));
}

#[test]
fn conv_rollout_runs_under_every_loss() {
    let (clips, skel) = corpus();
    let data = PoseDataset::from_clips(&clips).unwrap();
    let net = PoseNetwork::new(PoseNetworkConfig::desk(skel.active_count(), Backbone::Convolutional), 1).unwrap();
    let (gt, _) = data.batch(&[(0, 0), (2, 5)], 36).unwrap();
    for loss in [LossKind::EulerL1, LossKind::QuatDot, LossKind::Positional] {
        for p in [1.0, 0.5] {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape).unwrap();
            let r = scheduled_sampling_rollout(&mut tape, &net, &vars, &skel, &gt, None, 32, 4, p, &mut seeded(3), loss, 0.01).unwrap();
            assert!(tape.scalar(r.loss).is_finite());
            assert_eq!(tape.value(r.predicted).shape(), &[2, 4, data.frame_dim()]);
            tape.backward(r.loss).unwrap();
        }
    }
}

#[test]
fn training_is_bit_reproducible_and_resumable() {
    let (clips, skel) = corpus();
    let data = PoseDataset::from_clips(&clips).unwrap();
    let make = || PoseTrainer::new(PoseNetwork::new(PoseNetworkConfig::desk(skel.active_count(), Backbone::Recurrent), 5).unwrap(), small_config(5)).unwrap();
    let strip = |t: &PoseTrainer| t.log.iter().map(|r| (r.epoch, r.lr, r.p, r.train_loss.to_bits(), r.val_position_loss.to_bits())).collect::<Vec<_>>();

    let mut a = make();
    a.train(&data, Some(&data)).unwrap();
    let mut b = make();
    b.train(&data, Some(&data)).unwrap();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.net.params.values(), b.net.params.values());

    let mut c = make();
    c.train_epoch(&data, Some(&data)).unwrap();
    let mut bytes = Vec::new();
    c.to_checkpoint().unwrap().write(&mut bytes).unwrap();
    let mut resumed = PoseTrainer::from_checkpoint(&quatmotion::models::Checkpoint::read(bytes.as_slice()).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 1);
    resumed.train(&data, Some(&data)).unwrap();
    assert_eq!(strip(&resumed), strip(&a));
    assert_eq!(resumed.net.params.values(), a.net.params.values());

    for row in &a.log {
        assert!(row.max_applied_norm <= 0.1 + 1e-12);
    }
}

#[test]
fn training_reduces_the_loss() {
    let (clips, skel) = corpus();
    let data = PoseDataset::from_clips(&clips).unwrap();
    let cfg = TrainConfig { epochs: 12, epoch_episodes: Some(32), ..small_config(2) };
    let mut t = PoseTrainer::new(PoseNetwork::new(PoseNetworkConfig::desk(skel.active_count(), Backbone::Recurrent), 2).unwrap(), cfg).unwrap();
    t.train(&data, None).unwrap();
    let first: f64 = t.log[..3].iter().map(|r| r.train_loss).sum();
    let last: f64 = t.log[9..].iter().map(|r| r.train_loss).sum();
    assert!(last < first, "{first} → {last}");
}

#[test]
fn mismatched_data_is_rejected() {
    let (clips, skel) = corpus();
    let data = PoseDataset::from_clips(&clips).unwrap();
    let mut t = PoseTrainer::new(PoseNetwork::new(PoseNetworkConfig::desk(skel.active_count() + 1, Backbone::Recurrent), 0).unwrap(), small_config(0)).unwrap();
    assert!(t.train_epoch(&data, None).is_err());
    let bad = TrainConfig { penalty: 0.5, ..TrainConfig::default() };
    assert!(bad.validate().is_err());
    assert!("euler-l1".parse::<LossKind>().is_ok());
    assert!("nope".parse::<LossKind>().is_err());
}

#[test]
fn non_finite_loss_aborts_with_the_offending_batch() {
    let (clips, skel) = corpus();
    let data = PoseDataset::from_clips(&clips).unwrap();
    let mut t = PoseTrainer::new(PoseNetwork::new(PoseNetworkConfig::desk(skel.active_count(), Backbone::Recurrent), 0).unwrap(), small_config(0)).unwrap();
    let slot = t.net.head_bias_slot();
    t.net.params.get_mut(slot).data_mut()[0] = f64::NAN;
    match t.train_epoch(&data, None) {
        Err(quatmotion::Error::NonFinite(msg)) => assert!(msg.contains("batch 0") && msg.contains("epoch 0"), "{msg}"),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}
