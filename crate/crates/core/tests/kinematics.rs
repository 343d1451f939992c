mod common;

use common::*;
use proptest::prelude::*;
use quatmotion::autodiff::{Tape, Tensor};
use quatmotion::kinematics::*;
use quatmotion::motiondata::synth_chain;
use quatmotion::rng::{seeded, uniform_range};
use quatmotion::rotmath::UnitQuaternion;

fn parents_offsets(skel: &Skeleton) -> (Vec<Option<usize>>, Vec<[f64; 3]>) {
    skel.joints().iter().map(|j| (j.parent, j.offset)).unzip()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fk_matches_matrix_chain(seed in any::<u64>(), n in 1..=10usize) {
        let mut rng = seeded(seed);
        let skel = random_tree(&mut rng, n);
        let rots: Vec<UnitQuaternion> = (0..n).map(|_| random_quat_rng(&mut rng)).collect();
        let root = [0; 3].map(|_| uniform_range(&mut rng, -2.0, 2.0));
        let got = forward_kinematics(&skel, &Pose { root_position: root, rotations: rots.clone() }).unwrap();
        let (parents, offsets) = parents_offsets(&skel);
        let expect = matrix_fk(&parents, &offsets, root, &rots);
        for (a, b) in got.iter().zip(&expect) {
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bone_lengths_are_invariant(seed in any::<u64>(), n in 2..=10usize) {
        let mut rng = seeded(seed);
        let skel = random_tree(&mut rng, n);
        let rots: Vec<UnitQuaternion> = (0..n).map(|_| random_quat_rng(&mut rng)).collect();
        let pos = forward_kinematics(&skel, &Pose { root_position: [0.3, -1.0, 2.0], rotations: rots }).unwrap();
        for (j, joint) in skel.joints().iter().enumerate().skip(1) {
            let p = joint.parent.unwrap();
            let d = ((pos[j][0] - pos[p][0]).powi(2) + (pos[j][1] - pos[p][1]).powi(2) + (pos[j][2] - pos[p][2]).powi(2)).sqrt();
            prop_assert!((d - skel.bone_length(j)).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_fk_matches_direct(seed in any::<u64>(), n in 1..=8usize) {
        let mut rng = seeded(seed);
        let skel = random_tree(&mut rng, n);
        let frames: Vec<Vec<UnitQuaternion>> = (0..3).map(|_| (0..n).map(|_| random_quat_rng(&mut rng)).collect()).collect();
        let roots: Vec<[f64; 3]> = (0..3).map(|_| [0; 3].map(|_| uniform_range(&mut rng, -1.0, 1.0))).collect();
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::new(vec![3, 3], roots.concat()).unwrap()).unwrap();
        let q = tape.constant(Tensor::new(vec![3, 4 * n], frames.iter().flatten().flat_map(|q| q.to_array()).collect()).unwrap()).unwrap();
        let out = fk_tape(&mut tape, &skel, r, q).unwrap();
        let data = tape.value(out).data().to_vec();
        for b in 0..3 {
            let expect = forward_kinematics_full(&skel, roots[b], &frames[b]).unwrap();
            for (j, p) in expect.iter().enumerate() {
                for i in 0..3 {
                    prop_assert!((data[b * 3 * n + 3 * j + i] - p[i]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn inactive_joints_use_their_constant_rotation() {
    let fixed = UnitQuaternion::about_axis(2, 0.7);
    let mut joints = vec![
        Joint::new("a", None, [0.0; 3]),
        Joint::new("b", Some(0), [0.0, 1.0, 0.0]),
        Joint::new("c", Some(1), [0.0, 1.0, 0.0]),
    ];
    joints[1].dof_active = false;
    joints[1].constant_rotation = Some(fixed);
    let skel = Skeleton::new(joints).unwrap();
    assert_eq!(skel.active_count(), 2);
    let pose = Pose { root_position: [0.0; 3], rotations: vec![UnitQuaternion::IDENTITY; 2] };
    let pos = forward_kinematics(&skel, &pose).unwrap();
    let expect = forward_kinematics_full(&skel, [0.0; 3], &[UnitQuaternion::IDENTITY, fixed, UnitQuaternion::IDENTITY]).unwrap();
    assert_eq!(pos, expect);
    assert!((pos[2][0] + 0.7f64.sin()).abs() < 1e-12);
}

#[test]
fn skeleton_validation() {
    assert!(Skeleton::new(vec![]).is_err());
    assert!(Skeleton::new(vec![Joint::new("a", Some(0), [0.0; 3])]).is_err());
    assert!(Skeleton::new(vec![Joint::new("a", None, [0.0; 3]), Joint::new("b", Some(1), [0.0; 3])]).is_err());
    assert!(Skeleton::new(vec![Joint::new("a", None, [0.0; 3]), Joint::new("b", None, [0.0; 3])]).is_err());
    assert!(Skeleton::new(vec![Joint::new("a", None, [f64::NAN, 0.0, 0.0])]).is_err());
}

#[test]
fn fk_rejects_non_unit_and_wrong_count() {
    let skel = Skeleton::new(vec![Joint::new("a", None, [0.0; 3])]).unwrap();
    let bad = Pose { root_position: [0.0; 3], rotations: vec![UnitQuaternion::new(1.1, 0.0, 0.0, 0.0)] };
    assert!(forward_kinematics(&skel, &bad).is_err());
    let short = Pose { root_position: [0.0; 3], rotations: vec![] };
    assert!(forward_kinematics(&skel, &short).is_err());
}

#[test]
fn errors_by_hand() {
    let a = vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], vec![[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]];
    let b = vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 3.0]], vec![[0.0, 0.0, 0.0], [1.0, 1.0, 4.0]]];
    // distances: 0, 3, 0, 4 → mean 1.75
    assert!((position_error(&a, &b).unwrap() - 1.75).abs() < 1e-15);
    // velocity differences: joint 1 moves (0,1,0) vs (0,1,1) → 1, joint 0 → 0
    assert!((velocity_error(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(velocity_error_samples(&a, &b).unwrap(), vec![0.0, 1.0]);
    assert!(position_error(&a, &b[..1]).is_err());
    assert!(velocity_error(&a[..1], &b[..1]).is_err());
}

#[test]
fn ik_recovers_reachable_targets() {
    let clip = synth_chain(5, 20, 25.0, 7).unwrap();
    let skel = &clip.skeleton;
    let targets = clip.positions().unwrap();
    let mut init = skel.identity_pose();
    for t in [0, 10, 19] {
        let r = ik_reproject(skel, &targets[t], &init, &IkConfig::default()).unwrap();
        assert!(r.loss < 1e-3, "frame {t}: {}", r.loss);
        let pos = forward_kinematics(skel, &r.pose).unwrap();
        assert!((position_error(&[pos], &[targets[t].clone()]).unwrap() - r.loss).abs() < 1e-12);
        init = r.pose;
    }
}

#[test]
fn ik_keeps_root_and_bone_lengths() {
    let clip = synth_chain(4, 2, 25.0, 3).unwrap();
    let skel = &clip.skeleton;
    let mut target = clip.positions().unwrap()[0].clone();
    for p in target.iter_mut().skip(1) {
        p[0] += 0.05;
    }
    let init = Pose { root_position: [0.0; 3], rotations: skel.restrict(&clip.rotations[0]) };
    let r = ik_reproject(skel, &target, &init, &IkConfig::default()).unwrap();
    assert_eq!(r.pose.root_position, [0.0; 3]);
    let pos = forward_kinematics(skel, &r.pose).unwrap();
    for j in 1..skel.len() {
        let p = skel.joints()[j].parent.unwrap();
        let d = ((pos[j][0] - pos[p][0]).powi(2) + (pos[j][1] - pos[p][1]).powi(2) + (pos[j][2] - pos[p][2]).powi(2)).sqrt();
        assert!((d - skel.bone_length(j)).abs() < 1e-12);
    }
}
