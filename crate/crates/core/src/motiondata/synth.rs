//! Procedural walking clips with known gait parameters.
//!
//! Feet follow an explicit stance/swing schedule: during stance a foot is
//! fixed in the walking frame, during swing it travels forward along an eased
//! arc. Leg rotations are then solved analytically (two-link IK with the knee
//! bending forward), so foot contacts and phase are known exactly. Arms,
//! spine and pelvis follow sinusoids locked to the same phase.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Joint, Skeleton, Vec3};
use crate::rng::{seeded, uniform_range};
use crate::rotmath::{qmul, rotate_vector_unchecked, UnitQuaternion};

use super::gait::{Contact, Foot, GaitFeatures};
use super::MotionClip;

const THIGH: f64 = 0.45;
const SHIN: f64 = 0.45;
const HIP_HALF_WIDTH: f64 = 0.1;
const ANKLE_HEIGHT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// 12 for the full body; anything smaller gives the 7-joint legs-only
    /// skeleton.
    pub joint_count: usize,
    /// Gait cycles (left contact to left contact) per second.
    pub frequency: f64,
    /// Ground speed, units per second.
    pub speed: f64,
    /// Seconds.
    pub duration: f64,
    pub frame_rate: f64,
    pub seed: u64,
    /// Fraction of the cycle each foot is planted.
    pub duty: f64,
    /// Heading change rate (rad/s); non-zero walks a circle.
    pub turn_rate: f64,
    /// Extra body yaw rate (rad/s) on top of the heading, for spinning clips.
    pub spin_rate: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            joint_count: 12,
            frequency: 0.9,
            speed: 1.3,
            duration: 10.0,
            frame_rate: 30.0,
            seed: 0,
            duty: 0.6,
            turn_rate: 0.0,
            spin_rate: 0.0,
        }
    }
}

/// Joint indices of the synthetic skeleton.
pub mod joints {
    pub const HIPS: usize = 0;
    pub const LEFT_UP_LEG: usize = 1;
    pub const LEFT_LEG: usize = 2;
    pub const LEFT_FOOT: usize = 3;
    pub const RIGHT_UP_LEG: usize = 4;
    pub const RIGHT_LEG: usize = 5;
    pub const RIGHT_FOOT: usize = 6;
    pub const SPINE: usize = 7;
    pub const LEFT_ARM: usize = 8;
    pub const LEFT_HAND: usize = 9;
    pub const RIGHT_ARM: usize = 10;
    pub const RIGHT_HAND: usize = 11;
}

/// Y-up skeleton facing `+z` with its left side towards `+x`.
pub fn synth_skeleton(joint_count: usize) -> Skeleton {
    let mut j = vec![
        Joint::new("Hips", None, [0.0; 3]),
        Joint::new("LeftUpLeg", Some(0), [HIP_HALF_WIDTH, 0.0, 0.0]),
        Joint::new("LeftLeg", Some(1), [0.0, -THIGH, 0.0]),
        Joint::end_site("LeftFoot", 2, [0.0, -SHIN, 0.0]),
        Joint::new("RightUpLeg", Some(0), [-HIP_HALF_WIDTH, 0.0, 0.0]),
        Joint::new("RightLeg", Some(4), [0.0, -THIGH, 0.0]),
        Joint::end_site("RightFoot", 5, [0.0, -SHIN, 0.0]),
    ];
    if joint_count >= 12 {
        j.extend([
            Joint::new("Spine", Some(0), [0.0, 0.1, 0.0]),
            Joint::new("LeftArm", Some(7), [0.18, 0.35, 0.0]),
            Joint::end_site("LeftHand", 8, [0.0, -0.55, 0.0]),
            Joint::new("RightArm", Some(7), [-0.18, 0.35, 0.0]),
            Joint::end_site("RightHand", 10, [0.0, -0.55, 0.0]),
        ]);
    }
    Skeleton::new(j).expect("synthetic skeleton is well formed")
}

/// Hip-to-ankle vertical distance that keeps the stance extremes reachable.
fn leg_drop(half_stance: f64) -> f64 {
    let reach = 0.97 * (THIGH + SHIN);
    let comfortable = 0.93 * (THIGH + SHIN);
    (reach * reach - half_stance * half_stance)
        .max(0.0)
        .sqrt()
        .min(comfortable)
        .max(0.35 * (THIGH + SHIN))
}

/// Hip and knee rotations (relative to the pelvis) placing the ankle at
/// `d`, the hip-to-ankle vector in pelvis coordinates.
fn leg_ik(d: Vec3) -> (UnitQuaternion, UnitQuaternion) {
    // Roll the leg plane about z so it contains d, then solve in that plane.
    let roll = d[0].atan2(-d[1]);
    let down = d[0].hypot(d[1]);
    let fwd = d[2];
    let reach = (down.hypot(fwd)).clamp(1e-9, THIGH + SHIN - 1e-9);
    let alpha = fwd.atan2(down);
    let cos_beta = ((THIGH * THIGH + reach * reach - SHIN * SHIN) / (2.0 * THIGH * reach)).clamp(-1.0, 1.0);
    let cos_gamma = ((THIGH * THIGH + SHIN * SHIN - reach * reach) / (2.0 * THIGH * SHIN)).clamp(-1.0, 1.0);
    let thigh_angle = alpha + cos_beta.acos();
    let knee = PI - cos_gamma.acos();
    let hip = qmul(
        UnitQuaternion::about_axis(2, roll),
        UnitQuaternion::about_axis(0, -thigh_angle),
    );
    (hip, UnitQuaternion::about_axis(0, knee))
}

/// Foot placement in the walking frame for cycle position `c ∈ [0, 1)`,
/// where `c = 0` is touchdown: `(forward offset, lift)`.
fn foot_track(c: f64, duty: f64, stride: f64, lift: f64) -> (f64, f64) {
    let half = 0.5 * duty * stride;
    if c < duty {
        (half - stride * c, 0.0)
    } else {
        let u = (c - duty) / (1.0 - duty);
        let ease = 0.5 * (1.0 - (PI * u).cos());
        (-half + 2.0 * half * ease, lift * (PI * u).sin())
    }
}

/// Generates a clip together with its ground-truth gait features.
pub fn synth_gait(params: &GaitParams) -> Result<(Skeleton, MotionClip, GaitFeatures)> {
    let GaitParams {
        joint_count,
        frequency,
        speed,
        duration,
        frame_rate,
        seed,
        duty,
        turn_rate,
        spin_rate,
    } = *params;
    if !(frequency > 0.0 && speed >= 0.0 && duration > 0.0 && frame_rate > 0.0) {
        return Err(Error::input("gait frequency, duration and frame rate must be positive"));
    }
    if !(duty > 0.5 && duty < 1.0) {
        return Err(Error::input(format!("duty factor {duty} must be in (0.5, 1)")));
    }
    let skeleton = synth_skeleton(joint_count);
    let full = skeleton.len() >= 12;
    let mut rng = seeded(seed);
    let heading0 = uniform_range(&mut rng, -PI, PI);
    let phase0 = uniform_range(&mut rng, 0.0, 1.0);
    let arm_gain = uniform_range(&mut rng, 0.8, 1.2);
    let sway_gain = uniform_range(&mut rng, 0.5, 1.5);
    let start = [uniform_range(&mut rng, -1.0, 1.0), uniform_range(&mut rng, -1.0, 1.0)];

    let activity = (speed / 1.5).min(1.0);
    let stride = speed / frequency;
    let lift = 0.1 * activity;
    let half_stance = 0.5 * duty * stride;
    let hip_y = ANKLE_HEIGHT + leg_drop(half_stance);

    let frames = (duration * frame_rate).round().max(1.0) as usize;
    let mut roots = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    let mut truth_phase = Vec::with_capacity(frames);
    let mut facing = Vec::with_capacity(frames);

    for k in 0..frames {
        let t = k as f64 / frame_rate;
        let heading = heading0 + turn_rate * t;
        let ground = if turn_rate.abs() < 1e-12 {
            [speed * t * heading0.sin(), speed * t * heading0.cos()]
        } else {
            [
                speed / turn_rate * (heading0.cos() - heading.cos()),
                speed / turn_rate * (heading.sin() - heading0.sin()),
            ]
        };
        let ground = [start[0] + ground[0], start[1] + ground[1]];
        let cycle = frequency * t + phase0;
        let theta = TAU * cycle;
        let yaw = heading + spin_rate * t;
        let roll = 0.04 * sway_gain * activity * theta.sin();
        let pelvis = qmul(UnitQuaternion::about_axis(1, yaw), UnitQuaternion::about_axis(2, roll));
        let root = [ground[0], hip_y, ground[1]];
        let body_yaw = UnitQuaternion::about_axis(1, yaw);

        let mut frame = vec![UnitQuaternion::IDENTITY; skeleton.len()];
        frame[joints::HIPS] = pelvis;
        let legs = [
            (joints::LEFT_UP_LEG, joints::LEFT_LEG, HIP_HALF_WIDTH, cycle),
            (joints::RIGHT_UP_LEG, joints::RIGHT_LEG, -HIP_HALF_WIDTH, cycle - 0.5),
        ];
        for (hip_j, knee_j, side, c) in legs {
            let (fwd, up) = foot_track(c.rem_euclid(1.0), duty, stride, lift);
            // Ankle target in the walking (yaw-only) frame, relative to root.
            let target = rotate_vector_unchecked(body_yaw, [side, ANKLE_HEIGHT + up - hip_y, fwd]);
            let hip_world = rotate_vector_unchecked(pelvis, [side, 0.0, 0.0]);
            let d_world = [target[0] - hip_world[0], target[1] - hip_world[1], target[2] - hip_world[2]];
            let d_local = rotate_vector_unchecked(pelvis.conjugate(), d_world);
            let (hq, kq) = leg_ik(d_local);
            frame[hip_j] = hq;
            frame[knee_j] = kq;
        }
        if full {
            let lean = UnitQuaternion::about_axis(0, 0.05 * speed.min(3.0));
            let twist = UnitQuaternion::about_axis(1, -0.12 * sway_gain * activity * theta.cos());
            frame[joints::SPINE] = qmul(qmul(UnitQuaternion::about_axis(2, -roll), lean), twist);
            let swing = 0.35 * arm_gain * activity * theta.cos();
            frame[joints::LEFT_ARM] = qmul(UnitQuaternion::about_axis(2, 0.08), UnitQuaternion::about_axis(0, swing));
            frame[joints::RIGHT_ARM] = qmul(UnitQuaternion::about_axis(2, -0.08), UnitQuaternion::about_axis(0, -swing));
        }
        roots.push(root);
        rotations.push(frame);
        truth_phase.push(theta);
        facing.push([yaw.sin(), yaw.cos()]);
    }

    let clip = MotionClip::new(skeleton.clone(), frame_rate, roots.clone(), rotations)?
        .with_labels(format!("synth-{seed}"), "walk");
    let contacts = if speed > 0.0 {
        ground_truth_contacts(frequency, phase0, frame_rate, frames)
    } else {
        Vec::new()
    };
    let features = GaitFeatures {
        frame_rate,
        facing,
        frequency: vec![if speed > 0.0 { frequency } else { 0.0 }; frames],
        speed: vec![speed; frames],
        phase: truth_phase,
        root_height: roots.iter().map(|r| r[1]).collect(),
        offset: vec![0.0; frames],
        degenerate: contacts.is_empty(),
        contacts,
    };
    Ok((skeleton, clip, features))
}

/// First frame at or after each touchdown time.
fn ground_truth_contacts(frequency: f64, phase0: f64, frame_rate: f64, frames: usize) -> Vec<Contact> {
    let mut out = Vec::new();
    let end = frames as f64 / frame_rate;
    let mut k = (-phase0 * 2.0).floor() as i64;
    loop {
        // Left touchdown at cycle = integer, right at cycle = integer + 0.5.
        let cycle = k as f64 * 0.5;
        let t = (cycle - phase0) / frequency;
        if t >= end {
            break;
        }
        if t > 0.0 {
            let frame = (t * frame_rate - 1e-9).ceil() as usize;
            if frame < frames {
                let foot = if k.rem_euclid(2) == 0 { Foot::Left } else { Foot::Right };
                out.push(Contact { frame, foot });
            }
        }
        k += 1;
    }
    out
}

/// A corpus of walking clips with speeds and frequencies drawn around a
/// natural walk; `spin_rate` applies to every clip.
pub fn synth_corpus(clips: usize, seconds: f64, frame_rate: f64, seed: u64, joint_count: usize) -> Result<Vec<MotionClip>> {
    let mut rng = seeded(seed);
    (0..clips)
        .map(|i| {
            let speed = uniform_range(&mut rng, 0.8, 1.8);
            let frequency = 0.55 + 0.3 * speed + uniform_range(&mut rng, -0.05, 0.05);
            let turn_rate = uniform_range(&mut rng, -0.3, 0.3);
            let params = GaitParams {
                joint_count,
                frequency,
                speed,
                duration: seconds,
                frame_rate,
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                turn_rate,
                ..GaitParams::default()
            };
            Ok(synth_gait(&params)?.1)
        })
        .collect()
}

/// Smoothly oscillating serial chain of `joints` animated joints plus an end
/// site, root fixed at the origin. Each joint swings about its own random
/// axis around a random rest rotation.
pub fn synth_chain(joints: usize, frames: usize, frame_rate: f64, seed: u64) -> Result<MotionClip> {
    if joints == 0 || frames == 0 {
        return Err(Error::input("chain needs joints and frames"));
    }
    let mut rng = seeded(seed);
    let mut u = |lo: f64, hi: f64| uniform_range(&mut rng, lo, hi);
    let unit = |u: &mut dyn FnMut(f64, f64) -> f64| loop {
        let v = [u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    let mut list = vec![Joint::new("j0", None, [0.0; 3])];
    for j in 1..=joints {
        let len = u(0.2, 0.4);
        let d = [u(-0.3, 0.3), 1.0, u(-0.3, 0.3)];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let off = [d[0] * len / n, d[1] * len / n, d[2] * len / n];
        if j == joints {
            list.push(Joint::end_site(format!("j{}_End", j - 1), j - 1, off));
        } else {
            list.push(Joint::new(format!("j{j}"), Some(j - 1), off));
        }
    }
    let skeleton = Skeleton::new(list)?;
    struct Swing {
        rest: UnitQuaternion,
        axis: Vec3,
        amp: f64,
        freq: f64,
        phase: f64,
    }
    let swings: Vec<Swing> = (0..joints)
        .map(|_| {
            let rest_axis = unit(&mut u);
            let rest = UnitQuaternion::from_axis_angle(rest_axis, u(0.0, 0.6));
            Swing {
                rest,
                axis: unit(&mut u),
                amp: u(0.3, 0.8),
                freq: u(0.3, 1.2),
                phase: u(0.0, TAU),
            }
        })
        .collect();
    let rotations = (0..frames)
        .map(|t| {
            let time = t as f64 / frame_rate;
            let mut frame: Vec<UnitQuaternion> = swings
                .iter()
                .map(|s| {
                    let a = s.amp * (TAU * s.freq * time + s.phase).sin();
                    qmul(UnitQuaternion::from_axis_angle(s.axis, a), s.rest)
                })
                .collect();
            frame.push(UnitQuaternion::IDENTITY);
            frame
        })
        .collect();
    MotionClip::new(skeleton, frame_rate, vec![[0.0; 3]; frames], rotations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics_full;

    #[test]
    fn ik_reaches_target() {
        for d in [[0.0, -0.8, 0.2], [0.05, -0.7, -0.3], [-0.1, -0.85, 0.0]] {
            let (h, k) = leg_ik(d);
            let knee = rotate_vector_unchecked(h, [0.0, -THIGH, 0.0]);
            let ankle = rotate_vector_unchecked(qmul(h, k), [0.0, -SHIN, 0.0]);
            let p = [knee[0] + ankle[0], knee[1] + ankle[1], knee[2] + ankle[2]];
            for a in 0..3 {
                assert!((p[a] - d[a]).abs() < 1e-9, "{p:?} vs {d:?}");
            }
            // Knee bends forward.
            assert!(knee[2] >= d[2] * THIGH / (THIGH + SHIN) - 1e-9);
        }
    }

    #[test]
    fn planted_foot_does_not_move() {
        let params = GaitParams {
            duration: 3.0,
            ..GaitParams::default()
        };
        let (skel, clip, truth) = synth_gait(&params).unwrap();
        let pos: Vec<_> = (0..clip.len())
            .map(|t| forward_kinematics_full(&skel, clip.root_positions[t], &clip.rotations[t]).unwrap())
            .collect();
        let c = truth.contacts[0];
        let foot = if c.foot == Foot::Left { joints::LEFT_FOOT } else { joints::RIGHT_FOOT };
        let a = pos[c.frame][foot];
        let b = pos[c.frame + 5][foot];
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
        assert!((a[1] - ANKLE_HEIGHT).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let p = GaitParams::default();
        assert_eq!(synth_gait(&p).unwrap().1, synth_gait(&p).unwrap().1);
    }
}
