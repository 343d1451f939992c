//! Locomotion features for the controlled pose network and closed-loop
//! generation along a trajectory.
//!
//! The controlled network works in a facing-aligned frame: the yaw of the
//! facing direction is removed from the root rotation, and the spline tangent
//! is expressed in that frame. Frames carry `[quaternions, root height,
//! positional offset]`.

use std::f64::consts::TAU;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics_full, Skeleton};
use crate::motiondata::spline::turn_angle;
use crate::motiondata::{GaitFeatures, MotionClip, TrajectorySpline, Vec2};
use crate::rotmath::{qmul, rotate_vector_unchecked, UnitQuaternion};

use super::encoder::{ControlFrame, CONTROL_DIM};
use super::pace::PaceNetwork;
use super::pose::{PoseNetwork, Stepper};

/// Joint positions further than this many skeleton heights from the root
/// abort generation.
pub const DIVERGENCE_HEIGHTS: f64 = 10.0;

/// Frames and per-frame controls in the facing-aligned representation.
#[derive(Clone, Debug, PartialEq)]
pub struct LocomotionSequence {
    pub frames: Vec<Vec<f64>>,
    pub controls: Vec<[f64; CONTROL_DIM]>,
}

impl LocomotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn yaw_of(facing: Vec2) -> f64 {
    facing[0].atan2(facing[1])
}

fn yaw(angle: f64) -> UnitQuaternion {
    UnitQuaternion::about_axis(1, angle)
}

/// Ground vector `v` seen from a frame rotated by `psi` about the vertical.
fn into_frame(v: Vec2, psi: f64) -> Vec2 {
    let r = rotate_vector_unchecked(yaw(-psi), [v[0], 0.0, v[1]]);
    [r[0], r[2]]
}

fn rotate2(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
}

fn control(tangent: Vec2, facing: Vec2, gait: Vec2) -> [f64; CONTROL_DIM] {
    let psi = yaw_of(facing);
    let phi = turn_angle(tangent, facing);
    ControlFrame {
        tangent: into_frame(tangent, psi),
        facing: [phi.cos(), phi.sin()],
        gait,
    }
    .to_array()
}

fn check_root_active(skel: &Skeleton) -> Result<()> {
    if skel.active_joints().first() != Some(&0) {
        return Err(Error::input("locomotion needs an animated root joint"));
    }
    Ok(())
}

/// Converts a clip with its gait features and fitted spline.
pub fn locomotion_sequence(
    clip: &MotionClip,
    features: &GaitFeatures,
    spline: &TrajectorySpline,
) -> Result<LocomotionSequence> {
    check_root_active(&clip.skeleton)?;
    if features.len() != clip.len() {
        return Err(Error::shape("gait features and clip differ in length"));
    }
    let mut frames = Vec::with_capacity(clip.len());
    let mut controls = Vec::with_capacity(clip.len());
    for (t, rots) in clip.active_rotations().into_iter().enumerate() {
        let facing = features.facing[t];
        let mut f: Vec<f64> = Vec::with_capacity(4 * rots.len() + 2);
        for (i, q) in rots.iter().enumerate() {
            let q = if i == 0 { qmul(yaw(-yaw_of(facing)), *q) } else { *q };
            f.extend_from_slice(&q.to_array());
        }
        f.push(features.root_height[t]);
        f.push(features.offset[t]);
        frames.push(f);
        let root = clip.root_positions[t];
        let seg = spline.segment_at(spline.project([root[0], root[2]]));
        controls.push(control(spline.tangents[seg], facing, features.gait_signal(t)));
    }
    Ok(LocomotionSequence { frames, controls })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub frames: usize,
    pub frame_rate: f64,
    /// Average speed along the spline, units per second.
    pub speed: f64,
}

/// Segment speeds with the predicted shape and a harmonic mean of `speed`,
/// so equal-length segments are traversed in `length / speed` overall.
/// Predictions are floored at a tenth of their mean so the root never
/// stalls; a profile with no positive values becomes constant.
pub fn speed_profile(predicted: &[f64], speed: f64) -> Vec<f64> {
    let n = predicted.len() as f64;
    let mean = predicted.iter().map(|v| v.max(0.0)).sum::<f64>() / n;
    if !(mean > 1e-9) || speed == 0.0 {
        return vec![speed; predicted.len()];
    }
    let floored: Vec<f64> = predicted.iter().map(|v| v.max(0.1 * mean)).collect();
    let harmonic = n / floored.iter().map(|v| 1.0 / v).sum::<f64>();
    floored.iter().map(|v| v * speed / harmonic).collect()
}

/// Generates `cfg.frames` frames along `spline`, conditioned on `init`.
///
/// The pace network provides facing, frequency and a speed profile (see
/// [`speed_profile`]); the root advances along the spline at
/// that speed, shifted by the predicted offset clamped to half a segment.
pub fn generate_locomotion(
    pose: &PoseNetwork,
    pace: &PaceNetwork,
    skeleton: &Skeleton,
    spline: &TrajectorySpline,
    init: &LocomotionSequence,
    cfg: &GenerateConfig,
) -> Result<MotionClip> {
    let pc = &pose.config;
    if !(pc.include_controls && pc.include_translations) {
        return Err(Error::Config("generation needs a pose network with controls and translations".into()));
    }
    check_root_active(skeleton)?;
    if pc.joints != skeleton.active_count() {
        return Err(Error::SkeletonMismatch(format!(
            "network predicts {} joints, skeleton animates {}",
            pc.joints,
            skeleton.active_count()
        )));
    }
    if init.is_empty() || init.frames.iter().any(|f| f.len() != pc.frame_dim()) {
        return Err(Error::shape("conditioning frames do not match the network"));
    }
    if !(cfg.speed >= 0.0 && cfg.speed.is_finite() && cfg.frame_rate > 0.0) {
        return Err(Error::input("speed must be non-negative and the frame rate positive"));
    }

    let paced = pace.predict(spline, cfg.speed)?;
    let profile = speed_profile(&paced.speed, cfg.speed);

    let qd = pc.quat_dim();
    let half = spline.segment_length / 2.0;
    let limit = DIVERGENCE_HEIGHTS * skeleton.reference_height();
    let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec()).expect("row");

    let mut stepper = Stepper::new(pose);
    for t in 0..init.len() - 1 {
        stepper.push(row(&init.frames[t]), Some(row(&init.controls[t + 1])))?;
    }
    let last_gait = init.controls[init.len() - 1];
    let mut theta = last_gait[5].atan2(last_gait[4]);
    let mut s = 0.0;
    let mut prev = init.frames[init.len() - 1].clone();

    let mut root_positions = Vec::with_capacity(cfg.frames);
    let mut rotations = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        let seg = spline.segment_at(s);
        let (v, f) = (profile[seg], paced.frequency[seg].max(0.0));
        let tangent = spline.tangents[seg];
        let facing = rotate2(tangent, turn_angle([1.0, 0.0], paced.facing[seg]));
        let c = control(tangent, facing, [v * theta.cos(), v * theta.sin()]);

        let out = stepper
            .push(row(&prev), Some(row(&c)))?
            .ok_or_else(|| Error::input("conditioning is shorter than the receptive field"))?;
        let mut frame = out.into_data();
        frame[qd + 1] = frame[qd + 1].clamp(-half, half);
        if !frame.iter().all(|x| x.is_finite()) {
            return Err(Error::Instability("non-finite pose during generation".into()));
        }

        let (ground, _) = spline.point_at(s + frame[qd + 1]);
        let root = [ground[0], frame[qd], ground[1]];
        let psi = yaw_of(facing);
        let active: Vec<UnitQuaternion> = frame[..qd]
            .chunks(4)
            .enumerate()
            .map(|(i, q)| {
                let q = crate::rotmath::normalize([q[0], q[1], q[2], q[3]])?;
                Ok(if i == 0 { qmul(yaw(psi), q) } else { q })
            })
            .collect::<Result<_>>()?;
        let full = skeleton.expand(&active)?;
        let positions = forward_kinematics_full(skeleton, root, &full)?;
        let far = positions.iter().any(|p| {
            let d = [p[0] - root[0], p[1] - root[1], p[2] - root[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() > limit
        });
        if far {
            return Err(Error::Instability(format!(
                "joint further than {DIVERGENCE_HEIGHTS} skeleton heights from the root"
            )));
        }
        root_positions.push(root);
        rotations.push(full);
        prev = frame;
        s += v / cfg.frame_rate;
        theta += TAU * f / cfg.frame_rate;
    }
    MotionClip::new(skeleton.clone(), cfg.frame_rate, root_positions, rotations)
}
