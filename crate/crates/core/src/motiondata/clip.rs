use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics_full, world_transforms, JointPositions, Pose, Skeleton, Vec3};
use crate::rotmath::{fix_continuity_in_place, UnitQuaternion};

/// One motion-capture take.
///
/// `rotations[t][j]` holds the local rotation of every skeleton joint
/// (active or not) at frame `t`. Construction normalizes the quaternions and
/// removes antipodal sign flips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub skeleton: Skeleton,
    pub frame_rate: f64,
    pub root_positions: Vec<Vec3>,
    pub rotations: Vec<Vec<UnitQuaternion>>,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub action: String,
}

impl MotionClip {
    pub fn new(
        skeleton: Skeleton,
        frame_rate: f64,
        root_positions: Vec<Vec3>,
        mut rotations: Vec<Vec<UnitQuaternion>>,
    ) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::input(format!("frame rate {frame_rate} must be positive")));
        }
        if root_positions.len() != rotations.len() {
            return Err(Error::shape(format!(
                "{} root positions for {} rotation frames",
                root_positions.len(),
                rotations.len()
            )));
        }
        for (t, frame) in rotations.iter_mut().enumerate() {
            if frame.len() != skeleton.len() {
                return Err(Error::shape(format!(
                    "frame {t} has {} rotations for {} joints",
                    frame.len(),
                    skeleton.len()
                )));
            }
            for q in frame.iter_mut() {
                *q = crate::rotmath::normalize(q.to_array())?;
            }
        }
        if !root_positions.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("root positions".into()));
        }
        fix_continuity_in_place(&mut rotations);
        Ok(Self {
            skeleton,
            frame_rate,
            root_positions,
            rotations,
            subject: String::new(),
            action: String::new(),
        })
    }

    pub fn with_labels(mut self, subject: impl Into<String>, action: impl Into<String>) -> Self {
        self.subject = subject.into();
        self.action = action.into();
        self
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Active-joint pose at frame `t`.
    pub fn pose(&self, t: usize) -> Pose {
        Pose {
            root_position: self.root_positions[t],
            rotations: self.skeleton.restrict(&self.rotations[t]),
        }
    }

    /// Active-joint rotations of every frame.
    pub fn active_rotations(&self) -> Vec<Vec<UnitQuaternion>> {
        self.rotations
            .iter()
            .map(|f| self.skeleton.restrict(f))
            .collect()
    }

    /// World joint positions of every frame.
    pub fn positions(&self) -> Result<Vec<JointPositions>> {
        self.root_positions
            .iter()
            .zip(&self.rotations)
            .map(|(&r, q)| forward_kinematics_full(&self.skeleton, r, q))
            .collect()
    }

    /// World position and rotation of joint `j` at frame `t`.
    pub fn joint_world(&self, t: usize, j: usize) -> Result<(Vec3, UnitQuaternion)> {
        let (p, q) = world_transforms(&self.skeleton, self.root_positions[t], &self.rotations[t])?;
        Ok((p[j], q[j]))
    }

    /// Frames `start..end` as a new clip.
    pub fn sub_clip(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::input(format!(
                "frame range {start}..{end} outside clip of {} frames",
                self.len()
            )));
        }
        Ok(Self {
            root_positions: self.root_positions[start..end].to_vec(),
            rotations: self.rotations[start..end].to_vec(),
            ..self.clone()
        })
    }

    /// Replaces the skeleton, e.g. after pruning. Joint counts must agree.
    pub fn with_skeleton(mut self, skeleton: Skeleton) -> Result<Self> {
        if skeleton.len() != self.skeleton.len() {
            return Err(Error::SkeletonMismatch(format!(
                "{} joints vs {}",
                skeleton.len(),
                self.skeleton.len()
            )));
        }
        self.skeleton = skeleton;
        Ok(self)
    }
}
