//! Skeletons, forward kinematics and inverse-kinematics reprojection.
//!
//! World space is Y-up. A joint's world rotation is
//! `Q_j = qmul(Q_parent, q_j)` and its position is
//! `p_j = p_parent + rotate(Q_parent, offset_j)`; the root's parent is the
//! identity frame located at the pose's root position, so the root offset is
//! added to the root position. Rotations of inactive (pruned) joints come from
//! their `constant_rotation` (identity if unset).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rotmath::{normalize, EulerOrder, qmul, rotate_vector_unchecked, UnitQuaternion, UNIT_TOLERANCE};
use crate::training::adam::{Adam, AdamConfig};

pub type Vec3 = [f64; 3];

/// Per-joint world positions for one frame.
pub type JointPositions = Vec<Vec3>;

mod parent_index {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        p.map_or(-1, |v| v as i64).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = i64::deserialize(d)?;
        Ok((v >= 0).then_some(v as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// `-1` in JSON for the root.
    #[serde(with = "parent_index")]
    pub parent: Option<usize>,
    pub offset: Vec3,
    #[serde(default)]
    pub constant_rotation: Option<UnitQuaternion>,
    #[serde(default = "default_true")]
    pub dof_active: bool,
    /// BVH end site: carries geometry only and never has channels.
    #[serde(default)]
    pub end_site: bool,
    /// Euler order of the source channels, used when exporting and when
    /// measuring Euler-angle error. `None` means `xyz`.
    #[serde(default)]
    pub euler_order: Option<EulerOrder>,
}

fn default_true() -> bool {
    true
}

impl Joint {
    pub fn new(name: impl Into<String>, parent: Option<usize>, offset: Vec3) -> Self {
        Self {
            name: name.into(),
            parent,
            offset,
            constant_rotation: None,
            dof_active: true,
            end_site: false,
            euler_order: None,
        }
    }

    pub fn end_site(name: impl Into<String>, parent: usize, offset: Vec3) -> Self {
        Self {
            dof_active: false,
            end_site: true,
            ..Self::new(name, Some(parent), offset)
        }
    }

    pub fn order(&self) -> EulerOrder {
        self.euler_order.unwrap_or(EulerOrder::Xyz)
    }

    fn fixed_rotation(&self) -> UnitQuaternion {
        self.constant_rotation.unwrap_or(UnitQuaternion::IDENTITY)
    }
}

/// Kinematic tree with joints stored parents-first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonRaw", into = "SkeletonRaw")]
pub struct Skeleton {
    joints: Vec<Joint>,
    active: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonRaw {
    joints: Vec<Joint>,
}

impl TryFrom<SkeletonRaw> for Skeleton {
    type Error = Error;
    fn try_from(raw: SkeletonRaw) -> Result<Self> {
        Skeleton::new(raw.joints)
    }
}

impl From<Skeleton> for SkeletonRaw {
    fn from(s: Skeleton) -> Self {
        SkeletonRaw { joints: s.joints }
    }
}

impl Skeleton {
    /// Validates topological order (parents before children) and a single
    /// root at index 0.
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::input("skeleton has no joints"));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::input("joint 0 must be the root")),
                (_, None) => {
                    return Err(Error::input(format!("second root at joint {i} ({})", j.name)))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::input(format!(
                        "joint {i} ({}) has parent {p}; parents must precede children",
                        j.name
                    )))
                }
                _ => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::input(format!("joint {} has a non-finite offset", j.name)));
            }
        }
        let active = joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.dof_active)
            .map(|(i, _)| i)
            .collect();
        Ok(Self { joints, active })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Indices of joints whose rotations are predicted.
    pub fn active_joints(&self) -> &[usize] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Marks joints inactive with the given fixed rotations.
    pub fn with_pruned(&self, pruned: &[(usize, UnitQuaternion)]) -> Result<Self> {
        let mut joints = self.joints.clone();
        for &(i, q) in pruned {
            let j = joints
                .get_mut(i)
                .ok_or_else(|| Error::input(format!("no joint {i}")))?;
            j.dof_active = false;
            j.constant_rotation = Some(q);
        }
        Self::new(joints)
    }

    pub fn bone_length(&self, j: usize) -> f64 {
        crate::rotmath::norm3(self.joints[j].offset)
    }

    /// Largest axis-aligned extent of the rest pose, a scale reference for
    /// divergence checks.
    pub fn reference_height(&self) -> f64 {
        let rest: Vec<UnitQuaternion> = vec![UnitQuaternion::IDENTITY; self.len()];
        let pos = fk_positions(self, [0.0; 3], &rest);
        let mut extent = 0.0f64;
        for axis in 0..3 {
            let lo = pos.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = pos.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            extent = extent.max(hi - lo);
        }
        extent
    }

    /// Full per-joint rotations from active-joint rotations.
    pub fn expand(&self, active: &[UnitQuaternion]) -> Result<Vec<UnitQuaternion>> {
        if active.len() != self.active.len() {
            return Err(Error::shape(format!(
                "{} rotations for {} active joints",
                active.len(),
                self.active.len()
            )));
        }
        let mut full: Vec<UnitQuaternion> = self.joints.iter().map(Joint::fixed_rotation).collect();
        for (&j, &q) in self.active.iter().zip(active) {
            full[j] = q;
        }
        Ok(full)
    }

    /// Active-joint rotations extracted from a full rotation list.
    pub fn restrict(&self, full: &[UnitQuaternion]) -> Vec<UnitQuaternion> {
        self.active.iter().map(|&j| full[j]).collect()
    }

    /// Rest-pose rotations for the active joints.
    pub fn identity_pose(&self) -> Pose {
        Pose {
            root_position: [0.0; 3],
            rotations: vec![UnitQuaternion::IDENTITY; self.active.len()],
        }
    }
}

/// Root position plus one rotation per active joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root_position: Vec3,
    pub rotations: Vec<UnitQuaternion>,
}

fn fk_full(skel: &Skeleton, root: Vec3, rotations: &[UnitQuaternion]) -> (JointPositions, Vec<UnitQuaternion>) {
    let n = skel.len();
    let mut pos = Vec::with_capacity(n);
    let mut world = Vec::with_capacity(n);
    for (j, joint) in skel.joints.iter().enumerate() {
        let (pq, pp) = match joint.parent {
            Some(p) => (world[p], pos[p]),
            None => (UnitQuaternion::IDENTITY, root),
        };
        let o = rotate_vector_unchecked(pq, joint.offset);
        pos.push([pp[0] + o[0], pp[1] + o[1], pp[2] + o[2]]);
        world.push(qmul(pq, rotations[j]));
    }
    (pos, world)
}

fn fk_positions(skel: &Skeleton, root: Vec3, rotations: &[UnitQuaternion]) -> JointPositions {
    fk_full(skel, root, rotations).0
}

fn check_unit(qs: &[UnitQuaternion]) -> Result<()> {
    for q in qs {
        let n = q.norm();
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::InvalidRotation { norm: n });
        }
    }
    Ok(())
}

/// World joint positions for a pose.
pub fn forward_kinematics(skel: &Skeleton, pose: &Pose) -> Result<JointPositions> {
    let full = skel.expand(&pose.rotations)?;
    check_unit(&pose.rotations)?;
    Ok(fk_positions(skel, pose.root_position, &full))
}

/// Forward kinematics from rotations for every joint (active or not).
pub fn forward_kinematics_full(
    skel: &Skeleton,
    root: Vec3,
    rotations: &[UnitQuaternion],
) -> Result<JointPositions> {
    Ok(world_transforms(skel, root, rotations)?.0)
}

/// Positions and world rotations from rotations for every joint.
pub fn world_transforms(
    skel: &Skeleton,
    root: Vec3,
    rotations: &[UnitQuaternion],
) -> Result<(JointPositions, Vec<UnitQuaternion>)> {
    if rotations.len() != skel.len() {
        return Err(Error::shape(format!(
            "{} rotations for {} joints",
            rotations.len(),
            skel.len()
        )));
    }
    check_unit(rotations)?;
    Ok(fk_full(skel, root, rotations))
}

/// Differentiable forward kinematics on a tape.
///
/// `root` is `[B, 3]`, `rotations` is `[B, 4·A]` for the `A` active joints in
/// skeleton order. Returns `[B, 3·J]` positions for all joints. Rotations are
/// used as given; callers normalize them first when needed.
pub fn fk_tape(tape: &mut Tape, skel: &Skeleton, root: Var, rotations: Var) -> Result<Var> {
    let (rs, qs) = (tape.value(root).shape().to_vec(), tape.value(rotations).shape().to_vec());
    if rs.len() != 2 || rs[1] != 3 || qs.len() != 2 || qs[0] != rs[0] || qs[1] != 4 * skel.active_count() {
        return Err(Error::shape(format!(
            "fk_tape: root {rs:?}, rotations {qs:?} for {} active joints",
            skel.active_count()
        )));
    }
    let b = rs[0];
    let mut world: Vec<Option<Var>> = vec![None; skel.len()];
    let mut pos: Vec<Var> = Vec::with_capacity(skel.len());
    let mut active_slot = 0;
    for (j, joint) in skel.joints.iter().enumerate() {
        let local = if joint.dof_active {
            let v = tape.slice(rotations, 4 * active_slot, 4)?;
            active_slot += 1;
            v
        } else {
            let q = joint.fixed_rotation().to_array();
            tape.constant(Tensor::new(vec![b, 4], q.repeat(b))?)?
        };
        let p = match joint.parent {
            None => {
                let off = tape.constant(Tensor::new(vec![b, 3], joint.offset.repeat(b))?)?;
                world[j] = Some(local);
                tape.add(root, off)?
            }
            Some(parent) => {
                let pq = world[parent].expect("parent precedes child");
                let off = tape.constant(Tensor::new(vec![b, 3], joint.offset.repeat(b))?)?;
                let rotated = tape.rotate(pq, off)?;
                world[j] = Some(tape.qmul(pq, local)?);
                tape.add(pos[parent], rotated)?
            }
        };
        pos.push(p);
    }
    tape.concat(&pos)
}

/// Mean per-joint Euclidean distance on a tape, for `[B, 3·J]` inputs.
pub fn position_error_tape(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let n = tape.l2norm(d, 3)?;
    tape.mean(n)
}

fn check_frames(pred: &[JointPositions], target: &[JointPositions]) -> Result<()> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("position sequences differ in shape"));
    }
    if pred.is_empty() || pred[0].is_empty() {
        return Err(Error::shape("empty position sequence"));
    }
    Ok(())
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean over frames and joints of the Euclidean joint distance.
pub fn position_error(pred: &[JointPositions], target: &[JointPositions]) -> Result<f64> {
    check_frames(pred, target)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (fp, ft) in pred.iter().zip(target) {
        for (&a, &b) in fp.iter().zip(ft) {
            total += dist(a, b);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Frame-to-frame differences of a position sequence.
pub fn finite_differences(frames: &[JointPositions]) -> Vec<JointPositions> {
    frames
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
                .collect()
        })
        .collect()
}

/// [`position_error`] of the first differences.
pub fn velocity_error(pred: &[JointPositions], target: &[JointPositions]) -> Result<f64> {
    check_frames(pred, target)?;
    if pred.len() < 2 {
        return Err(Error::input("velocity error needs at least 2 frames"));
    }
    position_error(&finite_differences(pred), &finite_differences(target))
}

/// Per-frame, per-joint velocity errors (the samples behind
/// [`velocity_error`]), useful for histograms and tail statistics.
pub fn velocity_error_samples(pred: &[JointPositions], target: &[JointPositions]) -> Result<Vec<f64>> {
    check_frames(pred, target)?;
    let (dp, dt) = (finite_differences(pred), finite_differences(target));
    Ok(dp
        .iter()
        .zip(&dt)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| dist(x, y)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkConfig {
    pub step_size: f64,
    pub tol: f64,
    pub patience: usize,
    pub max_steps: usize,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            tol: 1e-8,
            patience: 100,
            max_steps: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkResult {
    pub pose: Pose,
    /// Position error of the returned pose.
    pub loss: f64,
    pub iterations: usize,
}

/// Times the IK step size is halved on a plateau before giving up.
pub const IK_MAX_HALVINGS: usize = 10;

/// Fits active-joint rotations to target positions with projected Adam.
///
/// Each step takes an Adam step on the raw quaternion components, then
/// renormalizes every quaternion. The root position stays fixed at
/// `init.root_position`. When the best loss has improved by less than `tol`
/// over the last `patience` steps, the step size is halved and the search
/// restarts from the best pose, while every new best grows it by 5% back
/// towards `step_size`. After [`IK_MAX_HALVINGS`] successive halvings that
/// each improved the loss by less than 10%, a plateau ends the search. It also stops when the loss drops below `tol` or
/// after `max_steps`. The best pose seen is returned.
pub fn ik_reproject(skel: &Skeleton, target: &[Vec3], init: &Pose, cfg: &IkConfig) -> Result<IkResult> {
    if target.len() != skel.len() {
        return Err(Error::shape(format!(
            "{} target positions for {} joints",
            target.len(),
            skel.len()
        )));
    }
    if !target.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::input("IK target contains non-finite positions"));
    }
    if init.rotations.len() != skel.active_count() {
        return Err(Error::shape("IK initial pose does not match the skeleton"));
    }
    let target_t = Tensor::new(vec![1, 3 * skel.len()], target.iter().flatten().copied().collect())?;
    let root_t = Tensor::new(vec![1, 3], init.root_position.to_vec())?;

    let eval = |q: &Tensor| -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let root = tape.constant(root_t.clone())?;
        let tgt = tape.constant(target_t.clone())?;
        let rot = tape.param(q.clone())?;
        let pos = fk_tape(&mut tape, skel, root, rot)?;
        let loss = position_error_tape(&mut tape, pos, tgt)?;
        let value = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        Ok((value, grads.get_or_zeros(rot, q.shape())))
    };

    let mut params = vec![Tensor::new(
        vec![1, 4 * skel.active_count()],
        init.rotations.iter().flat_map(|q| q.to_array()).collect(),
    )?];
    project(&mut params[0])?;
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            clip_norm: None,
            ..AdamConfig::default()
        },
    );

    let (mut loss, mut grad) = eval(&params[0])?;
    let mut best = (loss, params[0].clone());
    let mut history = vec![loss];
    let mut iterations = 0;
    let mut step = cfg.step_size;
    let mut halvings = 0;
    let mut plateau_best = f64::INFINITY;
    while iterations < cfg.max_steps && loss > cfg.tol {
        adam.step(&mut params, vec![grad], step)?;
        project(&mut params[0])?;
        iterations += 1;
        (loss, grad) = eval(&params[0])?;
        if loss < best.0 {
            best = (loss, params[0].clone());
            step = (step * 1.05).min(cfg.step_size);
        }
        history.push(best.0);
        if history.len() > cfg.patience {
            let old = history[history.len() - 1 - cfg.patience];
            if old - best.0 < cfg.tol {
                // Halvings only count towards giving up while they fail to
                // buy a real improvement.
                if best.0 < 0.9 * plateau_best {
                    halvings = 0;
                }
                plateau_best = best.0;
                if halvings == IK_MAX_HALVINGS {
                    break;
                }
                // Adam moves about `step` per iteration regardless of the
                // gradient scale, so a plateau usually means oscillation.
                halvings += 1;
                step *= 0.5;
                params[0] = best.1.clone();
                history.clear();
                history.push(best.0);
            }
        }
    }

    let rotations = best
        .1
        .data()
        .chunks(4)
        .map(|c| normalize([c[0], c[1], c[2], c[3]]))
        .collect::<Result<Vec<_>>>()?;
    Ok(IkResult {
        pose: Pose {
            root_position: init.root_position,
            rotations,
        },
        loss: best.0,
        iterations,
    })
}

fn project(t: &mut Tensor) -> Result<()> {
    for c in t.data_mut().chunks_mut(4) {
        let q = normalize([c[0], c[1], c[2], c[3]])?;
        c.copy_from_slice(&q.to_array());
    }
    Ok(())
}
