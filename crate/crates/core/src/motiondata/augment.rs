use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::kinematics::Skeleton;
use crate::rng::{uniform_range, Rng};
use crate::rotmath::{mean_aligned, qmul, rotate_vector_unchecked, UnitQuaternion};

use super::MotionClip;

/// Splits a clip into `factor` clips, phase `i` keeping frames
/// `i, i + factor, …`, each at `frame_rate / factor`.
pub fn downsample_all_phases(clip: &MotionClip, factor: usize) -> Result<Vec<MotionClip>> {
    if factor == 0 {
        return Err(Error::input("downsampling factor must be at least 1"));
    }
    if factor > clip.len() {
        return Err(Error::input(format!(
            "downsampling factor {factor} exceeds {} frames",
            clip.len()
        )));
    }
    (0..factor)
        .map(|phase| {
            let idx: Vec<usize> = (phase..clip.len()).step_by(factor).collect();
            let mut out = clip.clone();
            out.frame_rate = clip.frame_rate / factor as f64;
            out.root_positions = idx.iter().map(|&t| clip.root_positions[t]).collect();
            out.rotations = idx.iter().map(|&t| clip.rotations[t].clone()).collect();
            crate::rotmath::fix_continuity_in_place(&mut out.rotations);
            Ok(out)
        })
        .collect()
}

/// Left/right joint pairing used by [`mirror`]: an involution on joint
/// indices where unpaired joints map to themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwapMap {
    target: Vec<usize>,
}

impl SwapMap {
    pub fn from_pairs(joint_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut target: Vec<usize> = (0..joint_count).collect();
        let mut used = vec![false; joint_count];
        for &(a, b) in pairs {
            if a >= joint_count || b >= joint_count || a == b {
                return Err(Error::input(format!("invalid swap pair ({a}, {b})")));
            }
            if used[a] || used[b] {
                return Err(Error::input(format!("joint in swap pair ({a}, {b}) is paired twice")));
            }
            used[a] = true;
            used[b] = true;
            target[a] = b;
            target[b] = a;
        }
        Ok(Self { target })
    }

    /// Pairs given by joint names.
    pub fn from_names(skel: &Skeleton, pairs: &[(String, String)]) -> Result<Self> {
        let find = |n: &str| {
            skel.find(n)
                .ok_or_else(|| Error::input(format!("swap map names unknown joint '{n}'")))
        };
        let idx = pairs
            .iter()
            .map(|(a, b)| Ok((find(a)?, find(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(skel.len(), &idx)
    }

    /// Pairs joints whose names differ only by a `Left`/`Right` (or `L`/`R`)
    /// prefix. A left-side joint without a right counterpart, or vice versa,
    /// makes the map incomplete and is an error.
    pub fn infer(skel: &Skeleton) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, j) in skel.joints().iter().enumerate() {
            let Some((side, rest)) = side_of(&j.name) else { continue };
            let want = other_side(&j.name, side, rest);
            let Some(k) = skel.find(&want) else {
                return Err(Error::input(format!(
                    "incomplete swap map: '{}' has no counterpart '{want}'",
                    j.name
                )));
            };
            if side == Side::Left {
                pairs.push((i, k));
            }
        }
        Self::from_pairs(skel.len(), &pairs)
    }

    pub fn apply(&self, j: usize) -> usize {
        self.target[j]
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

fn side_of(name: &str) -> Option<(Side, &str)> {
    for (prefix, side) in [("Left", Side::Left), ("Right", Side::Right), ("L", Side::Left), ("R", Side::Right)] {
        if let Some(rest) = name.strip_prefix(prefix) {
            // Single-letter prefixes only count before an upper-case letter or
            // separator ("LHand", "L_Hand"), not in words like "Root".
            let boundary = prefix.len() > 1
                || rest.starts_with(|c: char| c.is_ascii_uppercase() || c == '_');
            if boundary && !rest.is_empty() {
                return Some((side, rest));
            }
        }
    }
    None
}

fn other_side(name: &str, side: Side, rest: &str) -> String {
    let long = name.starts_with("Left") || name.starts_with("Right");
    match (side, long) {
        (Side::Left, true) => format!("Right{rest}"),
        (Side::Right, true) => format!("Left{rest}"),
        (Side::Left, false) => format!("R{rest}"),
        (Side::Right, false) => format!("L{rest}"),
    }
}

/// Reflection across the `x = 0` plane.
///
/// Joint `j` of the output takes the reflected rotation of `swap(j)`, where
/// reflecting maps `(w, x, y, z)` to `(w, x, −y, −z)`; root `x` is negated.
/// For a left/right symmetric skeleton the FK positions are the input's with
/// `x` negated.
pub fn mirror(clip: &MotionClip, swap: &SwapMap) -> Result<MotionClip> {
    if swap.len() != clip.skeleton.len() {
        return Err(Error::input(format!(
            "swap map covers {} joints, skeleton has {}",
            swap.len(),
            clip.skeleton.len()
        )));
    }
    let reflect = |q: UnitQuaternion| UnitQuaternion::new(q.w, q.x, -q.y, -q.z);
    let mut out = clip.clone();
    out.root_positions = clip
        .root_positions
        .iter()
        .map(|p| [-p[0], p[1], p[2]])
        .collect();
    out.rotations = clip
        .rotations
        .iter()
        .map(|f| (0..f.len()).map(|j| reflect(f[swap.apply(j)])).collect())
        .collect();
    crate::rotmath::fix_continuity_in_place(&mut out.rotations);
    Ok(out)
}

/// Rigidly rotates the whole clip by `angle` about the vertical (`y`) axis
/// through the origin. Only the root rotation and root positions change.
pub fn rotate_about_vertical(clip: &MotionClip, angle: f64) -> MotionClip {
    let r = UnitQuaternion::about_axis(1, angle);
    let off = clip.skeleton.joints()[0].offset;
    let mut out = clip.clone();
    for (p, frame) in out.root_positions.iter_mut().zip(out.rotations.iter_mut()) {
        // The root joint sits at root_position + offset; rotate that point.
        let world = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
        let w = rotate_vector_unchecked(r, world);
        *p = [w[0] - off[0], w[1] - off[1], w[2] - off[2]];
        frame[0] = qmul(r, frame[0]);
    }
    crate::rotmath::fix_continuity_in_place(&mut out.rotations);
    out
}

/// Spins the root about `axis` (through the root joint) at `rate` rad/s on
/// top of its own motion. Tilted axes sweep the root through every
/// orientation, which is where angle-based parameterizations break down.
pub fn spin_root(clip: &MotionClip, axis: [f64; 3], rate: f64) -> MotionClip {
    let mut out = clip.clone();
    for (t, frame) in out.rotations.iter_mut().enumerate() {
        let r = UnitQuaternion::from_axis_angle(axis, rate * t as f64 / clip.frame_rate);
        frame[0] = qmul(r, frame[0]);
    }
    crate::rotmath::fix_continuity_in_place(&mut out.rotations);
    out
}

/// [`rotate_about_vertical`] by an angle drawn uniformly from `[0, 2π)`.
pub fn random_rotate(clip: &MotionClip, rng: &mut Rng) -> MotionClip {
    rotate_about_vertical(clip, uniform_range(rng, 0.0, TAU))
}

/// Marks joints whose rotation stays within `tol` radians (geodesic) of
/// their per-joint mean across every frame of every clip as inactive, fixing
/// them at their first-frame rotation. End sites and the root are left alone.
pub fn prune_constant_joints(skel: &Skeleton, clips: &[MotionClip], tol: f64) -> Result<Skeleton> {
    let first = clips.first().ok_or_else(|| Error::input("no clips to prune against"))?;
    if first.is_empty() {
        return Err(Error::input("cannot prune against an empty clip"));
    }
    for c in clips {
        if c.skeleton.len() != skel.len() {
            return Err(Error::SkeletonMismatch(format!(
                "clip has {} joints, skeleton {}",
                c.skeleton.len(),
                skel.len()
            )));
        }
    }
    let mut pruned = Vec::new();
    for j in skel.active_joints().iter().copied().filter(|&j| j != 0) {
        let reference = first.rotations[0][j];
        let samples: Vec<UnitQuaternion> = clips
            .iter()
            .flat_map(|c| c.rotations.iter().map(move |f| f[j]))
            .collect();
        let mean = mean_aligned(&samples, reference)?;
        let max_dev = samples
            .iter()
            .map(|q| q.angle_to(mean))
            .fold(0.0, f64::max);
        if max_dev < tol {
            pruned.push((j, reference));
        }
    }
    skel.with_pruned(&pruned)
}
