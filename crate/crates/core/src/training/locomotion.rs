//! Turning walking clips into training data for the controlled pose network
//! and the pace network.

use crate::error::{Error, Result};
use crate::kinematics::Skeleton;
use crate::models::{locomotion_sequence, pace_sample, LocomotionSequence, PaceSample};
use crate::motiondata::spline::ground_points;
use crate::motiondata::{extract_gait_features, fit_spline, GaitFeatures, MotionClip};

use super::pose::PoseDataset;

#[derive(Clone, Debug)]
pub struct LocomotionData {
    pub dataset: PoseDataset,
    pub sequences: Vec<LocomotionSequence>,
    pub pace_samples: Vec<PaceSample>,
    pub segment_length: f64,
}

/// Left and right foot joints, found by name (`left`/`right` together with
/// `foot`, `ankle` or `toe`, case-insensitive).
pub fn find_feet(skel: &Skeleton) -> Result<(usize, usize)> {
    let find = |side: &str| {
        skel.joints().iter().position(|j| {
            let n = j.name.to_lowercase();
            n.contains(side) && ["foot", "ankle", "toe"].iter().any(|p| n.contains(p))
        })
    };
    match (find("left"), find("right")) {
        (Some(l), Some(r)) => Ok((l, r)),
        _ => Err(Error::input("no joints named like left/right feet; name them explicitly")),
    }
}

/// A quarter of the mean stride (speed over frequency) across clips.
pub fn default_segment_length(features: &[GaitFeatures]) -> Result<f64> {
    let strides: Vec<f64> = features
        .iter()
        .flat_map(|f| f.speed.iter().zip(&f.frequency))
        .filter(|(_, &fr)| fr > 1e-6)
        .map(|(s, fr)| s / fr)
        .collect();
    if strides.is_empty() {
        return Err(Error::input("no gait cycles found to size spline segments"));
    }
    Ok(strides.iter().sum::<f64>() / strides.len() as f64 / 4.0)
}

/// Gait features, fitted root splines, facing-aligned frames with controls,
/// and per-clip pace samples. All clips must share one skeleton.
pub fn prepare_locomotion(
    clips: &[MotionClip],
    feet: Option<(usize, usize)>,
    segment_length: Option<f64>,
) -> Result<LocomotionData> {
    let first = clips.first().ok_or_else(|| Error::input("no clips found"))?;
    let skel = &first.skeleton;
    if let Some(c) = clips.iter().find(|c| &c.skeleton != skel) {
        return Err(Error::SkeletonMismatch(format!("clip '{}' differs from the first clip", c.action)));
    }
    let (left, right) = match feet {
        Some(f) => f,
        None => find_feet(skel)?,
    };
    let features: Vec<GaitFeatures> = clips
        .iter()
        .map(|c| extract_gait_features(c, left, right))
        .collect::<Result<_>>()?;
    let l = match segment_length {
        Some(l) => l,
        None => default_segment_length(&features)?,
    };
    let mut sequences = Vec::with_capacity(clips.len());
    let mut pace_samples = Vec::with_capacity(clips.len());
    for (clip, f) in clips.iter().zip(&features) {
        let path = ground_points(&clip.root_positions);
        let spline = fit_spline(&path, l)?;
        sequences.push(locomotion_sequence(clip, f, &spline)?);
        pace_samples.push(pace_sample(&spline, &path, f)?);
    }
    Ok(LocomotionData {
        dataset: PoseDataset::from_locomotion(skel.clone(), sequences.clone()),
        sequences,
        pace_samples,
        segment_length: l,
    })
}
