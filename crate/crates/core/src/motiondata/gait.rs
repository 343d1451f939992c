//! Gait features: foot contacts, phase, footstep frequency, local speed,
//! facing direction and the positional offset along the trajectory.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::rotate_vector_unchecked;

use super::spline::Vec2;
use super::MotionClip;

/// Foot speed below this fraction of the mean root speed counts as planted.
pub const CONTACT_SPEED_FRACTION: f64 = 0.05;
/// Absolute floor of the contact threshold, in units per frame.
pub const CONTACT_SPEED_FLOOR: f64 = 1e-4;
/// Box filter width at 30 Hz; scaled with the frame rate.
pub const LOWPASS_FRAMES_AT_30HZ: f64 = 31.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Foot {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub frame: usize,
    pub foot: Foot,
}

/// Per-frame gait description of a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitFeatures {
    pub frame_rate: f64,
    /// Ground-plane facing direction `(x, z)`, unit length.
    pub facing: Vec<Vec2>,
    /// Gait cycles per second (phase rate / 2π).
    pub frequency: Vec<f64>,
    /// Low-passed ground speed of the root, units per second.
    pub speed: Vec<f64>,
    /// Unwrapped phase: left contacts at multiples of 2π, right contacts at
    /// odd multiples of π.
    pub phase: Vec<f64>,
    pub root_height: Vec<f64>,
    /// Integral of the high-frequency part of the root speed.
    pub offset: Vec<f64>,
    pub contacts: Vec<Contact>,
    /// No contacts were found; frequency is zero and phase constant.
    pub degenerate: bool,
}

impl GaitFeatures {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// `A · [cos θ, sin θ]` with `A` the local speed.
    pub fn gait_signal(&self, t: usize) -> Vec2 {
        let (s, c) = self.phase[t].sin_cos();
        [self.speed[t] * c, self.speed[t] * s]
    }

    pub fn mean_frequency(&self) -> f64 {
        if self.frequency.is_empty() {
            return 0.0;
        }
        self.frequency.iter().sum::<f64>() / self.frequency.len() as f64
    }
}

/// Centered moving average of odd `width`, replicating edge samples.
pub fn box_filter(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let half = (width.max(1) / 2) as isize;
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| (-half..=half).map(|k| at(i + k)).sum::<f64>() / (2 * half + 1) as f64)
        .collect()
}

/// Odd box-filter width for a frame rate.
pub fn lowpass_width(frame_rate: f64) -> usize {
    let w = (LOWPASS_FRAMES_AT_30HZ * frame_rate / 30.0).round().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Instantaneous ground-plane root speed in units per second (central
/// differences, one-sided at the ends).
pub fn ground_speed(points: &[Vec2], frame_rate: f64) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|t| {
            let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
            let d = [points[b][0] - points[a][0], points[b][1] - points[a][1]];
            d[0].hypot(d[1]) * frame_rate / (b - a) as f64
        })
        .collect()
}

/// Touchdown frames: the first frame of each run where the forward-difference
/// foot speed drops below `threshold` after having been above it.
pub fn detect_touchdowns(foot: &[[f64; 3]], threshold: f64) -> Vec<usize> {
    let n = foot.len();
    if n < 2 {
        return Vec::new();
    }
    let speed: Vec<f64> = (0..n)
        .map(|t| {
            let (a, b) = if t + 1 < n { (t, t + 1) } else { (t - 1, t) };
            let d = [foot[b][0] - foot[a][0], foot[b][1] - foot[a][1], foot[b][2] - foot[a][2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .collect();
    (1..n)
        .filter(|&t| speed[t] < threshold && speed[t - 1] >= threshold)
        .collect()
}

/// Unwrapped phase through the contacts, linear in between and extrapolated
/// with the nearest rate outside. Returns `None` without contacts.
pub fn phase_from_contacts(contacts: &[Contact], frames: usize) -> Option<Vec<f64>> {
    let first = contacts.first()?;
    let mut keys: Vec<(f64, f64)> = Vec::with_capacity(contacts.len());
    let mut theta = match first.foot {
        Foot::Left => 0.0,
        Foot::Right => PI,
    };
    keys.push((first.frame as f64, theta));
    for c in &contacts[1..] {
        let target = match c.foot {
            Foot::Left => 0.0,
            Foot::Right => PI,
        };
        // Smallest value ≡ target (mod 2π) strictly above the previous key.
        let mut next = theta - theta.rem_euclid(TAU) + target;
        while next <= theta + 1e-9 {
            next += TAU;
        }
        if (c.frame as f64) <= keys.last().unwrap().0 {
            continue;
        }
        theta = next;
        keys.push((c.frame as f64, theta));
    }
    let rate_at = |i: usize| (keys[i + 1].1 - keys[i].1) / (keys[i + 1].0 - keys[i].0);
    let phase = (0..frames)
        .map(|t| {
            let t = t as f64;
            if keys.len() == 1 {
                return keys[0].1;
            }
            let i = match keys.iter().position(|k| k.0 > t) {
                Some(0) => 0,
                Some(i) => i - 1,
                None => keys.len() - 2,
            }
            .min(keys.len() - 2);
            keys[i].1 + rate_at(i) * (t - keys[i].0)
        })
        .collect();
    Some(phase)
}

/// Extracts gait features from a clip given its left and right foot joints.
pub fn extract_gait_features(clip: &MotionClip, left_foot: usize, right_foot: usize) -> Result<GaitFeatures> {
    let n = clip.len();
    if n == 0 {
        return Err(Error::input("cannot extract gait features from an empty clip"));
    }
    if left_foot >= clip.skeleton.len() || right_foot >= clip.skeleton.len() {
        return Err(Error::input("foot joint index outside the skeleton"));
    }
    let fr = clip.frame_rate;
    let positions = clip.positions()?;
    let root_ground: Vec<Vec2> = positions.iter().map(|p| [p[0][0], p[0][2]]).collect();

    let inst = ground_speed(&root_ground, fr);
    let speed = box_filter(&inst, lowpass_width(fr));
    let mut offset = vec![0.0; n];
    for t in 1..n {
        offset[t] = offset[t - 1] + (inst[t] - speed[t]) / fr;
    }

    let mean_root_per_frame = inst.iter().sum::<f64>() / n as f64 / fr;
    let threshold = (CONTACT_SPEED_FRACTION * mean_root_per_frame).max(CONTACT_SPEED_FLOOR);
    let left: Vec<[f64; 3]> = positions.iter().map(|p| p[left_foot]).collect();
    let right: Vec<[f64; 3]> = positions.iter().map(|p| p[right_foot]).collect();
    let mut contacts: Vec<Contact> = detect_touchdowns(&left, threshold)
        .into_iter()
        .map(|frame| Contact { frame, foot: Foot::Left })
        .chain(
            detect_touchdowns(&right, threshold)
                .into_iter()
                .map(|frame| Contact { frame, foot: Foot::Right }),
        )
        .collect();
    contacts.sort_by_key(|c| c.frame);

    let (phase, frequency, degenerate) = match phase_from_contacts(&contacts, n) {
        Some(phase) if contacts.len() >= 2 => {
            let freq = (0..n)
                .map(|t| {
                    let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
                    if a == b {
                        0.0
                    } else {
                        (phase[b] - phase[a]) / (b - a) as f64 * fr / TAU
                    }
                })
                .collect();
            (phase, freq, false)
        }
        Some(phase) => (phase, vec![0.0; n], true),
        None => (vec![0.0; n], vec![0.0; n], true),
    };

    let mut facing = Vec::with_capacity(n);
    let mut last = [0.0, 1.0];
    for frame in &clip.rotations {
        let f = rotate_vector_unchecked(frame[0], [0.0, 0.0, 1.0]);
        let g = [f[0], f[2]];
        let len = g[0].hypot(g[1]);
        if len > 1e-6 {
            last = [g[0] / len, g[1] / len];
        }
        facing.push(last);
    }

    Ok(GaitFeatures {
        frame_rate: fr,
        facing,
        frequency,
        speed,
        phase,
        root_height: positions.iter().map(|p| p[0][1]).collect(),
        offset,
        contacts,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_filter_of_constant_is_constant() {
        let x = vec![2.5; 40];
        assert_eq!(box_filter(&x, 31), x);
    }

    #[test]
    fn lowpass_width_is_odd() {
        assert_eq!(lowpass_width(30.0), 31);
        assert_eq!(lowpass_width(25.0), 27);
        assert_eq!(lowpass_width(120.0) % 2, 1);
    }

    #[test]
    fn phase_alternates_by_pi() {
        let c = [
            Contact { frame: 0, foot: Foot::Left },
            Contact { frame: 10, foot: Foot::Right },
            Contact { frame: 20, foot: Foot::Left },
        ];
        let p = phase_from_contacts(&c, 25).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[10] - PI).abs() < 1e-12);
        assert!((p[20] - TAU).abs() < 1e-12);
        assert!((p[24] - TAU - 4.0 * PI / 10.0).abs() < 1e-12);
    }
}
