//! Equal-segment ground trajectories.
//!
//! Ground-plane points are `(x, z)` pairs. Turning angles are positive for
//! counter-clockwise turns in that plane (from `+x` towards `+z`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Vec3;

pub type Vec2 = [f64; 2];

/// Piecewise-linear path whose segments all have length `segment_length`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpline {
    /// Segment endpoints; `points.len() == segments + 1`.
    pub points: Vec<Vec2>,
    pub segment_length: f64,
    /// Unit direction of each segment.
    pub tangents: Vec<Vec2>,
    /// Signed turning angle into each segment divided by the segment length.
    /// Segment 0 copies segment 1 (or is 0 for a single segment).
    pub curvature: Vec<f64>,
}

/// Ground-plane projection `(x, z)` of 3-D points.
pub fn ground_points(positions: &[Vec3]) -> Vec<Vec2> {
    positions.iter().map(|p| [p[0], p[2]]).collect()
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn len2(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Signed angle from `a` to `b`.
pub fn turn_angle(a: Vec2, b: Vec2) -> f64 {
    (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1])
}

/// Resamples a polyline into chords of exactly length `l`.
///
/// Starting at the first point, each new endpoint is the first point further
/// along the polyline at Euclidean distance `l` from the previous endpoint.
/// The leftover tail shorter than `l` is dropped.
pub fn fit_spline(path: &[Vec2], l: f64) -> Result<TrajectorySpline> {
    if path.len() < 2 {
        return Err(Error::input("a spline needs at least 2 points"));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::input(format!("segment length {l} must be positive")));
    }
    if !path.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("spline waypoints".into()));
    }
    let total: f64 = path.windows(2).map(|w| len2(sub(w[1], w[0]))).sum();
    if total < l * (1.0 - 1e-9) {
        return Err(Error::input(format!(
            "path length {total} is shorter than one segment ({l})"
        )));
    }

    let mut points = vec![path[0]];
    let mut cur = path[0];
    // Position along the polyline: segment index and the start point of the
    // unexplored remainder of that segment.
    let mut seg = 0;
    let mut seg_start = path[0];
    'outer: loop {
        while seg + 1 < path.len() {
            let a = seg_start;
            let b = path[seg + 1];
            let d = sub(b, a);
            let f = sub(a, cur);
            // |f + t d|² = l²
            let qa = d[0] * d[0] + d[1] * d[1];
            if qa > 0.0 {
                let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
                let qc = f[0] * f[0] + f[1] * f[1] - l * l;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let t = (-qb + disc.sqrt()) / (2.0 * qa);
                    let last = seg + 2 == path.len();
                    let slack = if last { 1e-9 } else { 0.0 };
                    if (0.0..=1.0 + slack).contains(&t) {
                        let t = t.min(1.0);
                        let p = [a[0] + t * d[0], a[1] + t * d[1]];
                        // Re-project onto the circle so every chord is exactly l.
                        let dir = sub(p, cur);
                        let n = len2(dir);
                        let p = [cur[0] + dir[0] * l / n, cur[1] + dir[1] * l / n];
                        points.push(p);
                        cur = p;
                        seg_start = [a[0] + t * d[0], a[1] + t * d[1]];
                        continue 'outer;
                    }
                }
            }
            seg += 1;
            seg_start = path[seg];
        }
        break;
    }
    Ok(TrajectorySpline::from_points(points, l))
}

impl TrajectorySpline {
    /// Builds tangents and curvature from endpoints assumed to be spaced by
    /// `l`.
    pub fn from_points(points: Vec<Vec2>, l: f64) -> Self {
        let tangents: Vec<Vec2> = points
            .windows(2)
            .map(|w| {
                let d = sub(w[1], w[0]);
                let n = len2(d);
                [d[0] / n, d[1] / n]
            })
            .collect();
        let mut curvature = vec![0.0; tangents.len()];
        for s in 1..tangents.len() {
            curvature[s] = turn_angle(tangents[s - 1], tangents[s]) / l;
        }
        if curvature.len() > 1 {
            curvature[0] = curvature[1];
        }
        Self {
            points,
            segment_length: l,
            tangents,
            curvature,
        }
    }

    /// Straight spline of `segments` segments starting at `start` heading
    /// along `direction`.
    pub fn straight(start: Vec2, direction: Vec2, segments: usize, l: f64) -> Self {
        let n = len2(direction);
        let d = [direction[0] / n, direction[1] / n];
        let points = (0..=segments)
            .map(|i| [start[0] + d[0] * l * i as f64, start[1] + d[1] * l * i as f64])
            .collect();
        Self::from_points(points, l)
    }

    pub fn segments(&self) -> usize {
        self.tangents.len()
    }

    pub fn length(&self) -> f64 {
        self.segments() as f64 * self.segment_length
    }

    /// Point at arc length `s`, clamped to the spline, and its segment.
    pub fn point_at(&self, s: f64) -> (Vec2, usize) {
        let n = self.segments();
        if n == 0 {
            return (self.points[0], 0);
        }
        let s = s.clamp(0.0, self.length());
        let seg = ((s / self.segment_length).floor() as usize).min(n - 1);
        let u = s - seg as f64 * self.segment_length;
        let p = self.points[seg];
        let t = self.tangents[seg];
        ([p[0] + t[0] * u, p[1] + t[1] * u], seg)
    }

    /// Segment index containing arc length `s`.
    pub fn segment_at(&self, s: f64) -> usize {
        self.point_at(s).1
    }

    /// Arc-length parameter of the point of the spline closest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (i, (a, t)) in self.points.iter().zip(&self.tangents).enumerate() {
            let f = sub(p, *a);
            let u = (f[0] * t[0] + f[1] * t[1]).clamp(0.0, self.segment_length);
            let q = [a[0] + t[0] * u, a[1] + t[1] * u];
            let d = len2(sub(p, q));
            if d < best.0 {
                best = (d, i as f64 * self.segment_length + u);
            }
        }
        best.1
    }

    /// Distance from `p` to the spline.
    pub fn distance(&self, p: Vec2) -> f64 {
        let (q, _) = self.point_at(self.project(p));
        len2(sub(p, q))
    }
}
