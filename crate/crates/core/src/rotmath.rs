//! Rotation parameterizations: unit quaternions, Tait-Bryan Euler angles and
//! exponential maps, plus the small amount of algebra needed to move between
//! them.
//!
//! Quaternions are stored as `(w, x, y, z)` with `w` the scalar part.
//! Composition follows the Hamilton product: `qmul(parent, local)` maps vectors
//! expressed in the `local` frame into the `parent` frame, i.e. `local` is
//! applied first. Forward kinematics relies on exactly this convention.
//!
//! Euler angles with order `abc` denote the intrinsic product
//! `R_a(a1) · R_b(a2) · R_c(a3)`, which is also how BVH channel lists are read.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Neg;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are rejected by [`normalize`].
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Tolerance on `|q| - 1` accepted by [`rotate_vector`].
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Exponential-map angles below this use a series expansion.
pub const EXPMAP_SERIES_THRESHOLD: f64 = 1e-8;
/// `|cos(middle angle)|` below this is reported as gimbal lock.
pub const GIMBAL_THRESHOLD: f64 = 1e-6;

/// A rotation quaternion `w + xi + yj + zk`.
///
/// Constructors that produce rotations return unit quaternions; [`qmul`] does
/// not renormalize, so products of non-unit inputs keep the product of norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from raw components without normalizing.
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm3(axis);
        if n < DEGENERATE_NORM {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let k = s / n;
        Self::new(c, axis[0] * k, axis[1] * k, axis[2] * k)
    }

    /// Rotation about one of the coordinate axes (0 = x, 1 = y, 2 = z).
    pub fn about_axis(axis: usize, angle: f64) -> Self {
        let (s, c) = (angle * 0.5).sin_cos();
        let mut q = Self::new(c, 0.0, 0.0, 0.0);
        match axis {
            0 => q.x = s,
            1 => q.y = s,
            _ => q.z = s,
        }
        q
    }

    pub fn dot(self, other: Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Geodesic angle (radians, in `[0, π]`) between the rotations `self` and
    /// `other`, treating antipodal quaternions as equal.
    pub fn angle_to(self, other: Self) -> f64 {
        let d = (self.dot(other).abs() / (self.norm() * other.norm())).min(1.0);
        2.0 * d.acos()
    }

    /// 3×3 rotation matrix (row-major). Internal helper for Euler extraction.
    pub(crate) fn to_matrix(self) -> [[f64; 3]; 3] {
        let UnitQuaternion { w, x, y, z } = self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

impl Neg for UnitQuaternion {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Hamilton product `a ⊗ b`.
pub fn qmul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Rotates `v` by `q` (computes the vector part of `q v q*`).
pub fn rotate_vector(q: UnitQuaternion, v: [f64; 3]) -> Result<[f64; 3]> {
    let n = q.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(Error::InvalidRotation { norm: n });
    }
    Ok(rotate_vector_unchecked(q, v))
}

/// [`rotate_vector`] without the unit-norm check.
///
/// Uses `v + 2w(u × v) + 2u × (u × v)` with `u = (x, y, z)`.
#[inline]
pub fn rotate_vector_unchecked(q: UnitQuaternion, v: [f64; 3]) -> [f64; 3] {
    let u = [q.x, q.y, q.z];
    let t = cross(u, v);
    let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
    let c = cross(u, t);
    [
        v[0] + q.w * t[0] + c[0],
        v[1] + q.w * t[1] + c[1],
        v[2] + q.w * t[2] + c[2],
    ]
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Projects a raw 4-tuple onto the unit sphere.
pub fn normalize(raw: [f64; 4]) -> Result<UnitQuaternion> {
    let q = UnitQuaternion::from_array(raw);
    let n = q.norm();
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateQuaternion { norm: n });
    }
    Ok(UnitQuaternion::new(q.w / n, q.x / n, q.y / n, q.z / n))
}

/// The six Tait-Bryan axis orders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl EulerOrder {
    pub const ALL: [EulerOrder; 6] = [
        EulerOrder::Xyz,
        EulerOrder::Xzy,
        EulerOrder::Yxz,
        EulerOrder::Yzx,
        EulerOrder::Zxy,
        EulerOrder::Zyx,
    ];

    /// Axis indices in application order (0 = x, 1 = y, 2 = z).
    pub fn axes(self) -> [usize; 3] {
        match self {
            EulerOrder::Xyz => [0, 1, 2],
            EulerOrder::Xzy => [0, 2, 1],
            EulerOrder::Yxz => [1, 0, 2],
            EulerOrder::Yzx => [1, 2, 0],
            EulerOrder::Zxy => [2, 0, 1],
            EulerOrder::Zyx => [2, 1, 0],
        }
    }

    pub fn from_axes(axes: [usize; 3]) -> Option<Self> {
        EulerOrder::ALL.into_iter().find(|o| o.axes() == axes)
    }

    /// +1 for cyclic orders (xyz, yzx, zxy), −1 otherwise.
    pub fn parity(self) -> f64 {
        match self {
            EulerOrder::Xyz | EulerOrder::Yzx | EulerOrder::Zxy => 1.0,
            _ => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EulerOrder::Xyz => "xyz",
            EulerOrder::Xzy => "xzy",
            EulerOrder::Yxz => "yxz",
            EulerOrder::Yzx => "yzx",
            EulerOrder::Zxy => "zxy",
            EulerOrder::Zyx => "zyx",
        }
    }
}

impl fmt::Display for EulerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EulerOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        EulerOrder::ALL
            .into_iter()
            .find(|o| o.as_str() == lower)
            .ok_or_else(|| Error::input(format!("unknown Euler order '{s}'")))
    }
}

/// Three angles (radians) applied about the axes of `order`, first to last.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub angles: [f64; 3],
    pub order: EulerOrder,
}

impl EulerAngles {
    pub fn new(a1: f64, a2: f64, a3: f64, order: EulerOrder) -> Self {
        Self {
            angles: [a1, a2, a3],
            order,
        }
    }
}

/// Result of [`quat_to_euler`]; `singular` marks gimbal lock, in which case
/// the third angle is pinned to zero and the first absorbs the rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerConversion {
    pub euler: EulerAngles,
    pub singular: bool,
}

pub fn euler_to_quat(e: EulerAngles) -> UnitQuaternion {
    let [i, j, k] = e.order.axes();
    let qa = UnitQuaternion::about_axis(i, e.angles[0]);
    let qb = UnitQuaternion::about_axis(j, e.angles[1]);
    let qc = UnitQuaternion::about_axis(k, e.angles[2]);
    qmul(qmul(qa, qb), qc)
}

pub fn quat_to_euler(q: UnitQuaternion, order: EulerOrder) -> EulerConversion {
    let n = q.norm();
    let q = if n > 0.0 {
        UnitQuaternion::new(q.w / n, q.x / n, q.y / n, q.z / n)
    } else {
        UnitQuaternion::IDENTITY
    };
    let r = q.to_matrix();
    let [i, j, k] = order.axes();
    let s = order.parity();

    let cos_mid = r[j][k].hypot(r[k][k]);
    let mid = (s * r[i][k]).atan2(cos_mid);
    if cos_mid < GIMBAL_THRESHOLD {
        let first = (s * r[k][j]).atan2(r[j][j]);
        return EulerConversion {
            euler: EulerAngles::new(first, mid, 0.0, order),
            singular: true,
        };
    }
    let first = (-s * r[j][k]).atan2(r[k][k]);
    let last = (-s * r[i][j]).atan2(r[i][i]);
    EulerConversion {
        euler: EulerAngles::new(first, mid, last, order),
        singular: false,
    }
}

/// Axis-angle vector: direction is the axis, length the angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMap {
    pub v: [f64; 3],
}

impl ExpMap {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { v: [x, y, z] }
    }

    pub fn angle(self) -> f64 {
        norm3(self.v)
    }
}

pub fn expmap_to_quat(e: ExpMap) -> UnitQuaternion {
    let theta = e.angle();
    let half_sinc = if theta < EXPMAP_SERIES_THRESHOLD {
        0.5 - theta * theta / 48.0
    } else {
        (0.5 * theta).sin() / theta
    };
    UnitQuaternion::new(
        (0.5 * theta).cos(),
        e.v[0] * half_sinc,
        e.v[1] * half_sinc,
        e.v[2] * half_sinc,
    )
}

/// Inverse of [`expmap_to_quat`], returning the representative with angle in
/// `[0, π]`.
pub fn quat_to_expmap(q: UnitQuaternion) -> ExpMap {
    let q = if q.w < 0.0 { -q } else { q };
    let s = norm3([q.x, q.y, q.z]);
    let theta = 2.0 * s.atan2(q.w);
    let scale = if theta < EXPMAP_SERIES_THRESHOLD {
        // theta / sin(theta/2) → 2 / w for small angles
        2.0 / q.w
    } else {
        theta / s
    };
    ExpMap::new(q.x * scale, q.y * scale, q.z * scale)
}

/// Per-joint quaternion time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuaternionSequence {
    /// `frames[t][j]` is the rotation of joint `j` at frame `t`.
    pub frames: Vec<Vec<UnitQuaternion>>,
    pub frame_rate: f64,
}

/// Removes antipodal sign flips: for each joint, frame `t` is negated when its
/// dot product with the (already corrected) frame `t − 1` is negative.
pub fn fix_continuity(seq: &QuaternionSequence) -> QuaternionSequence {
    let mut out = seq.clone();
    fix_continuity_in_place(&mut out.frames);
    out
}

pub fn fix_continuity_in_place(frames: &mut [Vec<UnitQuaternion>]) {
    for t in 1..frames.len() {
        let (done, rest) = frames.split_at_mut(t);
        let prev = &done[t - 1];
        for (q, p) in rest[0].iter_mut().zip(prev) {
            if q.dot(*p) < 0.0 {
                *q = -*q;
            }
        }
    }
}

/// Smallest absolute difference between two angles modulo 2π, in `[0, π]`.
pub fn angle_distance_l1(pred: f64, target: f64) -> f64 {
    let d = (pred - target).rem_euclid(TAU);
    d.min(TAU - d).clamp(0.0, PI)
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(a: UnitQuaternion, b: UnitQuaternion, t: f64) -> UnitQuaternion {
    let mut cos = a.dot(b);
    let b = if cos < 0.0 {
        cos = -cos;
        -b
    } else {
        b
    };
    let (wa, wb) = if cos > 1.0 - 1e-9 {
        (1.0 - t, t)
    } else {
        let omega = cos.min(1.0).acos();
        let s = omega.sin();
        (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s)
    };
    let q = UnitQuaternion::new(
        wa * a.w + wb * b.w,
        wa * a.x + wb * b.x,
        wa * a.y + wb * b.y,
        wa * a.z + wb * b.z,
    );
    normalize(q.to_array()).unwrap_or(a)
}

/// Sign-aligned arithmetic mean of quaternions, renormalized. Every sample is
/// flipped into the hemisphere of `reference` before averaging.
pub fn mean_aligned(qs: &[UnitQuaternion], reference: UnitQuaternion) -> Result<UnitQuaternion> {
    let mut acc = [0.0; 4];
    for q in qs {
        let q = if q.dot(reference) < 0.0 { -*q } else { *q };
        for (a, c) in acc.iter_mut().zip(q.to_array()) {
            *a += c;
        }
    }
    normalize(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    const Q90Z: UnitQuaternion = UnitQuaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2);

    fn assert_quat_eq(a: UnitQuaternion, b: UnitQuaternion, tol: f64) {
        for (x, y) in a.to_array().into_iter().zip(b.to_array()) {
            assert_abs_diff_eq!(x, y, epsilon = tol);
        }
    }

    #[test]
    fn qmul_examples() {
        let q = UnitQuaternion::new(0.1, -0.7, 0.3, 0.2);
        assert_eq!(qmul(UnitQuaternion::IDENTITY, q), q);
        let i = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0);
        let j = UnitQuaternion::new(0.0, 0.0, 1.0, 0.0);
        assert_eq!(qmul(i, j), UnitQuaternion::new(0.0, 0.0, 0.0, 1.0));
        assert_quat_eq(qmul(Q90Z, Q90Z), UnitQuaternion::new(0.0, 0.0, 0.0, 1.0), 1e-15);
    }

    #[test]
    fn rotate_vector_examples() {
        let v = rotate_vector(Q90Z, [1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-15);
        let w = [0.3, -2.0, 5.0];
        assert_eq!(rotate_vector(UnitQuaternion::IDENTITY, w).unwrap(), w);
    }

    #[test]
    fn rotate_vector_rejects_non_unit() {
        let err = rotate_vector(UnitQuaternion::new(2.0, 0.0, 0.0, 0.0), [1.0, 0.0, 0.0]);
        assert!(matches!(err, Err(Error::InvalidRotation { .. })));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize([2.0, 0.0, 0.0, 0.0]).unwrap(), UnitQuaternion::IDENTITY);
        assert_eq!(
            normalize([1.0, 1.0, 1.0, 1.0]).unwrap(),
            UnitQuaternion::new(0.5, 0.5, 0.5, 0.5)
        );
        assert!(matches!(
            normalize([0.0; 4]),
            Err(Error::DegenerateQuaternion { .. })
        ));
        assert!(normalize([f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn euler_single_axis() {
        for order in EulerOrder::ALL {
            assert_eq!(
                euler_to_quat(EulerAngles::new(0.0, 0.0, 0.0, order)),
                UnitQuaternion::IDENTITY
            );
        }
        let q = euler_to_quat(EulerAngles::new(PI, 0.0, 0.0, EulerOrder::Xyz));
        assert_quat_eq(q, UnitQuaternion::new(0.0, 1.0, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn gimbal_lock_is_flagged_and_consistent() {
        for order in EulerOrder::ALL {
            let e = EulerAngles::new(0.4, PI / 2.0, -0.9, order);
            let q = euler_to_quat(e);
            let c = quat_to_euler(q, order);
            assert!(c.singular, "{order}");
            assert_eq!(c.euler.angles[2], 0.0);
            let back = euler_to_quat(c.euler);
            assert!(back.angle_to(q) < 1e-6, "{order}: {}", back.angle_to(q));
        }
    }

    #[test]
    fn expmap_examples() {
        assert_eq!(expmap_to_quat(ExpMap::new(0.0, 0.0, 0.0)), UnitQuaternion::IDENTITY);
        assert_quat_eq(
            expmap_to_quat(ExpMap::new(PI, 0.0, 0.0)),
            UnitQuaternion::new(0.0, 1.0, 0.0, 0.0),
            1e-15,
        );
        let tiny = ExpMap::new(1e-10, -2e-10, 0.0);
        let back = quat_to_expmap(expmap_to_quat(tiny));
        for (a, b) in back.v.iter().zip(tiny.v) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-20);
        }
    }

    #[test]
    fn quat_to_expmap_is_canonical() {
        // 3π/2 about z is the same rotation as π/2 about −z.
        let q = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], 1.5 * PI);
        let e = quat_to_expmap(q);
        assert!(e.angle() <= PI + 1e-12);
        assert_abs_diff_eq!(e.v[2], -PI / 2.0, epsilon = 1e-12);
        assert_eq!(quat_to_expmap(-q), e);
    }

    #[test]
    fn fix_continuity_examples() {
        let q = UnitQuaternion::new(0.5, 0.5, -0.5, 0.5);
        let seq = QuaternionSequence {
            frames: vec![vec![q], vec![-q], vec![q]],
            frame_rate: 30.0,
        };
        let fixed = fix_continuity(&seq);
        assert_eq!(fixed.frames, vec![vec![q], vec![q], vec![q]]);
        assert_eq!(fix_continuity(&fixed), fixed);
    }

    #[test]
    fn angle_distance_examples() {
        assert_abs_diff_eq!(angle_distance_l1(PI - 0.1, -PI + 0.1), 0.2, epsilon = 1e-12);
        assert_eq!(angle_distance_l1(1.3, 1.3), 0.0);
        assert_abs_diff_eq!(angle_distance_l1(0.5, -0.3), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn slerp_examples() {
        let a = UnitQuaternion::from_axis_angle([1.0, 2.0, 3.0], 0.7);
        let b = UnitQuaternion::from_axis_angle([-1.0, 0.0, 1.0], 2.1);
        assert_quat_eq(slerp(a, b, 0.0), a, 1e-15);
        let end = slerp(a, b, 1.0);
        assert!(end.angle_to(b) < 1e-7);
        let half = slerp(UnitQuaternion::IDENTITY, Q90Z, 0.5);
        assert_quat_eq(
            half,
            UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], PI / 4.0),
            1e-15,
        );
        let near = UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 1e-12);
        let mid = slerp(UnitQuaternion::IDENTITY, near, 0.5);
        assert_abs_diff_eq!(mid.norm(), 1.0, epsilon = 1e-15);
        // shorter arc: b and −b give the same interpolant
        assert_quat_eq(slerp(a, -b, 0.3), slerp(a, b, 0.3), 1e-12);
    }
}
