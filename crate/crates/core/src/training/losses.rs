//! Training losses on the tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::{fk_tape, position_error_tape, Skeleton};
use crate::rotmath::EulerOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// L1 between Euler angles, each difference wrapped to `[−π, π)`.
    EulerL1,
    /// `1 − p·q` per quaternion.
    QuatDot,
    /// Mean joint distance after forward kinematics.
    Positional,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler-l1" | "euler" => Ok(Self::EulerL1),
            "quat-dot" | "quaternion-dot" => Ok(Self::QuatDot),
            "positional" | "position" => Ok(Self::Positional),
            _ => Err(Error::Config(format!("unknown loss '{s}'"))),
        }
    }
}

/// Mean joint distance between `FK(root, rotations)` (`[B, 3]`, `[B, 4A]`)
/// and target positions `[B, 3J]`.
pub fn loss_positional(tape: &mut Tape, skel: &Skeleton, root: Var, rotations: Var, target: Var) -> Result<Var> {
    let pred = fk_tape(tape, skel, root, rotations)?;
    position_error_tape(tape, pred, target)
}

/// Euler angles `[..., 3A]` of unit quaternions `[..., 4A]`, one order per
/// joint. Uses the regular branch everywhere, so it is only smooth away from
/// gimbal lock.
pub fn quat_to_euler_tape(tape: &mut Tape, q: Var, orders: &[EulerOrder]) -> Result<Var> {
    let a = orders.len();
    if tape.value(q).last_dim() != 4 * a {
        return Err(Error::shape(format!(
            "{} quaternion columns for {a} joint orders",
            tape.value(q).last_dim()
        )));
    }
    let comp = |tape: &mut Tape, c: usize| tape.gather(q, &(0..a).map(|j| 4 * j + c).collect::<Vec<_>>());
    let (w, x, y, z) = (comp(tape, 0)?, comp(tape, 1)?, comp(tape, 2)?, comp(tape, 3)?);
    let mut prod = |u: Var, v: Var| tape.mul(u, v);
    let (xx, yy, zz) = (prod(x, x)?, prod(y, y)?, prod(z, z)?);
    let (xy, xz, yz) = (prod(x, y)?, prod(x, z)?, prod(y, z)?);
    let (wx, wy, wz) = (prod(w, x)?, prod(w, y)?, prod(w, z)?);

    // diag: 1 − 2(u + v); off-diagonal: 2(u ± v)
    let diag = |tape: &mut Tape, u: Var, v: Var| -> Result<Var> {
        let s = tape.add(u, v)?;
        let s = tape.scale(s, -2.0)?;
        tape.add_scalar(s, 1.0)
    };
    let off = |tape: &mut Tape, u: Var, v: Var, plus: bool| -> Result<Var> {
        let s = if plus { tape.add(u, v)? } else { tape.sub(u, v)? };
        tape.scale(s, 2.0)
    };
    let r = [
        [diag(tape, yy, zz)?, off(tape, xy, wz, false)?, off(tape, xz, wy, true)?],
        [off(tape, xy, wz, true)?, diag(tape, xx, zz)?, off(tape, yz, wx, false)?],
        [off(tape, xz, wy, false)?, off(tape, yz, wx, true)?, diag(tape, xx, yy)?],
    ];
    // All nine entries side by side: entry (m, n) of joint j at column (3m + n)·A + j.
    let flat: Vec<Var> = r.iter().flatten().copied().collect();
    let m = tape.concat(&flat)?;
    let pick = |tape: &mut Tape, f: &dyn Fn(EulerOrder) -> (usize, usize)| -> Result<Var> {
        let cols: Vec<usize> = orders
            .iter()
            .enumerate()
            .map(|(j, &o)| {
                let (u, v) = f(o);
                (3 * u + v) * a + j
            })
            .collect();
        tape.gather(m, &cols)
    };
    let r_ik = pick(tape, &|o| (o.axes()[0], o.axes()[2]))?;
    let r_jk = pick(tape, &|o| (o.axes()[1], o.axes()[2]))?;
    let r_kk = pick(tape, &|o| (o.axes()[2], o.axes()[2]))?;
    let r_ij = pick(tape, &|o| (o.axes()[0], o.axes()[1]))?;
    let r_ii = pick(tape, &|o| (o.axes()[0], o.axes()[0]))?;

    let rows = tape.value(r_ik).outer();
    let sign: Vec<f64> = (0..rows).flat_map(|_| orders.iter().map(|o| o.parity())).collect();
    let shape = tape.value(r_ik).shape().to_vec();
    let s = tape.constant(Tensor::new(shape, sign)?)?;

    let sr_ik = tape.mul(s, r_ik)?;
    let c2 = tape.square(r_jk)?;
    let k2 = tape.square(r_kk)?;
    let cm = tape.add(c2, k2)?;
    let cos_mid = tape.sqrt(cm)?;
    let mid = tape.atan2(sr_ik, cos_mid)?;
    let sr_jk = tape.mul(s, r_jk)?;
    let nsr_jk = tape.scale(sr_jk, -1.0)?;
    let first = tape.atan2(nsr_jk, r_kk)?;
    let sr_ij = tape.mul(s, r_ij)?;
    let nsr_ij = tape.scale(sr_ij, -1.0)?;
    let last = tape.atan2(nsr_ij, r_ii)?;
    let all = tape.concat(&[first, mid, last])?;
    let interleave: Vec<usize> = (0..a).flat_map(|j| [j, a + j, 2 * a + j]).collect();
    tape.gather(all, &interleave)
}

/// Mean absolute wrapped difference between the Euler angles of `pred`
/// quaternions and reference angles `[..., 3A]`.
pub fn loss_euler_l1(tape: &mut Tape, pred: Var, reference: Var, orders: &[EulerOrder]) -> Result<Var> {
    let e = quat_to_euler_tape(tape, pred, orders)?;
    let d = tape.sub(e, reference)?;
    let d = tape.wrap_angle(d)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}

/// Mean of `1 − p·q` over quaternions.
pub fn loss_quat_dot(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let pq = tape.mul(p, q)?;
    let dots = tape.sum_groups(pq, 4)?;
    let m = tape.mean(dots)?;
    let neg = tape.scale(m, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// `λ · mean((‖q‖² − 1)²)` over raw quaternions.
pub fn penalty_unit_norm(tape: &mut Tape, raw: Var, lambda: f64) -> Result<Var> {
    let sq = tape.square(raw)?;
    let n2 = tape.sum_groups(sq, 4)?;
    let d = tape.add_scalar(n2, -1.0)?;
    let d = tape.square(d)?;
    let m = tape.mean(d)?;
    tape.scale(m, lambda)
}

/// Mean absolute error.
pub fn mae(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}
