//! Independent matrix oracles shared by the integration tests.
#![allow(dead_code)]

use quatmotion::rotmath::UnitQuaternion;

pub type Mat3 = [[f64; 3]; 3];

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn matvec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

/// Rodrigues' formula for a unit axis.
pub fn rodrigues(axis: [f64; 3], angle: f64) -> Mat3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let k2 = matmul(&k, &k);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = f64::from(u8::from(i == j)) + s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    out
}

pub fn axis_matrix(axis: usize, angle: f64) -> Mat3 {
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    rodrigues(a, angle)
}

/// Matrix of a unit quaternion, going through its axis and angle.
pub fn quat_matrix(q: UnitQuaternion) -> Mat3 {
    let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    if s < 1e-300 {
        return axis_matrix(0, 0.0);
    }
    rodrigues([q.x, q.y, q.z], 2.0 * s.atan2(q.w))
}

pub fn max_diff(a: &Mat3, b: &Mat3) -> f64 {
    (0..9).map(|k| (a[k / 3][k % 3] - b[k / 3][k % 3]).abs()).fold(0.0, f64::max)
}

pub fn quat_close(a: UnitQuaternion, b: UnitQuaternion, tol: f64) -> bool {
    let d = a.dot(b).abs();
    (1.0 - d).abs() <= tol || {
        let sign = if a.dot(b) < 0.0 { -1.0 } else { 1.0 };
        let (a, b) = (a.to_array(), b.to_array());
        (0..4).all(|i| (a[i] - sign * b[i]).abs() <= tol)
    }
}

pub fn random_quat(u: [f64; 3]) -> UnitQuaternion {
    // Shoemake's uniform sampling from three uniforms.
    let (u1, u2, u3) = (u[0], u[1] * std::f64::consts::TAU, u[2] * std::f64::consts::TAU);
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::new(a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos())
}

pub type Mat4 = [[f64; 4]; 4];

pub fn homogeneous(r: &Mat3, t: [f64; 3]) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

pub fn matmul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// World positions by chaining homogeneous transforms: each joint's frame is
/// its parent's frame times translate(offset) times its local rotation.
pub fn matrix_fk(parents: &[Option<usize>], offsets: &[[f64; 3]], root: [f64; 3], rots: &[UnitQuaternion]) -> Vec<[f64; 3]> {
    let mut frames: Vec<Mat4> = Vec::with_capacity(parents.len());
    for j in 0..parents.len() {
        let local = homogeneous(&quat_matrix(rots[j]), [0.0; 3]);
        let shift = homogeneous(&axis_matrix(0, 0.0), offsets[j]);
        let base = match parents[j] {
            None => homogeneous(&axis_matrix(0, 0.0), root),
            Some(p) => frames[p],
        };
        frames.push(matmul4(&matmul4(&base, &shift), &local));
    }
    frames.iter().map(|m| [m[0][3], m[1][3], m[2][3]]).collect()
}

/// Random tree with `n` joints, parents preceding children.
pub fn random_tree(rng: &mut quatmotion::rng::Rng, n: usize) -> quatmotion::kinematics::Skeleton {
    use quatmotion::kinematics::{Joint, Skeleton};
    use quatmotion::rng::{uniform_index, uniform_range};
    let joints = (0..n)
        .map(|j| {
            let parent = (j > 0).then(|| uniform_index(rng, j));
            let off = [0; 3].map(|_| uniform_range(rng, -1.0, 1.0));
            Joint::new(format!("j{j}"), parent, off)
        })
        .collect();
    Skeleton::new(joints).expect("valid tree")
}

pub fn random_quat_rng(rng: &mut quatmotion::rng::Rng) -> UnitQuaternion {
    random_quat([0; 3].map(|_| quatmotion::rng::uniform(rng)))
}
