//! Finite-difference gradient suite over every tape primitive, the
//! positional loss through forward kinematics and both pose backbones.

use crate::autodiff::{check_gradient, GradCheckConfig, GradCheckReport, Tape, Tensor, Var};
use crate::error::Result;
use crate::kinematics::{fk_tape, position_error_tape, Joint, Skeleton};
use crate::models::{Backbone, PoseNetwork, PoseNetworkConfig};
use crate::rng::{seeded, uniform_index, uniform_range, Rng};
use crate::training::losses::{loss_euler_l1, loss_quat_dot, penalty_unit_norm};

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

/// Values whose magnitude lies in `[0.2, 1]` with a random sign, away from
/// the kinks of `abs` and `leaky_relu`.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = uniform_range(rng, 0.2, 1.0);
            if uniform_range(rng, -1.0, 1.0) < 0.0 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform_range(rng, lo, hi)).collect()).expect("shape matches")
}

/// Reduces any output to a scalar with fixed random weights, so that every
/// output element contributes with a distinct coefficient.
fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = seeded(seed ^ 0x5eed);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0))?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn primitive_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor>, Builder)> {
    let s = [3, 4];
    let mut cases: Vec<(&'static str, Vec<Tensor>, Builder)> = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, |$t:ident, $v:ident| $body:expr) => {
            cases.push(($name, $inputs, Box::new(move |$t: &mut Tape, $v: &[Var]| {
                let y = $body?;
                weighted($t, y, 1)
            })));
        };
    }
    case!("add", vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)], |t, v| t.add(v[0], v[1]));
    case!("sub", vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)], |t, v| t.sub(v[0], v[1]));
    case!("mul", vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)], |t, v| t.mul(v[0], v[1]));
    case!("div", vec![uniform(rng, &s, -1.0, 1.0), away_from_zero(rng, &s)], |t, v| t.div(v[0], v[1]));
    case!("add_bias", vec![uniform(rng, &[2, 3, 4], -1.0, 1.0), uniform(rng, &[4], -1.0, 1.0)], |t, v| t.add_bias(v[0], v[1]));
    case!("scale", vec![uniform(rng, &s, -1.0, 1.0)], |t, v| t.scale(v[0], -1.7));
    case!("add_scalar", vec![uniform(rng, &s, -1.0, 1.0)], |t, v| {
        let y = t.add_scalar(v[0], 0.3)?;
        t.square(y)
    });
    case!("matmul", vec![uniform(rng, &[2, 3, 4], -1.0, 1.0), uniform(rng, &[4, 5], -1.0, 1.0)], |t, v| t.matmul(v[0], v[1]));
    case!("concat", vec![uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[3, 5], -1.0, 1.0)], |t, v| t.concat(&[v[0], v[1], v[0]]));
    case!("slice", vec![uniform(rng, &[2, 3, 6], -1.0, 1.0)], |t, v| t.slice(v[0], 1, 3));
    case!("gather", vec![uniform(rng, &[3, 5], -1.0, 1.0)], |t, v| t.gather(v[0], &[4, 0, 0, 2, 4, 1]));
    case!("reshape", vec![uniform(rng, &[2, 6], -1.0, 1.0)], |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        let w = t.constant(Tensor::row((0..4).map(f64::from).collect()))?;
        let z = t.add_bias(y, w)?;
        t.square(z)
    });
    case!("select", vec![uniform(rng, &[2, 4, 3], -1.0, 1.0)], |t, v| t.select(v[0], 2));
    case!("time_slice", vec![uniform(rng, &[2, 5, 3], -1.0, 1.0)], |t, v| t.time_slice(v[0], 1, 3));
    case!("stack", vec![uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 3], -1.0, 1.0)], |t, v| t.stack(&[v[1], v[0], v[1]]));
    case!("sum", vec![uniform(rng, &s, -1.0, 1.0)], |t, v| {
        let y = t.sum(v[0])?;
        t.square(y)
    });
    case!("mean", vec![uniform(rng, &s, -1.0, 1.0)], |t, v| {
        let y = t.mean(v[0])?;
        t.square(y)
    });
    case!("sum_groups", vec![uniform(rng, &[3, 6], -1.0, 1.0)], |t, v| t.sum_groups(v[0], 3));
    case!("sqrt", vec![uniform(rng, &s, 0.2, 2.0)], |t, v| t.sqrt(v[0]));
    case!("square", vec![uniform(rng, &s, -1.0, 1.0)], |t, v| t.square(v[0]));
    case!("abs", vec![away_from_zero(rng, &s)], |t, v| t.abs(v[0]));
    case!("tanh", vec![uniform(rng, &s, -2.0, 2.0)], |t, v| t.tanh(v[0]));
    case!("sigmoid", vec![uniform(rng, &s, -3.0, 3.0)], |t, v| t.sigmoid(v[0]));
    case!("leaky_relu", vec![away_from_zero(rng, &s)], |t, v| t.leaky_relu(v[0], 0.05));
    case!("relu", vec![away_from_zero(rng, &s)], |t, v| t.leaky_relu(v[0], 0.0));
    case!("sin", vec![uniform(rng, &s, -3.0, 3.0)], |t, v| t.sin(v[0]));
    case!("cos", vec![uniform(rng, &s, -3.0, 3.0)], |t, v| t.cos(v[0]));
    case!("atan2", vec![away_from_zero(rng, &s), away_from_zero(rng, &s)], |t, v| t.atan2(v[0], v[1]));
    case!("wrap_angle", vec![uniform(rng, &s, -2.5, 2.5)], |t, v| {
        let y = t.scale(v[0], 2.0)?;
        t.wrap_angle(y)
    });
    case!("l2norm", vec![away_from_zero(rng, &[3, 6])], |t, v| t.l2norm(v[0], 3));
    case!("normalize_quats", vec![away_from_zero(rng, &[3, 8])], |t, v| t.normalize_quats(v[0]));
    case!("qmul", vec![uniform(rng, &[3, 8], -1.0, 1.0), uniform(rng, &[3, 8], -1.0, 1.0)], |t, v| t.qmul(v[0], v[1]));
    case!("rotate", vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)], |t, v| t.rotate(v[0], v[1]));
    case!(
        "conv1d",
        vec![uniform(rng, &[2, 7, 3], -1.0, 1.0), uniform(rng, &[6, 4], -1.0, 1.0), uniform(rng, &[4], -1.0, 1.0)],
        |t, v| t.conv1d(v[0], v[1], v[2], 2, 3)
    );
    case!("penalty_unit_norm", vec![uniform(rng, &[2, 8], -1.0, 1.0)], |t, v| penalty_unit_norm(t, v[0], 0.01));
    case!("loss_quat_dot", vec![uniform(rng, &[2, 8], -1.0, 1.0), uniform(rng, &[2, 8], -1.0, 1.0)], |t, v| loss_quat_dot(t, v[0], v[1]));
    cases
}

/// A branching test skeleton: root, a three-link chain and a two-link
/// branch, the last joint inactive.
pub fn test_skeleton() -> Skeleton {
    let mut joints = vec![
        Joint::new("root", None, [0.1, 0.9, 0.0]),
        Joint::new("a1", Some(0), [0.0, 0.4, 0.1]),
        Joint::new("a2", Some(1), [0.3, 0.1, 0.0]),
        Joint::new("a3", Some(2), [0.0, -0.2, 0.25]),
        Joint::new("b1", Some(0), [-0.2, -0.1, 0.0]),
        Joint::new("b2", Some(4), [0.0, -0.45, 0.05]),
    ];
    joints[5].dof_active = false;
    Skeleton::new(joints).expect("valid skeleton")
}

/// Every tape primitive on small random inputs.
pub fn check_primitives(seed: u64, cfg: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = seeded(seed);
    primitive_cases(&mut rng)
        .into_iter()
        .map(|(name, inputs, f)| {
            Ok(SuiteEntry {
                name: name.to_string(),
                report: check_gradient(&inputs, |t, v| f(t, v), None, cfg)?,
            })
        })
        .collect()
}

/// Positional loss through FK and the Euler-angle L1 loss on raw,
/// normalized-on-tape quaternions.
pub fn check_losses(seed: u64, cfg: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = seeded(seed);
    let skel = test_skeleton();
    let a = skel.active_count();
    let b = 3;
    let root = uniform(&mut rng, &[b, 3], -1.0, 1.0);
    let quats = away_from_zero(&mut rng, &[b, 4 * a]);
    let target = uniform(&mut rng, &[b, 3 * skel.len()], -1.0, 1.0);
    let fk = {
        let skel = skel.clone();
        let target = target.clone();
        check_gradient(
            &[root, quats.clone()],
            move |t, v| {
                let q = t.normalize_quats(v[1])?;
                let p = fk_tape(t, &skel, v[0], q)?;
                let tg = t.constant(target.clone())?;
                position_error_tape(t, p, tg)
            },
            None,
            cfg,
        )?
    };
    let orders: Vec<_> = skel.active_joints().iter().map(|&j| skel.joints()[j].order()).collect();
    let reference = uniform(&mut rng, &[b, 3 * a], -1.0, 1.0);
    let euler = check_gradient(
        &[quats],
        move |t, v| {
            let q = t.normalize_quats(v[0])?;
            let r = t.constant(reference.clone())?;
            loss_euler_l1(t, q, r, &orders)
        },
        None,
        cfg,
    )?;
    Ok(vec![
        SuiteEntry {
            name: "fk_positional_loss".into(),
            report: fk,
        },
        SuiteEntry {
            name: "euler_l1_loss".into(),
            report: euler,
        },
    ])
}

/// A sample of parameter entries of `net`, at most `per_tensor` per tensor.
fn sample_entries(net: &PoseNetwork, per_tensor: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    net.params
        .values()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let n = t.len();
            let picks: Vec<usize> = if n <= per_tensor {
                (0..n).collect()
            } else {
                (0..per_tensor).map(|_| uniform_index(rng, n)).collect()
            };
            picks.into_iter().map(move |k| (i, k))
        })
        .collect()
}

fn random_frames(rng: &mut Rng, b: usize, t: usize, quats: usize) -> Tensor {
    let mut data = Vec::with_capacity(b * t * 4 * quats);
    for _ in 0..b * t * quats {
        let q = away_from_zero(rng, &[4]);
        let n = q.norm();
        data.extend(q.data().iter().map(|v| v / n));
    }
    Tensor::new(vec![b, t, 4 * quats], data).expect("shape matches")
}

/// Both pose backbones, velocity mode, with the positional loss on a
/// multi-step rollout. `per_tensor` bounds how many entries of each parameter
/// tensor are perturbed.
pub fn check_backbones(config: &PoseNetworkConfig, seed: u64, per_tensor: usize, cfg: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let skel = test_skeleton();
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    for backbone in [Backbone::Recurrent, Backbone::Convolutional] {
        let conf = PoseNetworkConfig {
            joints: skel.active_count(),
            backbone,
            include_controls: false,
            include_translations: false,
            ..config.clone()
        };
        let net = PoseNetwork::new(conf, seed)?;
        let rf = net.config.receptive_field();
        let steps = 3;
        let t_in = match backbone {
            Backbone::Recurrent => steps,
            Backbone::Convolutional => rf + steps - 1,
        };
        let frames = random_frames(&mut rng, 2, t_in, skel.active_count());
        let target = uniform(&mut rng, &[2 * steps, 3 * skel.len()], -1.0, 1.0);
        let entries = sample_entries(&net, per_tensor, &mut rng);
        let skel = skel.clone();
        let net_ref = &net;
        let report = check_gradient(
            net.params.values(),
            move |t, v| {
                let x = t.constant(frames.clone())?;
                let preds = match net_ref.config.backbone {
                    Backbone::Recurrent => {
                        let mut state = net_ref.initial_state(t, v, 2)?;
                        let mut outs = Vec::new();
                        for i in 0..steps {
                            let prev = t.select(x, i)?;
                            let o = net_ref.step(t, v, &state, prev, None)?;
                            state = o.state;
                            outs.push(o.frame);
                        }
                        t.stack(&outs)?
                    }
                    Backbone::Convolutional => net_ref.conv_forward(t, v, x, None)?.frames,
                };
                let q = t.reshape(preds, &[2 * steps, 4 * skel.active_count()])?;
                let root = t.constant(Tensor::zeros(&[2 * steps, 3]))?;
                let p = fk_tape(t, &skel, root, q)?;
                let tg = t.constant(target.clone())?;
                position_error_tape(t, p, tg)
            },
            Some(&entries),
            cfg,
        )?;
        out.push(SuiteEntry {
            name: format!("{}_backbone", match backbone {
                Backbone::Recurrent => "recurrent",
                Backbone::Convolutional => "convolutional",
            }),
            report,
        });
    }
    Ok(out)
}

/// The full suite: primitives, losses and both backbones of `config`'s size.
pub fn run_suite(config: &PoseNetworkConfig, seed: u64, per_tensor: usize) -> Result<Vec<SuiteEntry>> {
    let cfg = GradCheckConfig::default();
    let mut all = check_primitives(seed, cfg)?;
    all.extend(check_losses(seed, cfg)?);
    all.extend(check_backbones(config, seed, per_tensor, cfg)?);
    Ok(all)
}
