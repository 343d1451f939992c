//! Ablation harnesses: conditioning length, rotation parameterization and
//! position regression with inverse-kinematics reprojection.
//!
//! The parameterization and position comparisons share one small recurrent
//! model that reads the previous frame in a given representation and emits
//! the next one. Rotation outputs are converted to quaternions on the tape and
//! scored through forward kinematics, so every variant optimizes the same
//! positional loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::{
    fk_tape, forward_kinematics_full, ik_reproject, position_error, position_error_tape, velocity_error,
    velocity_error_samples, IkConfig, JointPositions, Pose, Skeleton, Vec3,
};
use crate::models::layers::{GruLayer, Linear};
use crate::motiondata::{EpisodeSampler, MotionClip};
use crate::rng::{derived, normal, seeded, Rng};
use crate::rotmath::{quat_to_euler, quat_to_expmap, EulerOrder, UnitQuaternion};
use crate::training::losses::penalty_unit_norm;
use crate::training::{Adam, AdamConfig};

use super::bootstrap::quantile;

/// `(n, error)` rows for each conditioning length, in the given order.
pub fn ablate_conditioning(
    n_values: &[usize],
    mut train_and_eval: impl FnMut(usize) -> Result<f64>,
) -> Result<Vec<(usize, f64)>> {
    n_values.iter().map(|&n| Ok((n, train_and_eval(n)?))).collect()
}

/// First index after which every successive change is below `rel` of the
/// current value.
pub fn plateau_index(errors: &[f64], rel: f64) -> Option<usize> {
    (0..errors.len()).find(|&i| {
        errors[i..]
            .windows(2)
            .all(|w| (w[1] - w[0]).abs() < rel * w[0].abs().max(f64::MIN_POSITIVE))
    })
}

/// Fraction of `samples` strictly above `threshold`.
pub fn tail_mass(samples: &[f64], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&s| s > threshold).count() as f64 / samples.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    Quaternion,
    ExpMap,
    Euler(EulerOrder),
    /// Joint positions, no rotations at all.
    Positions,
}

impl Parameterization {
    pub fn name(&self) -> String {
        match self {
            Self::Quaternion => "quaternion".into(),
            Self::ExpMap => "expmap".into(),
            Self::Euler(o) => format!("euler-{}", o.as_str()),
            Self::Positions => "positions".into(),
        }
    }

    pub fn width(&self, skel: &Skeleton) -> usize {
        let a = skel.active_count();
        match self {
            Self::Quaternion => 4 * a,
            Self::ExpMap | Self::Euler(_) => 3 * a,
            Self::Positions => 3 * skel.len(),
        }
    }

    /// Frame features from active rotations and the positions they produce.
    pub fn encode(&self, active: &[UnitQuaternion], positions: &[Vec3]) -> Vec<f64> {
        match self {
            Self::Quaternion => active.iter().flat_map(|q| q.to_array()).collect(),
            Self::ExpMap => active.iter().flat_map(|q| quat_to_expmap(*q).v).collect(),
            Self::Euler(o) => active.iter().flat_map(|q| quat_to_euler(*q, *o).euler.angles).collect(),
            Self::Positions => positions.iter().flatten().copied().collect(),
        }
    }
}

/// Quaternions `[..., 4A]` from Euler angles `[..., 3A]` (intrinsic order).
pub fn euler_to_quat_tape(tape: &mut Tape, e: Var, order: EulerOrder) -> Result<Var> {
    let w = tape.value(e).last_dim();
    if w % 3 != 0 {
        return Err(Error::shape("Euler features must come in triples"));
    }
    let a = w / 3;
    let half = tape.scale(e, 0.5)?;
    let c = tape.cos(half)?;
    let s = tape.sin(half)?;
    let mut lead = tape.value(e).shape().to_vec();
    *lead.last_mut().expect("axis") = 1;
    let z = tape.constant(Tensor::zeros(&lead))?;
    // Columns: cos at 0..3A, sin at 3A..6A, zero at 6A.
    let all = tape.concat(&[c, s, z])?;
    let mut q = None;
    for (slot, &axis) in order.axes().iter().enumerate() {
        let cols: Vec<usize> = (0..a)
            .flat_map(|j| {
                let k = 3 * j + slot;
                let mut quat = [k, 6 * a, 6 * a, 6 * a];
                quat[1 + axis] = 3 * a + k;
                quat
            })
            .collect();
        let qa = tape.gather(all, &cols)?;
        q = Some(match q {
            None => qa,
            Some(prev) => tape.qmul(prev, qa)?,
        });
    }
    Ok(q.expect("three axes"))
}

/// Quaternions `[..., 4A]` from exponential maps `[..., 3A]`.
pub fn expmap_to_quat_tape(tape: &mut Tape, v: Var) -> Result<Var> {
    let w = tape.value(v).last_dim();
    if w % 3 != 0 {
        return Err(Error::shape("exponential maps must come in triples"));
    }
    let a = w / 3;
    let sq = tape.square(v)?;
    let th2 = tape.sum_groups(sq, 3)?;
    let th2 = tape.add_scalar(th2, 1e-12)?;
    let th = tape.sqrt(th2)?;
    let half = tape.scale(th, 0.5)?;
    let cw = tape.cos(half)?;
    let sh = tape.sin(half)?;
    let k = tape.div(sh, th)?;
    let k3 = tape.gather(k, &(0..a).flat_map(|j| [j, j, j]).collect::<Vec<_>>())?;
    let xyz = tape.mul(v, k3)?;
    let all = tape.concat(&[cw, xyz])?;
    let cols: Vec<usize> = (0..a).flat_map(|j| [j, a + 3 * j, a + 3 * j + 1, a + 3 * j + 2]).collect();
    tape.gather(all, &cols)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub episode_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub penalty: f64,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 20,
            episodes_per_epoch: 64,
            episode_len: 16,
            batch_size: 16,
            lr: 3e-3,
            penalty: 0.01,
            seed: 0,
        }
    }
}

/// Encoded frames and target positions of one clip.
struct Prepared {
    features: Vec<Vec<f64>>,
    positions: Vec<JointPositions>,
}

fn prepare(clip: &MotionClip, p: Parameterization) -> Result<Prepared> {
    let skel = &clip.skeleton;
    let mut features = Vec::with_capacity(clip.len());
    let mut positions = Vec::with_capacity(clip.len());
    for rots in &clip.rotations {
        let pos = forward_kinematics_full(skel, [0.0; 3], rots)?;
        features.push(p.encode(&skel.restrict(rots), &pos));
        positions.push(pos);
    }
    Ok(Prepared { features, positions })
}

/// One-layer recurrent next-frame model in a chosen representation.
pub struct ParamModel {
    pub param: Parameterization,
    pub skeleton: Skeleton,
    pub params: ParamStore,
    gru: GruLayer,
    head: Linear,
}

impl ParamModel {
    pub fn new(param: Parameterization, skeleton: Skeleton, hidden: usize, bias: &[f64], seed: u64) -> Result<Self> {
        let w = param.width(&skeleton);
        if bias.len() != w {
            return Err(Error::shape("initial bias width"));
        }
        let mut rng = seeded(seed);
        let mut params = ParamStore::new();
        let gru = GruLayer::new(&mut params, "gru", w, hidden, &mut rng);
        let head = Linear::new(&mut params, "head", hidden, w, &mut rng);
        params.get_mut(head.w).data_mut().iter_mut().for_each(|v| *v *= 0.1);
        params.get_mut(head.b).data_mut().copy_from_slice(bias);
        Ok(Self {
            param,
            skeleton,
            params,
            gru,
            head,
        })
    }

    /// Teacher-forced next-frame outputs for inputs `[B, T, w]`:
    /// `[B·(T−1), w]` raw outputs predicting frames `1..T`.
    fn run(&self, tape: &mut Tape, vars: &[Var], inputs: Var) -> Result<Var> {
        let &[b, t, w] = tape.value(inputs).shape() else {
            return Err(Error::shape("inputs must be [B,T,w]"));
        };
        let mut h = self.gru.initial(tape, vars, b)?;
        let mut outs = Vec::with_capacity(t - 1);
        for i in 0..t - 1 {
            let x = tape.select(inputs, i)?;
            h = self.gru.step(tape, vars, x, h)?;
            outs.push(self.head.forward(tape, vars, h)?);
        }
        let y = tape.stack(&outs)?;
        tape.reshape(y, &[b * (t - 1), w])
    }

    /// Joint positions `[rows, 3J]` implied by raw outputs, plus the raw
    /// quaternions when the representation has them.
    fn positions(&self, tape: &mut Tape, raw: Var) -> Result<(Var, Option<Var>)> {
        let rows = tape.value(raw).outer();
        let quats = match self.param {
            Parameterization::Positions => return Ok((raw, None)),
            Parameterization::Quaternion => raw,
            Parameterization::ExpMap => expmap_to_quat_tape(tape, raw)?,
            Parameterization::Euler(o) => euler_to_quat_tape(tape, raw, o)?,
        };
        let unit = tape.normalize_quats(quats)?;
        let root = tape.constant(Tensor::zeros(&[rows, 3]))?;
        let pos = fk_tape(tape, &self.skeleton, root, unit)?;
        let raw_q = matches!(self.param, Parameterization::Quaternion).then_some(raw);
        Ok((pos, raw_q))
    }

    /// One-step predictions for every frame after the first.
    pub fn predict_positions(&self, features: &[Vec<f64>]) -> Result<Vec<JointPositions>> {
        let w = self.param.width(&self.skeleton);
        let t = features.len();
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let x = tape.constant(Tensor::new(vec![1, t, w], features.concat())?)?;
        let raw = self.run(&mut tape, &vars, x)?;
        let (pos, _) = self.positions(&mut tape, raw)?;
        Ok(tape
            .value(pos)
            .data()
            .chunks(3 * self.skeleton.len())
            .map(|r| r.chunks(3).map(|p| [p[0], p[1], p[2]]).collect())
            .collect())
    }
}

/// Per-epoch validation curves and final velocity-error samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCurve {
    pub param: Parameterization,
    pub seed: u64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub velocity_samples: Vec<f64>,
    /// Predicted positions of each validation clip (frames `1..`).
    #[serde(skip)]
    pub predictions: Vec<Vec<JointPositions>>,
}

fn evaluate(model: &ParamModel, val: &[Prepared]) -> Result<(f64, f64, Vec<f64>, Vec<Vec<JointPositions>>)> {
    let (mut pos, mut vel, mut samples, mut preds) = (0.0, 0.0, Vec::new(), Vec::new());
    for v in val {
        let p = model.predict_positions(&v.features)?;
        let truth = &v.positions[1..];
        pos += position_error(&p, truth)?;
        vel += velocity_error(&p, truth)?;
        samples.extend(velocity_error_samples(&p, truth)?);
        preds.push(p);
    }
    let n = val.len() as f64;
    Ok((pos / n, vel / n, samples, preds))
}

/// Trains one representation and records validation curves.
pub fn train_param_model(
    param: Parameterization,
    train: &[MotionClip],
    val: &[MotionClip],
    cfg: &AblationConfig,
) -> Result<(ParamModel, ParamCurve)> {
    let first = train.first().ok_or_else(|| Error::input("no training clips"))?;
    if val.is_empty() {
        return Err(Error::input("no validation clips"));
    }
    let skel = first.skeleton.clone();
    if train.iter().chain(val).any(|c| c.skeleton != skel) {
        return Err(Error::SkeletonMismatch("ablation clips must share one skeleton".into()));
    }
    let tr: Vec<Prepared> = train.iter().map(|c| prepare(c, param)).collect::<Result<_>>()?;
    let va: Vec<Prepared> = val.iter().map(|c| prepare(c, param)).collect::<Result<_>>()?;
    let w = param.width(&skel);
    let count: usize = tr.iter().map(|p| p.features.len()).sum();
    let mut bias = vec![0.0; w];
    for f in tr.iter().flat_map(|p| &p.features) {
        bias.iter_mut().zip(f).for_each(|(b, v)| *b += v / count as f64);
    }
    let mut model = ParamModel::new(param, skel.clone(), cfg.hidden, &bias, cfg.seed)?;
    let mut adam = Adam::new(model.params.values(), AdamConfig::default());
    let lengths: Vec<usize> = tr.iter().map(|p| p.features.len()).collect();
    let sampler = EpisodeSampler::new(&lengths, cfg.episode_len)?;
    let j3 = 3 * skel.len();
    let mut curve = ParamCurve {
        param,
        seed: cfg.seed,
        position: Vec::new(),
        velocity: Vec::new(),
        velocity_samples: Vec::new(),
        predictions: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let mut rng = derived(cfg.seed, epoch as u64);
        let episodes: Vec<_> = (0..cfg.episodes_per_epoch).map(|_| sampler.sample(&mut rng)).collect();
        for chunk in episodes.chunks(cfg.batch_size.max(1)) {
            let t = cfg.episode_len;
            let mut x = Vec::with_capacity(chunk.len() * t * w);
            let mut target = Vec::with_capacity(chunk.len() * (t - 1) * j3);
            for e in chunk {
                let p = &tr[e.clip];
                for f in &p.features[e.start..e.start + t] {
                    x.extend_from_slice(f);
                }
                for pos in &p.positions[e.start + 1..e.start + t] {
                    target.extend(pos.iter().flatten());
                }
            }
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape)?;
            let xv = tape.constant(Tensor::new(vec![chunk.len(), t, w], x)?)?;
            let tv = tape.constant(Tensor::new(vec![chunk.len() * (t - 1), j3], target)?)?;
            let raw = model.run(&mut tape, &vars, xv)?;
            let (pos, raw_q) = model.positions(&mut tape, raw)?;
            let mut loss = position_error_tape(&mut tape, pos, tv)?;
            if let Some(q) = raw_q {
                let pen = penalty_unit_norm(&mut tape, q, cfg.penalty)?;
                loss = tape.add(loss, pen)?;
            }
            let grads = tape.backward(loss)?;
            let grads = model.params.collect_grads(&grads, &vars);
            adam.step(model.params.values_mut(), grads, cfg.lr)?;
        }
        let (p, v, samples, preds) = evaluate(&model, &va)?;
        curve.position.push(p);
        curve.velocity.push(v);
        if epoch + 1 == cfg.epochs {
            curve.velocity_samples = samples;
            curve.predictions = preds;
        }
    }
    Ok((model, curve))
}

/// Trains every representation under the same budget and seed.
pub fn compare_parameterizations(
    params: &[Parameterization],
    train: &[MotionClip],
    val: &[MotionClip],
    cfg: &AblationConfig,
) -> Result<Vec<ParamCurve>> {
    params.iter().map(|&p| train_param_model(p, train, val, cfg).map(|r| r.1)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub position_loss: f64,
    pub velocity_loss: f64,
    pub velocity_samples: Vec<f64>,
    /// Largest deviation of any bone from its rest length.
    pub bone_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionRegressionReport {
    pub quaternion: VariantStats,
    pub raw_positions: VariantStats,
    pub reprojected: VariantStats,
    /// Ground truth perturbed to the quaternion model's mean position error,
    /// then reprojected.
    pub perturbed: VariantStats,
    pub perturbation_sigma: f64,
}

fn bone_deviation(skel: &Skeleton, frames: &[JointPositions]) -> f64 {
    let mut worst: f64 = 0.0;
    for f in frames {
        for (j, joint) in skel.joints().iter().enumerate() {
            if let Some(p) = joint.parent {
                let d = [f[j][0] - f[p][0], f[j][1] - f[p][1], f[j][2] - f[p][2]];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                worst = worst.max((len - skel.bone_length(j)).abs());
            }
        }
    }
    worst
}

fn stats(skel: &Skeleton, preds: &[Vec<JointPositions>], truth: &[Vec<JointPositions>]) -> Result<VariantStats> {
    let (mut pos, mut vel, mut samples, mut bone) = (0.0, 0.0, Vec::new(), 0.0f64);
    for (p, t) in preds.iter().zip(truth) {
        pos += position_error(p, t)?;
        vel += velocity_error(p, t)?;
        samples.extend(velocity_error_samples(p, t)?);
        bone = bone.max(bone_deviation(skel, p));
    }
    let n = preds.len() as f64;
    Ok(VariantStats {
        position_loss: pos / n,
        velocity_loss: vel / n,
        velocity_samples: samples,
        bone_deviation: bone,
    })
}

/// Reprojects position frames onto the skeleton, warm-starting each frame
/// from the previous solution.
pub fn reproject_sequence(skel: &Skeleton, frames: &[JointPositions], init: &Pose, ik: &IkConfig) -> Result<Vec<JointPositions>> {
    let mut pose = init.clone();
    frames
        .iter()
        .map(|target| {
            let r = ik_reproject(skel, target, &pose, ik)?;
            pose = r.pose;
            forward_kinematics_full(skel, pose.root_position, &skel.expand(&pose.rotations)?)
        })
        .collect()
}

/// Trains a quaternion model and a position model under the same budget, then
/// reprojects the position model's outputs with inverse kinematics.
pub fn compare_position_regression(
    train: &[MotionClip],
    val: &[MotionClip],
    cfg: &AblationConfig,
    ik: &IkConfig,
) -> Result<PositionRegressionReport> {
    let (_, quat) = train_param_model(Parameterization::Quaternion, train, val, cfg)?;
    let (_, pos) = train_param_model(Parameterization::Positions, train, val, cfg)?;
    let skel = &val[0].skeleton;
    let truth: Vec<Vec<JointPositions>> = val
        .iter()
        .map(|c| prepare(c, Parameterization::Positions).map(|p| p.positions[1..].to_vec()))
        .collect::<Result<_>>()?;
    let reprojected: Vec<Vec<JointPositions>> = val
        .iter()
        .zip(&pos.predictions)
        .map(|(c, p)| {
            let init = Pose {
                root_position: [0.0; 3],
                rotations: skel.restrict(&c.rotations[0]),
            };
            reproject_sequence(skel, p, &init, ik)
        })
        .collect::<Result<_>>()?;
    let quaternion = stats(skel, &quat.predictions, &truth)?;
    // Non-root joints carry the error; the root stays at the origin.
    let moving = (skel.len() - 1) as f64 / skel.len() as f64;
    let sigma = quaternion.position_loss / (CHI3_MEAN * moving);
    let perturbed_frames: Vec<Vec<JointPositions>> = truth
        .iter()
        .zip(val)
        .enumerate()
        .map(|(i, (t, c))| {
            let init = Pose {
                root_position: [0.0; 3],
                rotations: skel.restrict(&c.rotations[0]),
            };
            reproject_sequence(skel, &perturb_positions(t, sigma, &mut derived(cfg.seed, 1 << 32 | i as u64)), &init, ik)
        })
        .collect::<Result<_>>()?;
    let perturbed = stats(skel, &perturbed_frames, &truth)?;
    Ok(PositionRegressionReport {
        quaternion: stats(skel, &quat.predictions, &truth)?,
        raw_positions: stats(skel, &pos.predictions, &truth)?,
        reprojected: stats(skel, &reprojected, &truth)?,
        perturbed,
        perturbation_sigma: sigma,
    })
}

/// Mean Euclidean norm of an isotropic 3-D Gaussian with unit deviation.
const CHI3_MEAN: f64 = 1.595_769_121_605_730_7;

/// Adds isotropic Gaussian noise of deviation `sigma` to every non-root
/// joint of each frame.
pub fn perturb_positions(frames: &[JointPositions], sigma: f64, rng: &mut Rng) -> Vec<JointPositions> {
    frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            for p in f.iter_mut().skip(1) {
                for c in p.iter_mut() {
                    *c += sigma * normal(rng);
                }
            }
            f
        })
        .collect()
}

/// 99th percentile of the reference samples, applied to both.
pub fn tail_comparison(reference: &[f64], other: &[f64]) -> (f64, f64, f64) {
    let thr = quantile(reference, 0.99);
    (thr, tail_mass(reference, thr), tail_mass(other, thr))
}
