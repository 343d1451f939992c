//! Pose-network training with scheduled sampling.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::{fk_tape, position_error, velocity_error, JointPositions, Skeleton};
use crate::models::encoder::CONTROL_DIM;
use crate::models::{Backbone, Checkpoint, LocomotionSequence, PoseNetwork, PoseNetworkConfig};
use crate::motiondata::{EpisodeSampler, MotionClip};
use crate::rng::{bernoulli, derived, Rng};
use crate::rotmath::{quat_to_euler, EulerOrder, UnitQuaternion};

use super::adam::{Adam, AdamConfig};
use super::losses::{loss_euler_l1, loss_positional, loss_quat_dot, mae, penalty_unit_norm, LossKind};
use super::schedule::Schedule;

/// One training sequence: frames of width `frame_dim`, optional controls.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub frames: Vec<Vec<f64>>,
    pub controls: Option<Vec<[f64; CONTROL_DIM]>>,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PoseDataset {
    pub skeleton: Skeleton,
    pub sequences: Vec<PoseSequence>,
}

impl PoseDataset {
    /// Active-joint quaternions of each clip, without translations or
    /// controls. All clips must share `clips[0]`'s skeleton.
    pub fn from_clips(clips: &[MotionClip]) -> Result<Self> {
        let first = clips.first().ok_or_else(|| Error::input("empty dataset"))?;
        let sequences = clips
            .iter()
            .map(|c| {
                if c.skeleton != first.skeleton {
                    return Err(Error::SkeletonMismatch(format!("clip '{}' differs", c.action)));
                }
                Ok(PoseSequence {
                    frames: c
                        .active_rotations()
                        .iter()
                        .map(|f| f.iter().flat_map(|q| q.to_array()).collect())
                        .collect(),
                    controls: None,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            skeleton: first.skeleton.clone(),
            sequences,
        })
    }

    pub fn from_locomotion(skeleton: Skeleton, seqs: Vec<LocomotionSequence>) -> Self {
        Self {
            skeleton,
            sequences: seqs
                .into_iter()
                .map(|s| PoseSequence {
                    frames: s.frames,
                    controls: Some(s.controls),
                })
                .collect(),
        }
    }

    pub fn frame_dim(&self) -> usize {
        self.sequences.first().and_then(|s| s.frames.first()).map_or(0, Vec::len)
    }

    /// Stacks episodes into `[B, len, D]` frames and `[B, len, 6]` controls.
    pub fn batch(&self, episodes: &[(usize, usize)], len: usize) -> Result<(Tensor, Option<Tensor>)> {
        let d = self.frame_dim();
        let mut frames = Vec::with_capacity(episodes.len() * len * d);
        let mut controls = Vec::new();
        let with_controls = self.sequences.iter().all(|s| s.controls.is_some());
        for &(clip, start) in episodes {
            let seq = &self.sequences[clip];
            if start + len > seq.len() {
                return Err(Error::input("episode runs past the end of its sequence"));
            }
            for f in &seq.frames[start..start + len] {
                frames.extend_from_slice(f);
            }
            if with_controls {
                let c = seq.controls.as_ref().expect("checked");
                controls.extend(c[start..start + len].iter().flatten());
            }
        }
        let b = episodes.len();
        let controls = with_controls.then(|| Tensor::new(vec![b, len, CONTROL_DIM], controls)).transpose()?;
        Ok((Tensor::new(vec![b, len, d], frames)?, controls))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Weight of the unit-norm penalty.
    pub penalty: f64,
    /// Conditioning frames.
    pub condition: usize,
    /// Predicted frames.
    pub predict: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Feed predictions back with probability `1 − p`; off means teacher
    /// forcing throughout.
    pub scheduled_sampling: bool,
    /// Episodes per epoch; `None` means one per sequence.
    pub epoch_episodes: Option<usize>,
    pub validation_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            penalty: 0.01,
            condition: 10,
            predict: 10,
            batch_size: 16,
            epochs: 100,
            loss: LossKind::EulerL1,
            seed: 0,
            scheduled_sampling: true,
            epoch_episodes: None,
            validation_episodes: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(s.lr_decay) || !unit(s.teacher_decay) {
            return Err(Error::Config("decay factors must lie in (0, 1)".into()));
        }
        if !(0.001..=0.1).contains(&self.penalty) {
            return Err(Error::Config(format!("penalty weight {} outside [0.001, 0.1]", self.penalty)));
        }
        if self.condition == 0 || self.predict == 0 || self.batch_size == 0 {
            return Err(Error::Config("condition, predict and batch size must be positive".into()));
        }
        if !(s.lr0 > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one scheduled-sampling rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub loss: Var,
    /// Predicted frames `[B, k, D]`.
    pub predicted: Var,
    /// For each fed-back input frame `n..n+k−2` and each sequence: was the
    /// ground truth fed instead of the prediction?
    pub fed_ground_truth: Vec<Vec<bool>>,
}

fn orders(skel: &Skeleton) -> Vec<EulerOrder> {
    skel.active_joints().iter().map(|&j| skel.joints()[j].order()).collect()
}

/// Euler angles `[..., 3A]` of quaternions `[..., 4A]`.
pub fn euler_targets(q: &Tensor, orders: &[EulerOrder]) -> Result<Tensor> {
    let a = orders.len();
    let mut shape = q.shape().to_vec();
    *shape.last_mut().expect("axis") = 3 * a;
    let mut out = Vec::with_capacity(q.len() / 4 * 3);
    for row in q.data().chunks(4 * a) {
        for (c, &o) in row.chunks(4).zip(orders) {
            let e = quat_to_euler(UnitQuaternion::new(c[0], c[1], c[2], c[3]), o).euler;
            out.extend_from_slice(&e.angles);
        }
    }
    Tensor::new(shape, out)
}

/// `mask ⊙ gt + (1 − mask) ⊙ pred` with one mask bit per row.
fn mix(tape: &mut Tape, gt: Var, pred: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(gt);
    }
    if mask.iter().all(|&m| !m) {
        return Ok(pred);
    }
    let d = tape.value(gt).last_dim();
    let m: Vec<f64> = mask.iter().flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, d)).collect();
    let m = tape.constant(Tensor::new(vec![mask.len(), d], m)?)?;
    let diff = tape.sub(gt, pred)?;
    let md = tape.mul(m, diff)?;
    tape.add(pred, md)
}

/// Conditions on `n` ground-truth frames of `gt` (`[B, n + k, D]`) and
/// predicts `k`. Before each predicted frame is fed back, a Bernoulli(`p`)
/// draw per sequence decides whether the network sees the ground truth
/// instead. Recurrent feedback stays differentiable; convolutional feedback
/// is detached.
#[allow(clippy::too_many_arguments)]
pub fn scheduled_sampling_rollout(
    tape: &mut Tape,
    net: &PoseNetwork,
    vars: &[Var],
    skel: &Skeleton,
    gt: &Tensor,
    controls: Option<&Tensor>,
    n: usize,
    k: usize,
    p: f64,
    rng: &mut Rng,
    loss: LossKind,
    penalty: f64,
) -> Result<Rollout> {
    let &[b, len, d] = gt.shape() else {
        return Err(Error::shape("episode batch must be [B,T,D]"));
    };
    if len < n + k || n == 0 || k == 0 {
        return Err(Error::input(format!("episode of {len} frames is too short for {n} + {k}")));
    }
    let cfg = &net.config;
    let qd = cfg.quat_dim();
    let gt_var = tape.constant(gt.clone())?;
    let ctrl_var = controls.map(|c| tape.constant(c.clone())).transpose()?;
    // Decisions for the inputs at steps n..n+k−1 (the first is a prediction
    // of frame n only when k > 1).
    let fed_ground_truth: Vec<Vec<bool>> = (n + 1..n + k).map(|_| (0..b).map(|_| bernoulli(rng, p)).collect()).collect();

    let mut preds = Vec::with_capacity(k);
    let mut raws = Vec::with_capacity(k);
    match cfg.backbone {
        Backbone::Recurrent => {
            let mut state = net.initial_state(tape, vars, b)?;
            let mut last: Option<Var> = None;
            for t in 0..n + k - 1 {
                let g = tape.select(gt_var, t)?;
                let input = if t < n {
                    g
                } else {
                    mix(tape, g, last.expect("prediction available"), &fed_ground_truth[t - n])?
                };
                let c = ctrl_var.map(|c| tape.select(c, t + 1)).transpose()?;
                let out = net.step(tape, vars, &state, input, c)?;
                state = out.state;
                if t + 1 >= n {
                    preds.push(out.frame);
                    raws.push(out.raw);
                }
                last = Some(out.frame);
            }
        }
        Backbone::Convolutional => {
            let rf = cfg.receptive_field();
            if n < rf {
                return Err(Error::input(format!("convolutional training needs n ≥ {rf}")));
            }
            if fed_ground_truth.iter().flatten().all(|&m| m) {
                let x = tape.time_slice(gt_var, 0, n + k - 1)?;
                let c = ctrl_var.map(|c| tape.time_slice(c, 1, n + k - 1)).transpose()?;
                let out = net.conv_forward(tape, vars, x, c)?;
                let f = tape.time_slice(out.frames, n - rf, k)?;
                let r = tape.time_slice(out.raw, n - rf, k)?;
                let loss_var = rollout_loss(tape, net, skel, gt_var, f, r, n, k, loss, penalty)?;
                return Ok(Rollout {
                    loss: loss_var,
                    predicted: f,
                    fed_ground_truth,
                });
            }
            let mut hist: Vec<Var> = (0..n).map(|t| tape.select(gt_var, t)).collect::<Result<_>>()?;
            for tau in n..n + k {
                let win = tape.stack(&hist[tau - rf..tau])?;
                let c = ctrl_var.map(|c| tape.time_slice(c, tau - rf + 1, rf)).transpose()?;
                let out = net.conv_forward(tape, vars, win, c)?;
                let f = tape.reshape(out.frames, &[b, d])?;
                let r = tape.reshape(out.raw, &[b, qd])?;
                preds.push(f);
                raws.push(r);
                if tau + 1 < n + k {
                    let g = tape.select(gt_var, tau)?;
                    let fd = tape.detach(f)?;
                    let x = mix(tape, g, fd, &fed_ground_truth[tau - n])?;
                    hist.push(x);
                }
            }
        }
    }
    let f = tape.stack(&preds)?;
    let r = tape.stack(&raws)?;
    let loss_var = rollout_loss(tape, net, skel, gt_var, f, r, n, k, loss, penalty)?;
    Ok(Rollout {
        loss: loss_var,
        predicted: f,
        fed_ground_truth,
    })
}

#[allow(clippy::too_many_arguments)]
fn rollout_loss(
    tape: &mut Tape,
    net: &PoseNetwork,
    skel: &Skeleton,
    gt: Var,
    pred: Var,
    raw: Var,
    n: usize,
    k: usize,
    kind: LossKind,
    penalty: f64,
) -> Result<Var> {
    let cfg = &net.config;
    let qd = cfg.quat_dim();
    let b = tape.value(gt).shape()[0];
    let target = tape.time_slice(gt, n, k)?;
    let pq = tape.slice(pred, 0, qd)?;
    let tq = tape.slice(target, 0, qd)?;
    let main = match kind {
        LossKind::QuatDot => loss_quat_dot(tape, pq, tq)?,
        LossKind::EulerL1 => {
            let o = orders(skel);
            let reference = euler_targets(tape.value(tq), &o)?;
            let reference = tape.constant(reference)?;
            loss_euler_l1(tape, pq, reference, &o)?
        }
        LossKind::Positional => {
            let rows = b * k;
            let pq = tape.reshape(pq, &[rows, qd])?;
            let tq = tape.reshape(tq, &[rows, qd])?;
            let root = tape.constant(Tensor::zeros(&[rows, 3]))?;
            let target_pos = fk_tape(tape, skel, root, tq)?;
            let target_pos = tape.detach(target_pos)?;
            loss_positional(tape, skel, root, pq, target_pos)?
        }
    };
    let mut total = main;
    if cfg.include_translations {
        let pt = tape.slice(pred, qd, 2)?;
        let tt = tape.slice(target, qd, 2)?;
        let l = mae(tape, pt, tt)?;
        total = tape.add(total, l)?;
    }
    if penalty > 0.0 {
        let pen = penalty_unit_norm(tape, raw, penalty)?;
        total = tape.add(total, pen)?;
    }
    Ok(total)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub p: f64,
    pub train_loss: f64,
    pub val_position_loss: f64,
    pub val_velocity_loss: f64,
    pub wall_time: f64,
    /// Largest global gradient norm applied during the epoch.
    #[serde(default)]
    pub max_applied_norm: f64,
}

pub struct PoseTrainer {
    pub net: PoseNetwork,
    pub adam: Adam,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

const VALIDATION_STREAM: u64 = u64::MAX;

impl PoseTrainer {
    pub fn new(net: PoseNetwork, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(net.params.values(), config.adam);
        Ok(Self {
            net,
            adam,
            config,
            epoch: 0,
            log: Vec::new(),
        })
    }

    fn episode_len(&self) -> usize {
        self.config.condition + self.config.predict
    }

    fn check_data(&self, data: &PoseDataset) -> Result<()> {
        if data.sequences.is_empty() {
            return Err(Error::input("empty dataset"));
        }
        if data.frame_dim() != self.net.config.frame_dim() {
            return Err(Error::shape(format!(
                "dataset frames of width {}, network expects {}",
                data.frame_dim(),
                self.net.config.frame_dim()
            )));
        }
        if data.skeleton.active_count() != self.net.config.joints {
            return Err(Error::SkeletonMismatch("dataset skeleton does not match the network".into()));
        }
        Ok(())
    }

    /// Runs one epoch; the random stream depends only on the seed and the
    /// epoch index, so resumed runs repeat uninterrupted ones exactly.
    pub fn train_epoch(&mut self, data: &PoseDataset, validation: Option<&PoseDataset>) -> Result<EpochLog> {
        self.check_data(data)?;
        let started = Instant::now();
        let cfg = self.config.clone();
        let epoch = self.epoch;
        let lr = cfg.schedule.lr(epoch);
        let p = if cfg.scheduled_sampling { cfg.schedule.teacher_prob(epoch) } else { 1.0 };
        let mut rng = derived(cfg.seed, epoch as u64);

        let lengths: Vec<usize> = data.sequences.iter().map(PoseSequence::len).collect();
        let sampler = EpisodeSampler::new(&lengths, self.episode_len())?;
        let count = cfg.epoch_episodes.unwrap_or(data.sequences.len()).max(1);
        let episodes: Vec<(usize, usize)> = (0..count)
            .map(|_| {
                let e = sampler.sample(&mut rng);
                (e.clip, e.start)
            })
            .collect();

        let mut total = 0.0;
        let mut batches = 0;
        let mut max_applied: f64 = 0.0;
        for chunk in episodes.chunks(cfg.batch_size) {
            let (gt, controls) = data.batch(chunk, self.episode_len())?;
            let mut step = || -> Result<(f64, f64)> {
                let mut tape = Tape::new();
                let vars = self.net.bind(&mut tape)?;
                let r = scheduled_sampling_rollout(
                    &mut tape,
                    &self.net,
                    &vars,
                    &data.skeleton,
                    &gt,
                    controls.as_ref(),
                    cfg.condition,
                    cfg.predict,
                    p,
                    &mut rng,
                    cfg.loss,
                    cfg.penalty,
                )?;
                let value = tape.scalar(r.loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss {value}")));
                }
                let grads = tape.backward(r.loss)?;
                let grads = self.net.params.collect_grads(&grads, &vars);
                let info = self.adam.step(self.net.params.values_mut(), grads, lr)?;
                Ok((value, info.applied_norm))
            };
            let (value, applied) = step().map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("{m} at epoch {epoch}, batch {batches}, episodes (clip, start) {chunk:?}"))
                }
                e => e,
            })?;
            total += value;
            batches += 1;
            max_applied = max_applied.max(applied);
        }

        let (val_position_loss, val_velocity_loss) = match validation {
            Some(v) => self.validate(v)?,
            None => (f64::NAN, f64::NAN),
        };
        self.epoch += 1;
        let row = EpochLog {
            epoch,
            lr,
            p,
            train_loss: total / batches as f64,
            val_position_loss,
            val_velocity_loss,
            wall_time: started.elapsed().as_secs_f64(),
            max_applied_norm: max_applied,
        };
        self.log.push(row.clone());
        Ok(row)
    }

    pub fn train(&mut self, data: &PoseDataset, validation: Option<&PoseDataset>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch(data, validation)?;
        }
        Ok(())
    }

    /// Mean position and velocity errors of open-loop predictions on
    /// deterministic validation episodes, with the root at the origin.
    pub fn validate(&self, data: &PoseDataset) -> Result<(f64, f64)> {
        self.check_data(data)?;
        let (n, k) = (self.config.condition, self.config.predict);
        let lengths: Vec<usize> = data.sequences.iter().map(PoseSequence::len).collect();
        let sampler = EpisodeSampler::new(&lengths, n + k)?;
        let mut rng = derived(self.config.seed, VALIDATION_STREAM);
        let episodes: Vec<(usize, usize)> = (0..self.config.validation_episodes.max(1))
            .map(|_| {
                let e = sampler.sample(&mut rng);
                (e.clip, e.start)
            })
            .collect();
        let (gt, controls) = data.batch(&episodes, n + k)?;
        let d = data.frame_dim();
        let b = episodes.len();
        let mut context = Vec::with_capacity(b * n * d);
        for bi in 0..b {
            context.extend_from_slice(&gt.data()[bi * (n + k) * d..(bi * (n + k) + n) * d]);
        }
        let context = Tensor::new(vec![b, n, d], context)?;
        let pred = self.net.predict(&context, controls.as_ref(), k)?;

        let qd = self.net.config.quat_dim();
        let skel = &data.skeleton;
        let positions = |rows: &[f64]| -> Result<Vec<JointPositions>> {
            rows.chunks(d)
                .map(|f| {
                    let active: Vec<UnitQuaternion> =
                        f[..qd].chunks(4).map(|q| UnitQuaternion::new(q[0], q[1], q[2], q[3])).collect();
                    crate::kinematics::forward_kinematics_full(skel, [0.0; 3], &skel.expand(&active)?)
                })
                .collect()
        };
        let (mut pos, mut vel) = (0.0, 0.0);
        for bi in 0..b {
            let p = positions(&pred.data()[bi * k * d..(bi + 1) * k * d])?;
            let off = (bi * (n + k) + n) * d;
            let t = positions(&gt.data()[off..off + k * d])?;
            pos += position_error(&p, &t)?;
            vel += if k >= 2 { velocity_error(&p, &t)? } else { 0.0 };
        }
        Ok((pos / b as f64, vel / b as f64))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(
            "pose",
            json!({ "network": self.net.config, "training": self.config }),
        );
        ck.meta = json!({
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "log": self.log,
        });
        ck.push_params("param.", &self.net.params);
        for (i, name) in self.net.params.names().iter().enumerate() {
            ck.tensors.push((format!("adam.m.{name}"), self.adam.m[i].clone()));
            ck.tensors.push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("pose")?;
        let net_cfg: PoseNetworkConfig = serde_json::from_value(ck.config["network"].clone())?;
        let train_cfg: TrainConfig = serde_json::from_value(ck.config["training"].clone())?;
        let net = PoseNetwork::from_params(net_cfg, &ck.params("param."))?;
        let mut trainer = Self::new(net, train_cfg)?;
        let m = ck.params("adam.m.");
        let v = ck.params("adam.v.");
        if m.len() == trainer.net.params.len() && v.len() == m.len() {
            trainer.adam.m = m.values().to_vec();
            trainer.adam.v = v.values().to_vec();
            trainer.adam.step = ck.meta["adam_step"].as_u64().unwrap_or(0);
        }
        trainer.epoch = ck.meta["epoch"].as_u64().unwrap_or(0) as usize;
        if let Some(log) = ck.meta.get("log") {
            trainer.log = serde_json::from_value(log.clone())?;
        }
        Ok(trainer)
    }
}

/// Loads just the network from a pose checkpoint.
pub fn load_pose_network(ck: &Checkpoint) -> Result<PoseNetwork> {
    ck.expect_kind("pose")?;
    let cfg: PoseNetworkConfig = serde_json::from_value(ck.config["network"].clone())?;
    PoseNetwork::from_params(cfg, &ck.params("param."))
}
