//! Autoregressive pose network with a recurrent or convolutional backbone.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

use super::encoder::{ControlEncoder, CONTROL_DIM, ENCODED_DIM};
use super::layers::{init_uniform, Conv1dLayer, GruLayer, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The head emits rotations directly.
    Absolute,
    /// The head emits a rotation that is multiplied onto the previous pose.
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Recurrent,
    Convolutional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNetworkConfig {
    /// Number of rotations predicted per frame (active joints).
    pub joints: usize,
    pub mode: Mode,
    pub backbone: Backbone,
    /// GRU units per layer.
    pub hidden: usize,
    /// GRU layers or convolution layers, depending on the backbone.
    pub layers: usize,
    pub channels: usize,
    pub width: usize,
    pub include_controls: bool,
    pub include_translations: bool,
}

impl PoseNetworkConfig {
    pub fn full(joints: usize, backbone: Backbone) -> Self {
        Self {
            joints,
            mode: Mode::Velocity,
            backbone,
            hidden: 1000,
            layers: match backbone {
                Backbone::Recurrent => 2,
                Backbone::Convolutional => 5,
            },
            channels: 1024,
            width: 2,
            include_controls: false,
            include_translations: false,
        }
    }

    pub fn desk(joints: usize, backbone: Backbone) -> Self {
        Self {
            hidden: 64,
            channels: 64,
            ..Self::full(joints, backbone)
        }
    }

    pub fn quat_dim(&self) -> usize {
        4 * self.joints
    }

    /// Width of a pose frame: quaternions, then translations if enabled.
    pub fn frame_dim(&self) -> usize {
        self.quat_dim() + if self.include_translations { 2 } else { 0 }
    }

    /// Width of the backbone input.
    pub fn input_dim(&self) -> usize {
        self.frame_dim() + if self.include_controls { ENCODED_DIM } else { 0 }
    }

    /// Frames seen by one convolutional output: `width^layers`.
    pub fn receptive_field(&self) -> usize {
        self.width.pow(self.layers as u32)
    }

    fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.layers == 0 {
            return Err(Error::Config("pose network needs joints and layers".into()));
        }
        match self.backbone {
            Backbone::Recurrent if self.hidden == 0 => {
                Err(Error::Config("recurrent backbone needs hidden units".into()))
            }
            Backbone::Convolutional if self.channels == 0 || self.width < 2 => {
                Err(Error::Config("convolutional backbone needs channels and width ≥ 2".into()))
            }
            _ => Ok(()),
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let out = self.frame_dim();
        let enc = if self.include_controls { ControlEncoder::param_count() } else { 0 };
        match self.backbone {
            Backbone::Recurrent => {
                let h = self.hidden;
                let gru: usize = (0..self.layers)
                    .map(|l| GruLayer::param_count(if l == 0 { self.input_dim() } else { h }, h))
                    .sum();
                gru + h * out + out + enc
            }
            Backbone::Convolutional => {
                let c = self.channels;
                let w = self.width;
                (0..self.layers)
                    .map(|l| {
                        let i = if l == 0 { self.input_dim() } else { c };
                        let o = if l + 1 == self.layers { out } else { c };
                        w * i * o + o
                    })
                    .sum::<usize>()
                    + enc
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Layout {
    Recurrent { grus: Vec<GruLayer>, head: Linear },
    Convolutional { convs: Vec<Conv1dLayer> },
}

/// Output of one recurrent step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Head output for the quaternions before any product or normalization.
    pub raw: Var,
    /// Next frame: unit quaternions followed by translations if enabled.
    pub frame: Var,
    pub state: Vec<Var>,
}

/// Outputs of a convolutional pass, one per valid window position.
#[derive(Clone, Debug)]
pub struct ConvOutput {
    pub raw: Var,
    pub frames: Var,
}

#[derive(Clone, Debug)]
pub struct PoseNetwork {
    pub config: PoseNetworkConfig,
    pub params: ParamStore,
    encoder: Option<ControlEncoder>,
    layout: Layout,
}

impl PoseNetwork {
    pub fn new(config: PoseNetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let encoder = config
            .include_controls
            .then(|| ControlEncoder::new(&mut store, "encoder", &mut rng));
        let layout = match config.backbone {
            Backbone::Recurrent => build_recurrent(&config, &mut store, &mut rng),
            Backbone::Convolutional => build_convolutional(&config, &mut store, &mut rng),
        };
        Ok(Self {
            config,
            params: store,
            encoder,
            layout,
        })
    }

    /// Rebuilds a network and loads `params` into it.
    pub fn from_params(config: PoseNetworkConfig, params: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.load_from(params)?;
        Ok(net)
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.bind(tape)
    }

    /// Slot of the quaternion part of the output bias.
    pub fn head_bias_slot(&self) -> usize {
        match &self.layout {
            Layout::Recurrent { head, .. } => head.b,
            Layout::Convolutional { convs } => convs.last().expect("at least one layer").b,
        }
    }

    /// Slot of the output weight matrix.
    pub fn head_weight_slot(&self) -> usize {
        match &self.layout {
            Layout::Recurrent { head, .. } => head.w,
            Layout::Convolutional { convs } => convs.last().expect("at least one layer").w,
        }
    }

    fn check_width(&self, tape: &Tape, v: Var, want: usize, what: &str) -> Result<()> {
        let got = tape.value(v).last_dim();
        if got != want {
            return Err(Error::shape(format!("{what}: last axis {got}, expected {want}")));
        }
        Ok(())
    }

    fn backbone_input(&self, tape: &mut Tape, vars: &[Var], prev: Var, controls: Option<Var>) -> Result<Var> {
        self.check_width(tape, prev, self.config.frame_dim(), "pose frame")?;
        match (&self.encoder, controls) {
            (Some(enc), Some(c)) => {
                self.check_width(tape, c, CONTROL_DIM, "controls")?;
                let e = enc.forward(tape, vars, c)?;
                tape.concat(&[prev, e])
            }
            (None, None) => Ok(prev),
            (Some(_), None) => Err(Error::Config("network expects controls".into())),
            (None, Some(_)) => Err(Error::Config("network was built without controls".into())),
        }
    }

    /// Turns head outputs into frames. `prev_quats` are the quaternions the
    /// velocity head is applied to.
    fn finish(&self, tape: &mut Tape, out: Var, prev_quats: Var) -> Result<(Var, Var)> {
        let qd = self.config.quat_dim();
        let raw = tape.slice(out, 0, qd)?;
        let q = match self.config.mode {
            Mode::Absolute => raw,
            Mode::Velocity => tape.qmul(raw, prev_quats)?,
        };
        let q = tape.normalize_quats(q)?;
        let frame = if self.config.include_translations {
            let tr = tape.slice(out, qd, 2)?;
            tape.concat(&[q, tr])?
        } else {
            q
        };
        Ok((raw, frame))
    }

    /// Learned initial recurrent state for `batch` sequences.
    pub fn initial_state(&self, tape: &mut Tape, vars: &[Var], batch: usize) -> Result<Vec<Var>> {
        match &self.layout {
            Layout::Recurrent { grus, .. } => grus.iter().map(|g| g.initial(tape, vars, batch)).collect(),
            Layout::Convolutional { .. } => Err(Error::Config("convolutional network has no recurrent state".into())),
        }
    }

    /// One recurrent step from the previous frame `[B, frame_dim]` and
    /// optional controls `[B, 6]` for the frame being predicted.
    pub fn step(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        state: &[Var],
        prev: Var,
        controls: Option<Var>,
    ) -> Result<StepOutput> {
        let Layout::Recurrent { grus, head } = &self.layout else {
            return Err(Error::Config("step needs the recurrent backbone".into()));
        };
        if state.len() != grus.len() {
            return Err(Error::shape(format!("{} state vectors for {} layers", state.len(), grus.len())));
        }
        if !tape.value(prev).is_finite() || state.iter().any(|&s| !tape.value(s).is_finite()) {
            return Err(Error::NonFinite("recurrent input or state".into()));
        }
        let mut x = self.backbone_input(tape, vars, prev, controls)?;
        let mut next = Vec::with_capacity(grus.len());
        for (g, &h) in grus.iter().zip(state) {
            x = g.step(tape, vars, x, h)?;
            next.push(x);
        }
        let out = head.forward(tape, vars, x)?;
        let prev_q = tape.slice(prev, 0, self.config.quat_dim())?;
        let (raw, frame) = self.finish(tape, out, prev_q)?;
        Ok(StepOutput { raw, frame, state: next })
    }

    /// Runs the convolutional stack over `[B, T, frame_dim]` frames (and
    /// `[B, T, 6]` controls). Output position `p` predicts the frame after
    /// input frame `p + receptive_field − 1` and is `[B, T − rf + 1, ·]`.
    pub fn conv_forward(&self, tape: &mut Tape, vars: &[Var], frames: Var, controls: Option<Var>) -> Result<ConvOutput> {
        let Layout::Convolutional { convs } = &self.layout else {
            return Err(Error::Config("conv_forward needs the convolutional backbone".into()));
        };
        let rf = self.config.receptive_field();
        let t = match tape.value(frames).shape() {
            &[_, t, _] => t,
            s => return Err(Error::shape(format!("conv input must be [B,T,C], got {s:?}"))),
        };
        if t < rf {
            return Err(Error::shape(format!("window of {t} frames is shorter than the receptive field {rf}")));
        }
        let x = self.backbone_input(tape, vars, frames, controls)?;
        let mut hs: Vec<Var> = Vec::with_capacity(convs.len());
        let mut h = x;
        for (k, conv) in convs.iter().enumerate() {
            h = conv.forward(tape, vars, h)?;
            if k + 1 < convs.len() {
                h = tape.leaky_relu(h, 0.0)?;
                if k >= 2 {
                    let skip = hs[k - 2];
                    let (ls, lh) = (tape.value(skip).shape()[1], tape.value(h).shape()[1]);
                    let skip = tape.time_slice(skip, ls - lh, lh)?;
                    h = tape.add(h, skip)?;
                }
            }
            hs.push(h);
        }
        let out_len = t - rf + 1;
        let last = tape.time_slice(frames, rf - 1, out_len)?;
        let prev_q = tape.slice(last, 0, self.config.quat_dim())?;
        let (raw, frames) = self.finish(tape, h, prev_q)?;
        Ok(ConvOutput { raw, frames })
    }

    /// Predicts `k` frames after `context` (`[B, n, frame_dim]`). `controls`,
    /// when the network uses them, is `[B, n + k, 6]` with row `t` describing
    /// frame `t`.
    pub fn predict(&self, context: &Tensor, controls: Option<&Tensor>, k: usize) -> Result<Tensor> {
        let &[b, n, d] = context.shape() else {
            return Err(Error::shape(format!("context must be [B,n,D], got {:?}", context.shape())));
        };
        if d != self.config.frame_dim() || n == 0 {
            return Err(Error::shape(format!("context frames of width {d}, expected {}", self.config.frame_dim())));
        }
        if let Some(c) = controls {
            if c.shape() != [b, n + k, CONTROL_DIM] {
                return Err(Error::shape(format!("controls {:?}, expected [{b},{},6]", c.shape(), n + k)));
            }
        }
        let row = |t: &Tensor, i: usize, len: usize, w: usize| -> Tensor {
            let mut rows = Vec::with_capacity(b * w);
            for bi in 0..b {
                let off = (bi * len + i) * w;
                rows.extend_from_slice(&t.data()[off..off + w]);
            }
            Tensor::new(vec![b, w], rows).expect("row shape")
        };
        let mut stepper = Stepper::new(self);
        let mut next = None;
        for t in 0..n {
            next = stepper.push(row(context, t, n, d), controls.map(|c| row(c, t + 1, n + k, CONTROL_DIM)))?;
        }
        let mut out: Vec<Tensor> = Vec::with_capacity(k);
        for t in n..n + k {
            let frame = next.take().ok_or_else(|| {
                Error::shape(format!(
                    "context of {n} frames is shorter than the receptive field {}",
                    self.config.receptive_field()
                ))
            })?;
            out.push(frame.clone());
            if t + 1 < n + k {
                next = stepper.push(frame, controls.map(|c| row(c, t + 1, n + k, CONTROL_DIM)))?;
            }
        }
        let mut data = Vec::with_capacity(b * k * d);
        for bi in 0..b {
            for f in &out {
                data.extend_from_slice(&f.data()[bi * d..(bi + 1) * d]);
            }
        }
        Tensor::new(vec![b, k, d], data)
    }
}

/// Frame-by-frame inference. Each [`Stepper::push`] consumes frame `t`
/// (`[B, frame_dim]`) with the controls of frame `t + 1` and returns the
/// predicted frame `t + 1` once enough history is available.
pub struct Stepper<'a> {
    net: &'a PoseNetwork,
    state: Option<Vec<Tensor>>,
    window: std::collections::VecDeque<(Tensor, Option<Tensor>)>,
}

impl<'a> Stepper<'a> {
    pub fn new(net: &'a PoseNetwork) -> Self {
        Self {
            net,
            state: None,
            window: Default::default(),
        }
    }

    pub fn push(&mut self, frame: Tensor, controls: Option<Tensor>) -> Result<Option<Tensor>> {
        let net = self.net;
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape)?;
        match net.config.backbone {
            Backbone::Recurrent => {
                let b = frame.outer();
                let st = match &self.state {
                    None => net.initial_state(&mut tape, &vars, b)?,
                    Some(s) => s.iter().map(|s| tape.constant(s.clone())).collect::<Result<_>>()?,
                };
                let prev = tape.constant(frame)?;
                let c = controls.map(|c| tape.constant(c)).transpose()?;
                let out = net.step(&mut tape, &vars, &st, prev, c)?;
                self.state = Some(out.state.iter().map(|&s| tape.value(s).clone()).collect());
                Ok(Some(tape.value(out.frame).clone()))
            }
            Backbone::Convolutional => {
                let rf = net.config.receptive_field();
                self.window.push_back((frame, controls));
                if self.window.len() > rf {
                    self.window.pop_front();
                }
                if self.window.len() < rf {
                    return Ok(None);
                }
                let stack = |parts: Vec<&Tensor>| -> Result<Tensor> {
                    let (b, w) = (parts[0].outer(), parts[0].last_dim());
                    let mut data = Vec::with_capacity(b * rf * w);
                    for bi in 0..b {
                        for p in &parts {
                            data.extend_from_slice(&p.data()[bi * w..(bi + 1) * w]);
                        }
                    }
                    Tensor::new(vec![b, rf, w], data)
                };
                let b = self.window[0].0.outer();
                let win = stack(self.window.iter().map(|w| &w.0).collect())?;
                let win = tape.constant(win)?;
                let c = if self.window.iter().all(|w| w.1.is_some()) {
                    let c = stack(self.window.iter().map(|w| w.1.as_ref().expect("checked")).collect())?;
                    Some(tape.constant(c)?)
                } else {
                    None
                };
                let out = net.conv_forward(&mut tape, &vars, win, c)?;
                let d = net.config.frame_dim();
                Ok(Some(tape.value(out.frames).clone().reshaped(vec![b, d])?))
            }
        }
    }
}

fn small_head_init(store: &mut ParamStore, slot_w: usize, slot_b: usize, quat_dim: usize, rng: &mut Rng) {
    let shape = store.get(slot_w).shape().to_vec();
    let bound = 0.1 / (shape[0] as f64).sqrt();
    *store.get_mut(slot_w) = init_uniform(rng, &shape, bound);
    let b = store.get_mut(slot_b);
    b.data_mut().iter_mut().for_each(|v| *v = 0.0);
    for q in b.data_mut()[..quat_dim].chunks_mut(4) {
        q[0] = 1.0;
    }
}

fn build_recurrent(config: &PoseNetworkConfig, store: &mut ParamStore, rng: &mut Rng) -> Layout {
    let grus: Vec<GruLayer> = (0..config.layers)
        .map(|l| {
            let input = if l == 0 { config.input_dim() } else { config.hidden };
            GruLayer::new(store, &format!("gru{l}"), input, config.hidden, rng)
        })
        .collect();
    let head = Linear::new(store, "head", config.hidden, config.frame_dim(), rng);
    small_head_init(store, head.w, head.b, config.quat_dim(), rng);
    Layout::Recurrent { grus, head }
}

fn build_convolutional(config: &PoseNetworkConfig, store: &mut ParamStore, rng: &mut Rng) -> Layout {
    let convs: Vec<Conv1dLayer> = (0..config.layers)
        .map(|l| {
            let input = if l == 0 { config.input_dim() } else { config.channels };
            let output = if l + 1 == config.layers { config.frame_dim() } else { config.channels };
            let dilation = config.width.pow(l as u32);
            Conv1dLayer::new(store, &format!("conv{l}"), input, output, config.width, dilation, rng)
        })
        .collect();
    let last = convs.last().expect("validated layer count");
    small_head_init(store, last.w, last.b, config.quat_dim(), rng);
    Layout::Convolutional { convs }
}
