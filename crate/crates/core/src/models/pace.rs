//! Pace network: per-segment facing, footstep frequency and local speed
//! from the curvature of a trajectory.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::motiondata::{GaitFeatures, TrajectorySpline, Vec2};
use crate::rng::seeded;

use super::layers::{GruLayer, Linear};

/// Per-segment inputs: curvature and the requested average speed.
pub const PACE_INPUT_DIM: usize = 2;
/// Per-segment outputs: relative facing (2), frequency, speed.
pub const PACE_OUTPUT_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PaceVariant {
    /// Runs over the whole spline in both directions.
    Bidirectional,
    /// Causal, with outputs lagging the inputs by `delay` segments.
    Delayed { delay: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaceNetworkConfig {
    pub hidden: usize,
    pub variant: PaceVariant,
}

impl Default for PaceNetworkConfig {
    fn default() -> Self {
        Self {
            hidden: 30,
            variant: PaceVariant::Bidirectional,
        }
    }
}

impl PaceNetworkConfig {
    pub fn online(delay: usize) -> Self {
        Self {
            variant: PaceVariant::Delayed { delay },
            ..Self::default()
        }
    }
}

/// Per-segment pace prediction. Facing is relative to the segment tangent:
/// `[cos φ, sin φ]` with `φ` the signed angle from tangent to facing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaceOutput {
    pub facing: Vec<Vec2>,
    pub frequency: Vec<f64>,
    pub speed: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PaceNetwork {
    pub config: PaceNetworkConfig,
    pub params: ParamStore,
    forward: GruLayer,
    backward: Option<GruLayer>,
    head: Linear,
}

impl PaceNetwork {
    pub fn new(config: PaceNetworkConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("pace network needs hidden units".into()));
        }
        let mut rng = seeded(seed);
        let mut params = ParamStore::new();
        let h = config.hidden;
        let forward = GruLayer::new(&mut params, "pace.fwd", PACE_INPUT_DIM, h, &mut rng);
        let backward = matches!(config.variant, PaceVariant::Bidirectional)
            .then(|| GruLayer::new(&mut params, "pace.bwd", PACE_INPUT_DIM, h, &mut rng));
        let head_in = if backward.is_some() { 2 * h } else { h };
        let head = Linear::new(&mut params, "pace.head", head_in, PACE_OUTPUT_DIM, &mut rng);
        Ok(Self {
            config,
            params,
            forward,
            backward,
            head,
        })
    }

    pub fn from_params(config: PaceNetworkConfig, params: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.load_from(params)?;
        Ok(net)
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.bind(tape)
    }

    /// Maps `[B, S, 2]` inputs to `[B, S, 4]` outputs with unit facing.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], inputs: Var) -> Result<Var> {
        let &[b, s, c] = tape.value(inputs).shape() else {
            return Err(Error::shape("pace inputs must be [B,S,2]"));
        };
        if c != PACE_INPUT_DIM || s == 0 {
            return Err(Error::shape(format!("pace inputs [{b},{s},{c}]")));
        }
        let xs: Vec<Var> = (0..s).map(|i| tape.select(inputs, i)).collect::<Result<_>>()?;
        let run = |tape: &mut Tape, layer: &GruLayer, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Var)>> {
            let mut h = layer.initial(tape, vars, b)?;
            let mut out = Vec::new();
            for i in order {
                h = layer.step(tape, vars, xs[i], h)?;
                out.push((i, h));
            }
            Ok(out)
        };
        let hidden: Vec<Var> = match (&self.config.variant, &self.backward) {
            (PaceVariant::Bidirectional, Some(bwd)) => {
                let f = run(tape, &self.forward, &mut (0..s))?;
                let mut r = run(tape, bwd, &mut (0..s).rev())?;
                r.reverse();
                f.iter().zip(&r).map(|(a, b)| tape.concat(&[a.1, b.1])).collect::<Result<_>>()?
            }
            (PaceVariant::Delayed { delay }, None) => {
                // Past the end the last segment is repeated.
                let f = run(tape, &self.forward, &mut (0..s + delay).map(|i| i.min(s - 1)))?;
                f[*delay..].iter().map(|x| x.1).collect()
            }
            _ => unreachable!("layout follows the variant"),
        };
        let outs: Vec<Var> = hidden
            .into_iter()
            .map(|h| self.head.forward(tape, vars, h))
            .collect::<Result<_>>()?;
        let y = tape.stack(&outs)?;
        let facing = tape.slice(y, 0, 2)?;
        let n = tape.l2norm(facing, 2)?;
        let n = tape.add_scalar(n, 1e-9)?;
        let n2 = tape.concat(&[n, n])?;
        let facing = tape.div(facing, n2)?;
        let rest = tape.slice(y, 2, 2)?;
        tape.concat(&[facing, rest])
    }

    pub fn predict(&self, spline: &TrajectorySpline, speed: f64) -> Result<PaceOutput> {
        if spline.segments() == 0 {
            return Err(Error::input("spline has no segments"));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let x = tape.constant(pace_inputs(spline, speed))?;
        let y = self.forward_tape(&mut tape, &vars, x)?;
        let d = tape.value(y).data();
        let rows = d.chunks(PACE_OUTPUT_DIM);
        Ok(PaceOutput {
            facing: rows.clone().map(|r| [r[0], r[1]]).collect(),
            frequency: rows.clone().map(|r| r[2]).collect(),
            speed: rows.map(|r| r[3]).collect(),
        })
    }
}

/// `[1, S, 2]` network input for a spline walked at average `speed`.
pub fn pace_inputs(spline: &TrajectorySpline, speed: f64) -> Tensor {
    let data = spline.curvature.iter().flat_map(|&k| [k, speed]).collect();
    Tensor::new(vec![1, spline.segments(), PACE_INPUT_DIM], data).expect("pace input shape")
}

/// Training pair for the pace network: network input and per-segment
/// targets `[cos φ, sin φ, frequency, speed]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaceSample {
    pub inputs: Tensor,
    pub targets: Tensor,
}

/// Averages gait features of the frames falling in each spline segment.
/// Segments without frames copy the nearest filled one.
pub fn pace_sample(spline: &TrajectorySpline, root_ground: &[Vec2], features: &GaitFeatures) -> Result<PaceSample> {
    let s = spline.segments();
    if s == 0 || root_ground.len() != features.len() {
        return Err(Error::input("pace sample needs segments and one root point per frame"));
    }
    let mut acc = vec![[0.0; 5]; s];
    for (t, p) in root_ground.iter().enumerate() {
        let seg = spline.segment_at(spline.project(*p));
        let tan = spline.tangents[seg];
        let f = features.facing[t];
        let a = &mut acc[seg];
        a[0] += tan[0] * f[0] + tan[1] * f[1];
        a[1] += tan[0] * f[1] - tan[1] * f[0];
        a[2] += features.frequency[t];
        a[3] += features.speed[t];
        a[4] += 1.0;
    }
    let filled: Vec<usize> = (0..s).filter(|&i| acc[i][4] > 0.0).collect();
    if filled.is_empty() {
        return Err(Error::input("no frames project onto the spline"));
    }
    let mut targets = Vec::with_capacity(s * PACE_OUTPUT_DIM);
    for i in 0..s {
        let src = *filled
            .iter()
            .min_by_key(|&&j| j.abs_diff(i))
            .expect("non-empty");
        let a = acc[src];
        let fl = a[0].hypot(a[1]).max(1e-12);
        targets.extend_from_slice(&[a[0] / fl, a[1] / fl, a[2] / a[4], a[3] / a[4]]);
    }
    let mean_speed = features.speed.iter().sum::<f64>() / features.len().max(1) as f64;
    Ok(PaceSample {
        inputs: pace_inputs(spline, mean_speed),
        targets: Tensor::new(vec![1, s, PACE_OUTPUT_DIM], targets)?,
    })
}
