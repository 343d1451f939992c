//! Constant-pose baselines and the predictor interface used by the protocol.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::PoseNetwork;
use crate::rotmath::{normalize, UnitQuaternion};

/// Active-joint rotations of one frame.
pub type Frame = Vec<UnitQuaternion>;

/// Anything that continues a sequence of frames.
pub trait Predictor {
    fn name(&self) -> String;

    fn predict(&self, context: &[Frame], steps: usize) -> Result<Vec<Frame>>;

    fn predict_batch(&self, contexts: &[&[Frame]], steps: usize) -> Result<Vec<Vec<Frame>>> {
        contexts.iter().map(|c| self.predict(c, steps)).collect()
    }
}

/// Repeats the last known frame.
pub fn baseline_zero_velocity(prefix: &[Frame], steps: usize) -> Result<Vec<Frame>> {
    let last = prefix.last().ok_or_else(|| Error::input("empty prefix"))?;
    Ok(vec![last.clone(); steps])
}

/// Repeats the mean of the last `window` frames: signs aligned to the last
/// frame, arithmetic mean, normalized.
pub fn baseline_running_average(prefix: &[Frame], window: usize, steps: usize) -> Result<Vec<Frame>> {
    if window == 0 || prefix.len() < window {
        return Err(Error::input(format!(
            "running average over {window} frames needs at least that many, got {}",
            prefix.len()
        )));
    }
    let tail = &prefix[prefix.len() - window..];
    let last = &tail[window - 1];
    let mean = (0..last.len())
        .map(|j| {
            let mut acc = [0.0; 4];
            for f in tail {
                let q = f[j];
                let s = if q.dot(last[j]) < 0.0 { -1.0 } else { 1.0 };
                for (a, v) in acc.iter_mut().zip(q.to_array()) {
                    *a += s * v;
                }
            }
            normalize(acc)
        })
        .collect::<Result<Frame>>()?;
    Ok(vec![mean; steps])
}

pub struct ZeroVelocity;

impl Predictor for ZeroVelocity {
    fn name(&self) -> String {
        "zero-velocity".into()
    }

    fn predict(&self, context: &[Frame], steps: usize) -> Result<Vec<Frame>> {
        baseline_zero_velocity(context, steps)
    }
}

pub struct RunningAverage(pub usize);

impl Predictor for RunningAverage {
    fn name(&self) -> String {
        format!("running-average-{}", self.0)
    }

    fn predict(&self, context: &[Frame], steps: usize) -> Result<Vec<Frame>> {
        baseline_running_average(context, self.0, steps)
    }
}

/// A quaternion-only pose network (no controls or translations).
pub struct NetworkPredictor<'a>(pub &'a PoseNetwork);

impl Predictor for NetworkPredictor<'_> {
    fn name(&self) -> String {
        format!("{:?}-{:?}", self.0.config.backbone, self.0.config.mode).to_lowercase()
    }

    fn predict(&self, context: &[Frame], steps: usize) -> Result<Vec<Frame>> {
        Ok(self.predict_batch(&[context], steps)?.remove(0))
    }

    fn predict_batch(&self, contexts: &[&[Frame]], steps: usize) -> Result<Vec<Vec<Frame>>> {
        let cfg = &self.0.config;
        if cfg.include_controls || cfg.include_translations {
            return Err(Error::Config("protocol evaluation needs a rotation-only network".into()));
        }
        let n = contexts.first().map_or(0, |c| c.len());
        if contexts.iter().any(|c| c.len() != n || c.iter().any(|f| f.len() != cfg.joints)) {
            return Err(Error::shape("contexts must share length and joint count"));
        }
        let d = cfg.frame_dim();
        let data: Vec<f64> = contexts
            .iter()
            .flat_map(|c| c.iter().flat_map(|f| f.iter().flat_map(|q| q.to_array())))
            .collect();
        let ctx = Tensor::new(vec![contexts.len(), n, d], data)?;
        let out = self.0.predict(&ctx, None, steps)?;
        Ok(out
            .data()
            .chunks(steps * d)
            .map(|seq| {
                seq.chunks(d)
                    .map(|f| f.chunks(4).map(|q| UnitQuaternion::new(q[0], q[1], q[2], q[3])).collect())
                    .collect()
            })
            .collect())
    }
}
