//! Pace-network training on per-segment gait features.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::models::{Checkpoint, PaceNetwork, PaceNetworkConfig, PaceSample};
use crate::rng::{derived, uniform_index};

use super::adam::{Adam, AdamConfig};
use super::losses::mae;
use super::schedule::Schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaceTrainConfig {
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PaceTrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            epochs: 200,
            seed: 0,
        }
    }
}

/// Minimizes the mean absolute error over all outputs. Each epoch visits as
/// many samples as there are, drawn with replacement, one step per sample.
/// Returns the mean loss of every epoch.
pub fn train_pace(net: &mut PaceNetwork, samples: &[PaceSample], cfg: &PaceTrainConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::input("no pace samples"));
    }
    let mut adam = Adam::new(net.params.values(), cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = derived(cfg.seed, epoch as u64);
        let lr = cfg.schedule.lr(epoch);
        let mut total = 0.0;
        for _ in 0..samples.len() {
            let s = &samples[uniform_index(&mut rng, samples.len())];
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape)?;
            let x = tape.constant(s.inputs.clone())?;
            let y = net.forward_tape(&mut tape, &vars, x)?;
            let t = tape.constant(s.targets.clone())?;
            let loss = mae(&mut tape, y, t)?;
            total += tape.scalar(loss);
            let grads = tape.backward(loss)?;
            let grads = net.params.collect_grads(&grads, &vars);
            adam.step(net.params.values_mut(), grads, lr)?;
        }
        history.push(total / samples.len() as f64);
    }
    Ok(history)
}

pub fn pace_checkpoint(net: &PaceNetwork, history: &[f64]) -> Checkpoint {
    let mut ck = Checkpoint::new("pace", json!({ "network": net.config }));
    ck.meta = json!({ "loss": history });
    ck.push_params("param.", &net.params);
    ck
}

pub fn load_pace_network(ck: &Checkpoint) -> Result<PaceNetwork> {
    ck.expect_kind("pace")?;
    let cfg: PaceNetworkConfig = serde_json::from_value(ck.config["network"].clone())?;
    PaceNetwork::from_params(cfg, &ck.params("param."))
}
