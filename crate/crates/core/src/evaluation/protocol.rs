//! Short-term prediction protocol: seeded chunk sampling and Euler-angle
//! error at fixed horizons.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::rng::{derived, seeded, uniform_index};
use crate::rotmath::{quat_to_euler, EulerOrder};

use super::baselines::{Frame, Predictor};
use super::bootstrap::{bootstrap_ci, mean, BootstrapConfig};
use super::h36m::legacy_euler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Chunks drawn per clip.
    pub samples: usize,
    pub seed: u64,
    /// Conditioning frames.
    pub condition: usize,
    pub horizons_ms: Vec<f64>,
    pub frame_rate: f64,
    pub euler_order: EulerOrder,
    /// Wrap angle differences to `[−π, π)` before measuring.
    pub wrap_angles: bool,
    /// Bootstrap resamples for the report intervals; 0 disables them.
    pub bootstrap_resamples: usize,
    /// Measure like the original Human3.6M benchmark code: its
    /// matrix-to-Euler convention, no wrapping, and only angle dimensions
    /// whose ground truth varies over the predicted window.
    #[serde(default)]
    pub legacy_h36m: bool,
}

impl EvalProtocol {
    /// Four chunks per clip.
    pub fn standard(seed: u64) -> Self {
        Self {
            samples: 4,
            seed,
            condition: 50,
            horizons_ms: vec![80.0, 160.0, 320.0, 400.0],
            frame_rate: 25.0,
            euler_order: EulerOrder::Xyz,
            wrap_angles: true,
            bootstrap_resamples: 1000,
            legacy_h36m: false,
        }
    }

    /// Settings matching the published Human3.6M numbers.
    pub fn h36m_legacy(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            wrap_angles: false,
            legacy_h36m: true,
            ..Self::standard(seed)
        }
    }

    /// 128 chunks per clip.
    pub fn dense(seed: u64) -> Self {
        Self {
            samples: 128,
            ..Self::standard(seed)
        }
    }

    /// Index of the predicted frame for a horizon: `round(h · fr / 1000) − 1`.
    pub fn horizon_index(&self, ms: f64) -> Result<usize> {
        let f = (ms * self.frame_rate / 1000.0).round();
        if f < 1.0 {
            return Err(Error::Config(format!("horizon {ms} ms is shorter than one frame")));
        }
        Ok(f as usize - 1)
    }

    pub fn max_steps(&self) -> Result<usize> {
        self.horizons_ms
            .iter()
            .map(|&h| self.horizon_index(h).map(|i| i + 1))
            .try_fold(0, |a, b| b.map(|b| a.max(b)))
    }

    /// Chunk starts for clips of the given lengths, in clip order from a
    /// single stream. Clips too short for `condition + max_steps` get none.
    pub fn chunk_starts(&self, lengths: &[usize]) -> Result<Vec<Vec<usize>>> {
        let need = self.condition + self.max_steps()?;
        let mut rng = seeded(self.seed);
        Ok(lengths
            .iter()
            .map(|&len| {
                if len < need {
                    Vec::new()
                } else {
                    (0..self.samples).map(|_| uniform_index(&mut rng, len - need + 1)).collect()
                }
            })
            .collect())
    }
}

/// A labelled test sequence of active-joint rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalClip {
    pub action: String,
    pub frames: Vec<Frame>,
}

impl EvalClip {
    pub fn from_clip(clip: &MotionClip) -> Self {
        Self {
            action: clip.action.clone(),
            frames: clip.active_rotations(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub action: String,
    pub horizon_ms: f64,
    pub mean_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub protocol: EvalProtocol,
    pub rows: Vec<ReportRow>,
    /// Per-sample errors behind every row, same order.
    pub sample_errors: Vec<Vec<f64>>,
    /// Clips too short for the protocol.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn row(&self, action: &str, horizon_ms: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.action == action && r.horizon_ms == horizon_ms)
    }

    /// Mean over all sample errors at a horizon, across actions.
    pub fn overall(&self, horizon_ms: f64) -> Option<f64> {
        let all: Vec<f64> = self
            .rows
            .iter()
            .zip(&self.sample_errors)
            .filter(|(r, _)| r.horizon_ms == horizon_ms)
            .flat_map(|(_, e)| e.iter().copied())
            .collect();
        (!all.is_empty()).then(|| mean(&all))
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{}: {} samples per clip\n", self.predictor, self.protocol.samples);
        let mut actions: Vec<&str> = self.rows.iter().map(|r| r.action.as_str()).collect();
        actions.dedup();
        out.push_str(&format!("{:<20}", "action"));
        for h in &self.protocol.horizons_ms {
            out.push_str(&format!("{:>10}", format!("{h} ms")));
        }
        out.push('\n');
        for a in actions {
            out.push_str(&format!("{a:<20}"));
            for h in &self.protocol.horizons_ms {
                match self.row(a, *h) {
                    Some(r) => out.push_str(&format!("{:>10.3}", r.mean_error)),
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            out.push('\n');
        }
        if !self.skipped.is_empty() {
            out.push_str(&format!("skipped {} short clips\n", self.skipped.len()));
        }
        out
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Euler angles of every joint except the first (the root).
pub fn euler_features(frame: &Frame, order: EulerOrder) -> Vec<f64> {
    frame[1..]
        .iter()
        .flat_map(|q| quat_to_euler(*q, order).euler.angles)
        .collect()
}

/// Euclidean distance between Euler-angle vectors of two frames, root
/// excluded.
pub fn frame_error(pred: &Frame, truth: &Frame, order: EulerOrder, wrap_angles: bool) -> f64 {
    euler_features(pred, order)
        .iter()
        .zip(euler_features(truth, order))
        .map(|(p, t)| {
            let d = if wrap_angles { wrap(p - t) } else { p - t };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn sample_errors_at(pred: &[Frame], truth: &[Frame], horizons: &[usize], protocol: &EvalProtocol) -> Vec<f64> {
    if !protocol.legacy_h36m {
        return horizons
            .iter()
            .map(|&i| frame_error(&pred[i], &truth[i], protocol.euler_order, protocol.wrap_angles))
            .collect();
    }
    let feats = |f: &Frame| -> Vec<f64> { f[1..].iter().flat_map(|q| legacy_euler(*q)).collect() };
    let gt: Vec<Vec<f64>> = truth.iter().map(feats).collect();
    let dims = gt[0].len();
    let n = gt.len() as f64;
    let used: Vec<usize> = (0..dims)
        .filter(|&d| {
            let m = gt.iter().map(|r| r[d]).sum::<f64>() / n;
            (gt.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / n).sqrt() > 1e-4
        })
        .collect();
    horizons
        .iter()
        .map(|&i| {
            let p = feats(&pred[i]);
            used.iter()
                .map(|&d| {
                    let x = if protocol.wrap_angles { wrap(p[d] - gt[i][d]) } else { p[d] - gt[i][d] };
                    x * x
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn run_protocol(predictor: &dyn Predictor, clips: &[EvalClip], protocol: &EvalProtocol) -> Result<EvalReport> {
    if protocol.samples == 0 || protocol.condition == 0 || protocol.horizons_ms.is_empty() {
        return Err(Error::Config("protocol needs samples, conditioning and horizons".into()));
    }
    let steps = protocol.max_steps()?;
    let horizon_idx: Vec<usize> = protocol
        .horizons_ms
        .iter()
        .map(|&h| protocol.horizon_index(h))
        .collect::<Result<_>>()?;
    let lengths: Vec<usize> = clips.iter().map(|c| c.frames.len()).collect();
    let starts = protocol.chunk_starts(&lengths)?;

    // action -> per-horizon errors, actions in first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut errors: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for (clip, st) in clips.iter().zip(&starts) {
        if st.is_empty() {
            skipped.push(clip.action.clone());
            continue;
        }
        let contexts: Vec<&[Frame]> = st.iter().map(|&s| &clip.frames[s..s + protocol.condition]).collect();
        let preds = predictor.predict_batch(&contexts, steps)?;
        if !errors.contains_key(&clip.action) {
            order.push(clip.action.clone());
        }
        let e = errors
            .entry(clip.action.clone())
            .or_insert_with(|| vec![Vec::new(); horizon_idx.len()]);
        for (&s, pred) in st.iter().zip(&preds) {
            let truth = &clip.frames[s + protocol.condition..s + protocol.condition + steps];
            for (hi, err) in sample_errors_at(pred, truth, &horizon_idx, protocol).into_iter().enumerate() {
                e[hi].push(err);
            }
        }
    }

    let mut rows = Vec::new();
    let mut sample_errors = Vec::new();
    let boot = BootstrapConfig {
        resamples: protocol.bootstrap_resamples,
        ..BootstrapConfig::default()
    };
    for (ai, action) in order.iter().enumerate() {
        for (hi, &h) in protocol.horizons_ms.iter().enumerate() {
            let e = errors[action][hi].clone();
            let m = mean(&e);
            let (lo, hi_ci) = if protocol.bootstrap_resamples > 0 && e.len() >= 2 {
                let mut rng = derived(protocol.seed, 1 + (((ai as u64) << 16) | hi as u64));
                bootstrap_ci(&e, &boot, &mut rng)?
            } else {
                (m, m)
            };
            rows.push(ReportRow {
                action: action.clone(),
                horizon_ms: h,
                mean_error: m,
                ci_low: lo,
                ci_high: hi_ci,
                n_samples: e.len(),
            });
            sample_errors.push(e);
        }
    }
    Ok(EvalReport {
        predictor: predictor.name(),
        protocol: protocol.clone(),
        rows,
        sample_errors,
        skipped,
    })
}
