//! Per-epoch learning-rate and scheduled-sampling decay.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr0: f64,
    pub lr_decay: f64,
    pub teacher_decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            lr_decay: 0.999,
            teacher_decay: 0.995,
        }
    }
}

impl Schedule {
    /// `lr0 · α^epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }

    /// Probability of feeding ground truth: `β^epoch`.
    pub fn teacher_prob(&self, epoch: usize) -> f64 {
        self.teacher_decay.powi(epoch as i32)
    }

    /// First epoch whose teacher probability is at most `p`.
    pub fn epochs_until_teacher_prob(&self, p: f64) -> usize {
        (p.ln() / self.teacher_decay.ln()).ceil() as usize
    }
}
