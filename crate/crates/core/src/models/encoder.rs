//! Control inputs for locomotion and their two-layer encoder.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::motiondata::Vec2;
use crate::rng::Rng;

use super::layers::Linear;

pub const CONTROL_DIM: usize = 6;
pub const ENCODED_DIM: usize = 30;
pub const LEAKY_SLOPE: f64 = 0.05;

/// Per-frame control signal: spline tangent, facing direction and gait signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlFrame {
    pub tangent: Vec2,
    pub facing: Vec2,
    pub gait: Vec2,
}

fn check_versor(v: Vec2, what: &str) -> Result<()> {
    let n = v[0].hypot(v[1]);
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::input(format!("{what} has norm {n}, expected a unit vector")));
    }
    Ok(())
}

impl ControlFrame {
    pub fn new(tangent: Vec2, facing: Vec2, gait: Vec2) -> Result<Self> {
        check_versor(tangent, "tangent")?;
        check_versor(facing, "facing")?;
        Ok(Self { tangent, facing, gait })
    }

    pub fn to_array(&self) -> [f64; CONTROL_DIM] {
        [
            self.tangent[0],
            self.tangent[1],
            self.facing[0],
            self.facing[1],
            self.gait[0],
            self.gait[1],
        ]
    }
}

/// `6 → 30 → 30`, leaky ReLU after both layers.
#[derive(Clone, Debug)]
pub struct ControlEncoder {
    pub first: Linear,
    pub second: Linear,
}

impl ControlEncoder {
    pub fn new(store: &mut ParamStore, name: &str, rng: &mut Rng) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.fc1"), CONTROL_DIM, ENCODED_DIM, rng),
            second: Linear::new(store, &format!("{name}.fc2"), ENCODED_DIM, ENCODED_DIM, rng),
        }
    }

    pub fn param_count() -> usize {
        CONTROL_DIM * ENCODED_DIM + ENCODED_DIM + ENCODED_DIM * ENCODED_DIM + ENCODED_DIM
    }

    /// Encodes controls of shape `[..., 6]` into `[..., 30]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], controls: Var) -> Result<Var> {
        let h = self.first.forward(tape, vars, controls)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = self.second.forward(tape, vars, h)?;
        tape.leaky_relu(h, LEAKY_SLOPE)
    }
}
