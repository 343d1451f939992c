//! Dense, GRU and dilated convolution layers that live in a [`ParamStore`].

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{uniform_range, Rng};

pub(crate) fn init_uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| uniform_range(rng, -bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Fully connected layer `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.insert(format!("{name}.weight"), init_uniform(rng, &[input, output], bound));
        let b = store.insert(format!("{name}.bias"), init_uniform(rng, &[output], bound));
        Self { w, b, input, output }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.w])?;
        tape.add_bias(y, vars[self.b])
    }
}

/// Gated recurrent unit with a learned initial state.
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub h0: usize,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let h3 = 3 * hidden;
        Self {
            w_ih: store.insert(format!("{name}.w_ih"), init_uniform(rng, &[input, h3], bound)),
            w_hh: store.insert(format!("{name}.w_hh"), init_uniform(rng, &[hidden, h3], bound)),
            b_ih: store.insert(format!("{name}.b_ih"), init_uniform(rng, &[h3], bound)),
            b_hh: store.insert(format!("{name}.b_hh"), init_uniform(rng, &[h3], bound)),
            h0: store.insert(format!("{name}.h0"), Tensor::zeros(&[hidden])),
            input,
            hidden,
        }
    }

    /// Parameters of one layer: `3H(in + H) + 6H` for the gates plus `H` for
    /// the initial state.
    pub fn param_count(input: usize, hidden: usize) -> usize {
        3 * hidden * (input + hidden) + 6 * hidden + hidden
    }

    /// The learned initial state repeated for `batch` rows.
    pub fn initial(&self, tape: &mut Tape, vars: &[Var], batch: usize) -> Result<Var> {
        let zeros = tape.constant(Tensor::zeros(&[batch, self.hidden]))?;
        tape.add_bias(zeros, vars[self.h0])
    }

    pub fn step(&self, tape: &mut Tape, vars: &[Var], x: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let gi = tape.matmul(x, vars[self.w_ih])?;
        let gi = tape.add_bias(gi, vars[self.b_ih])?;
        let gh = tape.matmul(h, vars[self.w_hh])?;
        let gh = tape.add_bias(gh, vars[self.b_hh])?;

        let (ir, hr) = (tape.slice(gi, 0, hs)?, tape.slice(gh, 0, hs)?);
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r)?;
        let (iz, hz) = (tape.slice(gi, hs, hs)?, tape.slice(gh, hs, hs)?);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z)?;
        let (inn, hn) = (tape.slice(gi, 2 * hs, hs)?, tape.slice(gh, 2 * hs, hs)?);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(inn, rn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        tape.add(n, zd)
    }
}

/// Causal dilated convolution over `[B, T, C]`.
#[derive(Clone, Debug)]
pub struct Conv1dLayer {
    pub w: usize,
    pub b: usize,
    pub width: usize,
    pub dilation: usize,
    pub input: usize,
    pub output: usize,
}

impl Conv1dLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        width: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((width * input) as f64).sqrt();
        let w = store.insert(format!("{name}.weight"), init_uniform(rng, &[width * input, output], bound));
        let b = store.insert(format!("{name}.bias"), init_uniform(rng, &[output], bound));
        Self { w, b, width, dilation, input, output }
    }

    /// Frames consumed beyond the first output frame.
    pub fn span(&self) -> usize {
        (self.width - 1) * self.dilation
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let t = tape.value(x).shape().get(1).copied().unwrap_or(0);
        if t <= self.span() {
            return Err(Error::shape(format!(
                "convolution needs more than {} frames, got {t}",
                self.span()
            )));
        }
        tape.conv1d(x, vars[self.w], vars[self.b], self.width, self.dilation)
    }
}
