use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Central finite-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` seen among
    /// entries that were not covered by the absolute tolerance.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, analytic: f64, numeric: f64, cfg: &GradCheckConfig) {
        self.checked += 1;
        let abs = (analytic - numeric).abs();
        self.max_abs_error = self.max_abs_error.max(abs);
        if abs <= cfg.abs_tol {
            return;
        }
        let rel = abs / analytic.abs().max(numeric.abs());
        self.max_rel_error = self.max_rel_error.max(rel);
        if rel > cfg.rel_tol {
            self.failures += 1;
        }
    }
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` builds a scalar on a fresh tape from parameter leaves created from
/// `inputs`, in order. `entries` optionally restricts which `(input, index)`
/// pairs are perturbed; `None` checks every element.
pub fn check_gradient<F>(
    inputs: &[Tensor],
    f: F,
    entries: Option<&[(usize, usize)]>,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| tape.param(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::shape("gradient check needs a scalar function"))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|x| tape.param(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
                .collect();
            &all
        }
    };

    let mut report = GradCheckReport::default();
    let mut xs = inputs.to_vec();
    for &(i, k) in entries {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[k]);
        let orig = xs[i].data()[k];
        xs[i].data_mut()[k] = orig + cfg.step;
        let plus = eval(&xs)?;
        xs[i].data_mut()[k] = orig - cfg.step;
        let minus = eval(&xs)?;
        xs[i].data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        report.record(analytic, numeric, &cfg);
    }
    Ok(report)
}
