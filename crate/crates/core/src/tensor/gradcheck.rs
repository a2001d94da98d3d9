//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes on fresh tapes, so it
//! stays independent of every backward rule it checks.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    /// Largest elementwise relative error over all checked inputs.
    pub max_rel_error: f64,
    pub elements: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor relative to `max(1, |f|)`, so that near-zero
    /// gradients are compared against the finite-difference noise level.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward()` against central differences for every element of
/// every input. `build` receives the inputs recorded as grad-requiring
/// leaves and must return a scalar.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[Tensor],
    opts: GradCheckOptions,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let f0 = tape.value(out).item();
    let grads = tape.backward(out)?;
    let floor = opts.floor * f0.abs().max(1.0);

    let mut perturbed = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut elements = 0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf requires grad").data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            max_rel = max_rel.max(relative_error(a, numeric, floor));
            elements += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        elements,
        tolerance: opts.tolerance,
    })
}
