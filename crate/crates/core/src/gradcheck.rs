//! Finite-difference verification of tape gradients.
//!
//! Checks run in f64: central differences with step 1e-5 leave roughly ten
//! significant digits, so a correct analytic gradient sits far below the
//! 1e-4 relative-error gate and a wrong one sits far above it. f32 noise
//! would swamp that margin.

use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Relative error between an analytic and a numeric derivative, guarded
/// against both being near zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference gradient of a scalar function at `at`.
pub fn numeric_grad<F>(f: F, at: &Tensor<f64>, step: f64) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<f64>,
{
    let mut grad = vec![0.0; at.numel()];
    let mut probe = at.clone();
    for (i, slot) in grad.iter_mut().enumerate() {
        let base = at.data()[i];
        probe.data_mut()[i] = base + step;
        let hi = f(&probe)?;
        probe.data_mut()[i] = base - step;
        let lo = f(&probe)?;
        probe.data_mut()[i] = base;
        let g = (hi - lo) / (2.0 * step);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "numeric gradient".to_string(),
                coord: i,
            });
        }
        *slot = g;
    }
    Tensor::new(at.shape().to_vec(), grad)
}

/// Worst coordinate of one checked input.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Outcome of one gradient check over a set of named inputs.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub inputs: Vec<InputReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "ok" } else { "FAIL" };
        write!(
            f,
            "{:<28} max rel err {:>12.3e}  (gate {:.0e})  {}",
            self.name, self.max_rel_err, self.tolerance, verdict
        )?;
        if !self.passed() {
            for inp in &self.inputs {
                if inp.max_rel_err >= self.tolerance {
                    write!(
                        f,
                        "\n    {}[{}]: analytic {:e} vs numeric {:e}",
                        inp.name, inp.worst_coord, inp.analytic_at_worst, inp.numeric_at_worst
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Builds a scalar loss on a fresh tape from leaves matching `inputs`.
pub type LossBuilder = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn eval_loss(inputs: &[(&str, Tensor<f64>)], build: &LossBuilder) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(_, t)| tape.leaf(t.clone(), false))
        .collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss {
            numel: value.numel(),
        });
    }
    Ok(value.data()[0].to_f64())
}

/// Compares the tape gradient of every input coordinate against central
/// differences. Inputs the loss never touches count as all-zero analytic
/// gradients, which central differences confirm.
pub fn grad_check(
    name: &str,
    inputs: &[(&str, Tensor<f64>)],
    build: &LossBuilder,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    // One analytic sweep.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(_, t)| tape.leaf(t.clone(), true))
        .collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut reports = Vec::with_capacity(inputs.len());
    let mut overall: f64 = 0.0;
    for (k, (input_name, tensor)) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], tensor.shape());
        let numeric = numeric_grad(
            |probe| {
                let mut swapped: Vec<(&str, Tensor<f64>)> = inputs.to_vec();
                swapped[k].1 = probe.clone();
                eval_loss(&swapped, build)
            },
            tensor,
            step,
        )?;
        let mut worst = InputReport {
            name: input_name.to_string(),
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic_at_worst: analytic.data().first().copied().unwrap_or(0.0),
            numeric_at_worst: numeric.data().first().copied().unwrap_or(0.0),
        };
        for i in 0..tensor.numel() {
            let a = analytic.data()[i];
            if !a.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("analytic gradient of {input_name}"),
                    coord: i,
                });
            }
            let e = rel_err(a, numeric.data()[i]);
            if e > worst.max_rel_err {
                worst.max_rel_err = e;
                worst.worst_coord = i;
                worst.analytic_at_worst = a;
                worst.numeric_at_worst = numeric.data()[i];
            }
        }
        overall = overall.max(worst.max_rel_err);
        reports.push(worst);
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        inputs: reports,
        max_rel_err: overall,
        tolerance,
    })
}
