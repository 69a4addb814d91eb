use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |numeric|)` over every input entry.
    pub max_relative_error: f64,
    pub worst_input: usize,
    pub worst_entry: usize,
}

/// Deterministic projection weights used to reduce non-scalar outputs.
fn projection(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 + 0.5 * ((i as f64 + 1.0) * 0.7548776662).fract())
        .collect()
}

fn scalarize(tape: &mut Tape, out: Var) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = Tensor::new(shape, projection(tape.value(out).numel()))?;
    let w = tape.constant(w);
    let weighted = tape.mul(out, w)?;
    Ok(tape.sum(weighted))
}

/// Checks the gradient of `op` with respect to every entry of every input.
///
/// Non-scalar outputs are reduced with fixed positive weights before
/// differentiation, so the check covers the full Jacobian-vector product.
pub fn grad_check<F>(op: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let loss = scalarize(&mut tape, out)?;
        Ok(tape.value(loss).item())
    };

    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst_input: 0,
        worst_entry: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let base = inputs[i].data()[j];
            work[i].data_mut()[j] = base + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = base - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = base;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            if err > result.max_relative_error || err.is_nan() {
                result = GradCheck {
                    max_relative_error: err,
                    worst_input: i,
                    worst_entry: j,
                };
            }
        }
    }
    Ok(result)
}
