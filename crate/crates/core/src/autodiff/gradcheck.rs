//! Central finite-difference checks for tape ops, in double precision.
//!
//! Non-scalar outputs are reduced with a fixed, non-uniform weighting so
//! that every output element contributes to the checked gradient.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// Norm-wise relative error `‖a − n‖ / (‖a‖ + ‖n‖)` per input; `0` when both
/// gradients vanish.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + (i as f64 * 0.7 + 0.3).sin()).collect()
}

fn reduce(tape: &mut Tape<f64>, out: Var) -> Result<Var, AutodiffError> {
    let n = tape.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let w = tape.leaf(Tensor::new(tape.shape(out).to_vec(), projection(n))?, false);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = reduce(&mut tape, out)?;
    tape.value(loss).item()
}

/// Compares reverse-mode gradients of `f` with respect to every input
/// against central differences with the given step.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = reduce(&mut tape, out)?;
    tape.backward(loss)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(vars[k]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; input.numel()],
        };
        let mut probe = inputs.to_vec();
        let mut numeric = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let orig = input.data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = evaluate(&probe, &f)?;
            probe[k].data_mut()[i] = orig - step;
            let down = evaluate(&probe, &f)?;
            probe[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        rel_errors.push(if scale == 0.0 { 0.0 } else { diff / scale });
    }
    Ok(GradCheckReport { rel_errors })
}
