use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;
use super::AutodiffError;

/// Bias-corrected Adam over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    params: Vec<ParamId>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<ParamId>, store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |id: &ParamId| vec![T::zero(); store.value(*id).numel()];
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            params,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Fails without touching anything if a parameter has no gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), AutodiffError> {
        if let Some(id) = self.params.iter().find(|id| store.get(**id).grad.is_none()) {
            return Err(AutodiffError::MissingGradient(store.get(*id).name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::cst(self.beta1), T::cst(self.beta2));
        let c1 = T::cst(1.0 - self.beta1.powi(t));
        let c2 = T::cst(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::cst(self.lr), T::cst(self.eps));
        for ((id, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let p = store.get_mut(*id);
            let grad = p.grad.take().expect("checked above");
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
