use super::{NetworkParams, NnError, Real};

/// Bias-corrected Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub const DEFAULT_LR: f64 = 0.001;

    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &NetworkParams<T>) -> Self {
        Self::new(params.len(), Self::DEFAULT_LR)
    }
}

/// One Adam update over flat slices. Non-finite gradients leave everything untouched.
pub fn adam_update<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<(), NnError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(NnError::Size { what: "adam buffers", expected: params.len(), got: grads.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NnError::Numeric("gradients"));
    }
    let t = state.t + 1;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one = T::one();
    let c1 = T::from_f64(1.0 - state.beta1.powf(t as f64));
    let c2 = T::from_f64(1.0 - state.beta2.powf(t as f64));
    let lr = T::from_f64(state.lr);
    let eps = T::from_f64(state.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    state.t = t;
    Ok(())
}

pub fn adam_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
) -> Result<(), NnError> {
    if params.spec() != grads.spec() {
        return Err(NnError::Config("gradient spec differs from parameter spec".into()));
    }
    adam_update(&mut params.values, &grads.values, state)
}
