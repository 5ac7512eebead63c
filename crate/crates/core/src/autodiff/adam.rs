//! Adam with bias correction.

/// Hyperparameters; the usual defaults except the caller-chosen rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers plus the step counter, one per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update, in place.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, hp: &AdamHyper) {
    assert_eq!(param.len(), grad.len(), "gradient length mismatch");
    assert_eq!(param.len(), state.m.len(), "state length mismatch");
    state.t += 1;
    let b1t = 1.0 - hp.beta1.powi(state.t as i32);
    let b2t = 1.0 - hp.beta2.powi(state.t as i32);
    for i in 0..param.len() {
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grad[i];
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        param[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}
