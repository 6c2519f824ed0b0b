use super::params::LstmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut LstmParams, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let f = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.scale(f);
        }
    }
    norm
}

/// `params -= lr * grads`
pub fn sgd_update(params: &mut LstmParams, grads: &LstmParams, lr: f64) {
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: LstmParams,
    v: LstmParams,
    step: u64,
}

impl Adam {
    pub fn new(params: &LstmParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut LstmParams, grads: &LstmParams) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut());
            for (((w, &d), mi), vi) in iter {
                *mi = b1 * *mi + (1.0 - b1) * d;
                *vi = b2 * *vi + (1.0 - b2) * d * d;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
