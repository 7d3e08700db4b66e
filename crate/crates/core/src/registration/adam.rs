use super::{evaluate, OptimizerConfig, Params, RegistrationProblem, Step};
use crate::error::Result;

/// Bias-corrected Adam with projection onto the problem bounds.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: [0.0; 6],
            v: [0.0; 6],
            t: 0,
        }
    }
}

impl Step for Adam {
    fn step(
        &mut self,
        prob: &RegistrationProblem,
        params: &mut Params,
        _loss: f64,
        grad: &Params,
    ) -> Result<(f64, Params)> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..6 {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        prob.bounds().project(params);
        evaluate(prob, params)
    }
}
