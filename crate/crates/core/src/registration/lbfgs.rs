use std::collections::VecDeque;

use super::{evaluate, OptimizerConfig, Params, RegistrationProblem, Step};
use crate::error::Result;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn dot(a: &Params, b: &Params) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS: two-loop recursion for the search direction and a
/// backtracking Armijo line search along the bound-projected path.
#[derive(Clone, Debug)]
pub struct Lbfgs {
    lr: f64,
    history: usize,
    /// `(s, y, 1 / s.y)`, oldest first.
    pairs: VecDeque<(Params, Params, f64)>,
}

impl Lbfgs {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            history: cfg.history,
            pairs: VecDeque::with_capacity(cfg.history),
        }
    }

    fn direction(&self, grad: &Params) -> Params {
        let mut q = *grad;
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..6 {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0,
        };
        for v in &mut q {
            *v *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..6 {
                q[i] += s[i] * (a - b);
            }
        }
        q.map(|v| -v)
    }
}

impl Step for Lbfgs {
    fn step(
        &mut self,
        prob: &RegistrationProblem,
        params: &mut Params,
        loss: f64,
        grad: &Params,
    ) -> Result<(f64, Params)> {
        let mut dir = self.direction(grad);
        if dot(&dir, grad) >= 0.0 {
            self.pairs.clear();
            dir = grad.map(|g| -g);
        }
        let mut alpha = if self.pairs.is_empty() {
            let l1: f64 = grad.iter().map(|g| g.abs()).sum();
            self.lr * (1.0 / l1.max(f64::MIN_POSITIVE)).min(1.0)
        } else {
            self.lr
        };

        for _ in 0..MAX_BACKTRACKS {
            let mut trial = *params;
            for i in 0..6 {
                trial[i] += alpha * dir[i];
            }
            prob.bounds().project(&mut trial);
            let s: Params = std::array::from_fn(|i| trial[i] - params[i]);
            let (f, g) = evaluate(prob, &trial)?;
            if f.is_finite() && f <= loss + ARMIJO_C1 * dot(grad, &s) {
                let y: Params = std::array::from_fn(|i| g[i] - grad[i]);
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                    if self.pairs.len() == self.history {
                        self.pairs.pop_front();
                    }
                    self.pairs.push_back((s, y, 1.0 / sy));
                }
                *params = trial;
                return Ok((f, g));
            }
            alpha *= 0.5;
        }
        // No acceptable step along this direction: stay put and restart the
        // curvature history.
        self.pairs.clear();
        Ok((loss, *grad))
    }
}
