//! First-order optimizers for the step weights.

use crate::policy::{StepVector, STEP_FEATURES};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer state for one training run. `descend` minimizes; pass the
/// negated gradient to ascend.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    m: StepVector,
    v: StepVector,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            m: [0.0; STEP_FEATURES],
            v: [0.0; STEP_FEATURES],
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn descend(&mut self, weights: &mut StepVector, grad: &StepVector) {
        self.steps = self.steps.saturating_add(1);
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in weights.iter_mut().zip(grad) {
                    *w -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - libm::pow(ADAM_BETA1, f64::from(self.steps));
                let c2 = 1.0 - libm::pow(ADAM_BETA2, f64::from(self.steps));
                for i in 0..STEP_FEATURES {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    weights[i] -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + ADAM_EPSILON);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_is_plain_step() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        let mut w = [1.0; STEP_FEATURES];
        let mut g = [0.0; STEP_FEATURES];
        g[3] = 2.0;
        opt.descend(&mut w, &g);
        assert_eq!(w[3], 0.0);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn first_adam_step_has_learning_rate_size() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05);
        let mut w = [0.0; STEP_FEATURES];
        let mut g = [0.0; STEP_FEATURES];
        g[0] = 123.0;
        g[1] = -0.001;
        opt.descend(&mut w, &g);
        assert!((w[0] + 0.05).abs() < 1e-9);
        assert!((w[1] - 0.05).abs() < 1e-6);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05);
        let mut w = [3.0; STEP_FEATURES];
        for _ in 0..2000 {
            let g = w.map(|x| 2.0 * (x - 1.0));
            opt.descend(&mut w, &g);
        }
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-3), "{w:?}");
    }
}
