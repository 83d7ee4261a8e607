use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderGrads, EncoderParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderGrads) {
        self.step += 1;
        let lr = self.lr;
        let mut ps = params.slices_mut();
        let gs = grads.slices();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in ps.iter_mut().zip(&gs) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                if self.m.is_empty() {
                    self.m = gs.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = gs.iter().map(|g| vec![0.0; g.len()]).collect();
                }
                let bc1 = 1.0 - beta1.powi(self.step);
                let bc2 = 1.0 - beta2.powi(self.step);
                for (k, (p, g)) in ps.iter_mut().zip(&gs).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                        p[i] -= lr * (update + weight_decay * p[i]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params() -> EncoderParams {
        EncoderParams {
            w_img: array![[1.0, -2.0]],
            w_txt: array![[0.5]],
            b_img: None,
            b_txt: None,
        }
    }

    fn grads() -> EncoderGrads {
        EncoderGrads {
            w_img: array![[0.1, -0.3]],
            w_txt: array![[2.0]],
            b_img: None,
            b_txt: None,
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = params();
        Optimizer::new(OptimizerKind::Sgd, 0.5).step(&mut p, &grads());
        assert_eq!(p.w_img, array![[0.95, -1.85]]);
        assert_eq!(p.w_txt, array![[-0.5]]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr_times_sign() {
        let mut p = params();
        let kind = OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 0.0,
            weight_decay: 0.0,
        };
        Optimizer::new(kind, 0.01).step(&mut p, &grads());
        assert!((p.w_img[[0, 0]] - 0.99).abs() < 1e-12);
        assert!((p.w_img[[0, 1]] + 1.99).abs() < 1e-12);
        assert!((p.w_txt[[0, 0]] - 0.49).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let mut p = params();
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.0);
        for _ in 0..3 {
            opt.step(&mut p, &grads());
        }
        assert_eq!(p, params());
    }
}
