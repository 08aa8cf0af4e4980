use crate::model::{Head, HeadGrads};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: HeadGrads,
    v: HeadGrads,
}

impl Adam {
    pub fn new(head: &Head, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: HeadGrads::zeros_like(head),
            v: HeadGrads::zeros_like(head),
        }
    }

    pub fn step(&mut self, head: &mut Head, grads: &HeadGrads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (li, layer) in head.layers_mut().iter_mut().enumerate() {
            let params = [(&mut layer.weights, &grads.weights[li], &mut self.m.weights[li], &mut self.v.weights[li]),
                (&mut layer.bias, &grads.bias[li], &mut self.m.bias[li], &mut self.v.bias[li])];
            for (p, g, m, v) in params {
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}
