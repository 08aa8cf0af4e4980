use serde::{Deserialize, Serialize};

use super::layers::Dense;

/// Trainable classifier on top of the pooled backbone features:
/// `hidden.len()` ReLU dense layers, then a linear output layer whose logits
/// go through softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    layers: Vec<Dense>,
}

/// Per-layer parameter gradients, aligned with [`Head::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl HeadGrads {
    pub fn zeros_like(head: &Head) -> Self {
        Self {
            weights: head.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: head.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[i + 1]` the output of hidden layer `i`.
    acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Head {
    pub fn new(input_width: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input_width;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::he_init(format!("head/dense{i}"), width, h, seed));
            width = h;
        }
        layers.push(Dense::glorot_init("head/output".into(), width, num_classes, seed));
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty(), "a head needs an output layer");
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("output layer").outputs
    }

    pub fn output_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().expect("output layer")
    }

    pub fn forward_trace(&self, features: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(features.to_vec());
        let (hidden, output) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            let mut z = layer.forward(acts.last().expect("input"));
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(z);
        }
        let logits = output[0].forward(acts.last().expect("input"));
        Trace { acts, logits }
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.forward_trace(features).logits
    }

    pub fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.logits(features))
    }

    /// Accumulates parameter gradients for one sample given dL/dlogits.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64], grads: &mut HeadGrads) {
        let mut delta = dlogits.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.acts[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grads.bias[li][o] += d;
                let row = &mut grads.weights[li][o * layer.inputs..(o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative through the stored post-activation
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_normalised_and_stable() {
        let p = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[2]);
        assert_eq!(softmax(&[0.0, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn shapes() {
        let head = Head::new(10, &[8, 4], 3, 1);
        assert_eq!(head.hidden_widths(), vec![8, 4]);
        assert_eq!(head.num_classes(), 3);
        assert_eq!(head.layers().iter().map(|l| l.id.as_str()).collect::<Vec<_>>(), ["head/dense0", "head/dense1", "head/output"]);
        assert_eq!(head.probabilities(&[0.5; 10]).len(), 3);
    }
}
