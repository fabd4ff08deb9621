//! Small fully connected networks with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Hidden layers use ReLU; this applies to the last layer.
    pub output: Activation,
}

/// Values recorded by [`Mlp::forward_trace`] for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has layers")
    }
}

/// Parameter gradients with the same layout as [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.iter_mut() {
            *g *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialization; the last layer uses
    /// `±final_scale` so initial outputs start near zero.
    pub fn new(sizes: &[usize], output: Activation, final_scale: f64, rng: &mut impl Rng) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (inputs, outputs) = (sizes[k], sizes[k + 1]);
                let bound = if k + 1 == n {
                    final_scale
                } else {
                    1.0 / (inputs.max(1) as f64).sqrt()
                };
                let mut draw = || rng.gen_range(-bound..=bound);
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| draw()).collect(),
                    biases: (0..outputs).map(|_| draw()).collect(),
                }
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("network has layers").outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn activation(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.post.pop().expect("network has layers"))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation(k);
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    layer.biases[o] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if z.iter().chain(&a).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite activation in layer {k}")));
            }
            trace.inputs.push(std::mem::replace(&mut x, a.clone()));
            trace.pre.push(z);
            trace.post.push(a);
        }
        Ok(trace)
    }

    /// Gradients of `upstream · output` with respect to every parameter and
    /// to the input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> (Gradients, Vec<f64>) {
        assert_eq!(upstream.len(), self.output_dim(), "upstream gradient size");
        let mut grads = Gradients::zeros_like(self);
        let mut delta: Vec<f64> = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = self.activation(k);
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= act.derivative(trace.pre[k][o], trace.post[k][o]);
            }
            let input = &trace.inputs[k];
            let gw = &mut grads.weights[k];
            for o in 0..layer.outputs {
                for i in 0..layer.inputs {
                    gw[o * layer.inputs + i] = delta[o] * input[i];
                }
            }
            grads.biases[k].copy_from_slice(&delta);
            let mut below = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in below.iter_mut().zip(row) {
                    *b += w * delta[o];
                }
            }
            delta = below;
        }
        (grads, delta)
    }

    /// Gradient-descent step: `θ -= lr · g`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[k]) {
                *w -= lr * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&grads.biases[k]) {
                *b -= lr * g;
            }
        }
    }

    /// `θ ← τ·θ_source + (1 − τ)·θ`; `τ = 1` copies exactly.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        if tau == 1.0 {
            self.clone_from(source);
            return;
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d = tau * s + (1.0 - tau) * *d;
            }
            for (d, s) in dst.biases.iter_mut().zip(&src.biases) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_net(sizes: &[usize], output: Activation) -> Mlp {
        let mut net = Mlp::new(sizes, output, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        net
    }

    #[test]
    fn zero_weights_pass_biases_through_activations() {
        let mut net = zero_net(&[3, 4, 2], Activation::Tanh);
        net.layers[0].biases = vec![-1.0, 0.5, 2.0, 0.0];
        net.layers[1].biases = vec![0.3, -7.0];
        let out = net.forward(&[9.0, -3.0, 1.0]).unwrap();
        assert_eq!(out, vec![0.3f64.tanh(), (-7.0f64).tanh()]);
    }

    #[test]
    fn tanh_output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 16, 3], Activation::Tanh, 10.0, &mut rng);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-100.0..100.0)).collect();
            assert!(net.forward(&x).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_wrong_input_and_non_finite_values() {
        let net = Mlp::new(&[2, 3, 1], Activation::Identity, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(net.forward(&[1.0]).is_err());
        let err = net.forward(&[f64::NAN, 1.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn soft_update_with_unit_rate_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Mlp::new(&[4, 8, 2], Activation::Tanh, 0.1, &mut rng);
        let mut b = Mlp::new(&[4, 8, 2], Activation::Tanh, 0.1, &mut rng);
        assert_ne!(a, b);
        b.soft_update(&a, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn clip_norm_bounds_global_norm() {
        let net = zero_net(&[2, 2, 1], Activation::Identity);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0] = vec![3.0, 4.0, 0.0, 0.0];
        g.clip_norm(1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
        g.clip_norm(5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
