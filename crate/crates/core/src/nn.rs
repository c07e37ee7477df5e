//! A small dense feed-forward network with manual backpropagation, and Adam.
//!
//! Used for the MLP reward model and the MLP-softmax policy. Parameters live
//! in one flat vector: for each layer, the weight matrix (row-major,
//! `out x in`) followed by the bias.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths including input and output.
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Mlp {
    /// Glorot-normal weights, zero biases. The output layer starts at zero so
    /// a fresh network predicts zeros (uniform policy, zero reward).
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let n_layers = sizes.len() - 1;
        let mut params = Vec::new();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let last = l + 1 == n_layers;
            let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, sd).expect("positive sd");
            for _ in 0..fan_in * fan_out {
                params.push(if last { 0.0 } else { normal.sample(rng) });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes,
            activation,
            params,
        }
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let here = offset;
            offset += w[0] * w[1] + w[1];
            (here, w[0], w[1])
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Vec::new();
        self.forward_cached(x, &mut cache)
    }

    /// Forward pass that keeps every layer's output (input included) for a
    /// subsequent [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64], cache: &mut Vec<Vec<f64>>) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_len());
        cache.clear();
        cache.push(x.to_vec());
        let n_layers = self.sizes.len() - 1;
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let input = cache.last().expect("non-empty");
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            cache.push(out);
        }
        cache.last().expect("non-empty").clone()
    }

    /// Accumulates d(objective)/d(params) into `grad` given d(objective)/d(output).
    pub fn backward(&self, cache: &[Vec<f64>], grad_out: &[f64], grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = grad_out.to_vec();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &cache[l];
            let w_end = off + fan_in * fan_out;
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[w_end + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..w_end];
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wv;
                }
            }
            for (p, y) in prev.iter_mut().zip(input) {
                *p *= self.activation.derivative_from_output(*y);
            }
            delta = prev;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One ascent step (`sign = 1`) or descent step (`sign = -1`).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], sign: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] += sign * self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}
