//! Small fully connected networks with tanh hidden layers, manual
//! backpropagation and an Adam optimizer.

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// per layer: weights (out × in, row-major) then biases
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Tape {
    /// layer inputs; the last entry is the network output
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn n_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(Self::n_params(sizes));
        for w in sizes.windows(2) {
            let lim = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-lim..lim)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    /// Small Gaussian weights; used for toy networks in tests.
    pub fn gaussian<R: Rng + ?Sized>(sizes: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = Self::n_params(sizes);
        Self { sizes: sizes.to_vec(), params: (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect() }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for w in self.sizes.windows(2) {
            off.push(off.last().unwrap() + w[0] * w[1] + w[1]);
        }
        off
    }

    /// Mutable view of the output layer's (weights, biases).
    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offsets();
        let l = self.sizes.len() - 2;
        let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
        let slice = &mut self.params[off[l]..off[l + 1]];
        slice.split_at_mut(nin * nout)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_tape(x).0
    }

    pub fn forward_tape(&self, x: &[f64]) -> (Vec<f64>, Tape) {
        let n_layers = self.sizes.len() - 1;
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        for l in 0..n_layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            let input = acts.last().unwrap();
            let mut out: Vec<f64> = (0..nout)
                .map(|o| b[o] + w[o * nin..(o + 1) * nin].iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            off += nin * nout + nout;
        }
        (acts.last().unwrap().clone(), Tape { acts })
    }

    /// Accumulates ∂L/∂params into `grad` and returns ∂L/∂input.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let off = self.layer_offsets();
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                let y = &tape.acts[l + 1];
                delta.iter_mut().zip(y).for_each(|(d, v)| *d *= 1.0 - v * v);
            }
            let input = &tape.acts[l];
            let base = off[l];
            for o in 0..nout {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * nin..base + (o + 1) * nin];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                grad[base + nin * nout + o] += d;
            }
            let w = &self.params[base..base + nin * nout];
            delta = (0..nin).map(|i| (0..nout).map(|o| w[o * nin + i] * delta[o]).sum()).collect();
        }
        delta
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// First-order adaptive-moment optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
