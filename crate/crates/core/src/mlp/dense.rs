use rand::Rng;
use serde::{Deserialize, Serialize};

/// Affine layer `W·a + b` with `W` stored row-major (`out_dim × in_dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±1/√in_dim` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let r = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.gen_range(-r..=r);
        }
        layer
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = self.row(o);
            let mut acc = self.bias[o];
            for (w, a) in row.iter().zip(input) {
                acc += w * a;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward network: ReLU after every layer but the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_trace`] for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn is_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l != last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(&acts[l], &mut out);
            if l != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                // ReLU output is zero exactly where the pre-activation was clipped.
                for (gi, &a) in g.iter_mut().zip(&trace.acts[l + 1]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let input = &trace.acts[l];
            let gl = &mut grad.layers[l];
            let mut g_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                gl.bias[o] += go;
                let row = layer.row(o);
                let grow = &mut gl.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += go * input[i];
                    g_in[i] += go * row[i];
                }
            }
            g = g_in;
        }
        g
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_hidden_affine_output() {
        let net = Mlp {
            layers: vec![
                Dense {
                    in_dim: 2,
                    out_dim: 1,
                    weights: vec![1.0, -1.0],
                    bias: vec![0.0],
                },
                Dense {
                    in_dim: 1,
                    out_dim: 1,
                    weights: vec![2.0],
                    bias: vec![-1.0],
                },
            ],
        };
        assert_eq!(net.forward(&[1.0, 0.0]), vec![1.0]);
        assert_eq!(net.forward(&[0.0, 1.0]), vec![-1.0]);
        assert!(net.is_consistent());
        assert_eq!(net.param_count(), 5);
    }
}
