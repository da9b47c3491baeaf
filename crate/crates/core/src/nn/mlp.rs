use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    /// `ln(1 + e^z)`, used where outputs must be nonnegative.
    Softplus,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Fully connected network. Layer `l` maps `sizes[l] -> sizes[l + 1]`,
/// applies `activations[l]` and then inverted dropout with rate `dropout[l]`
/// (training mode only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    dropout: Vec<f64>,
    params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl Mlp {
    pub fn new(sizes: &[usize], activations: &[Activation], dropout: &[f64], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 || dropout.len() != sizes.len() - 1 {
            return Err(Error::Config("mlp needs n+1 sizes for n activations and dropout rates".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("mlp layer sizes must be positive".into()));
        }
        if dropout.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            params.extend(xavier(w[0], w[1], rng));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Ok(Self { sizes: sizes.to_vec(), activations: activations.to_vec(), dropout: dropout.to_vec(), params })
    }

    /// Hidden ReLU layers, each followed by dropout, then an output layer.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        out_activation: Activation,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(out_activation);
        let mut drops = vec![dropout; hidden.len()];
        drops.push(0.0);
        Self::new(&sizes, &acts, &drops, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Multiplies the last layer's weights and biases by `scale`.
    pub fn scale_output_layer(&mut self, scale: f64) {
        let l = self.sizes.len() - 2;
        let (w, b) = self.layer_offsets(l);
        let end = b + self.sizes[l + 1];
        self.params[w..end].iter_mut().for_each(|p| *p *= scale);
    }

    /// Forward pass over a batch (one row per sample). Passing an rng turns
    /// on dropout.
    pub fn forward(&self, x: &Matrix, mut rng: Option<&mut dyn rand::RngCore>) -> (Matrix, MlpCache) {
        assert_eq!(x.cols(), self.input_dim(), "mlp input width");
        let layers = self.sizes.len() - 1;
        let mut cache = MlpCache { inputs: Vec::with_capacity(layers), pre: Vec::with_capacity(layers), masks: Vec::with_capacity(layers) };
        let mut h = x.clone();
        for l in 0..layers {
            let (w, b) = self.layer_offsets(l);
            let out = self.sizes[l + 1];
            let mut z = h.matmul_slice(&self.params[w..b], out);
            let bias = &self.params[b..b + out];
            for r in 0..z.rows() {
                for (v, bb) in z.row_mut(r).iter_mut().zip(bias) {
                    *v += bb;
                }
            }
            let act = self.activations[l];
            let mut a = z.map(|v| act.apply(v));
            let p = self.dropout[l];
            let mask = match rng.as_deref_mut() {
                Some(r) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m = Matrix::from_vec(
                        a.rows(),
                        a.cols(),
                        (0..a.rows() * a.cols()).map(|_| if r.gen::<f64>() < p { 0.0 } else { keep }).collect(),
                    );
                    for (v, k) in a.data_mut().iter_mut().zip(m.data()) {
                        *v *= k;
                    }
                    Some(m)
                }
                _ => None,
            };
            cache.inputs.push(h);
            cache.pre.push(z);
            cache.masks.push(mask);
            h = a;
        }
        (h, cache)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&Matrix::row_vector(x), None).0.into_vec()
    }

    /// Gradients with respect to the input and to every parameter, given the
    /// gradient `dy` of the loss with respect to the output.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix) -> (Matrix, Vec<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let mut g = dy.clone();
        for l in (0..self.sizes.len() - 1).rev() {
            if let Some(mask) = &cache.masks[l] {
                for (v, k) in g.data_mut().iter_mut().zip(mask.data()) {
                    *v *= k;
                }
            }
            let act = self.activations[l];
            for (v, z) in g.data_mut().iter_mut().zip(cache.pre[l].data()) {
                *v *= act.derivative(*z);
            }
            let (w, b) = self.layer_offsets(l);
            let out = self.sizes[l + 1];
            let dw = cache.inputs[l].t_matmul(&g);
            for (acc, d) in grads[w..b].iter_mut().zip(dw.data()) {
                *acc += d;
            }
            for r in 0..g.rows() {
                for (acc, d) in grads[b..b + out].iter_mut().zip(g.row(r)) {
                    *acc += d;
                }
            }
            g = g.matmul_slice_t(&self.params[w..b], self.sizes[l]);
        }
        (g, grads)
    }
}
