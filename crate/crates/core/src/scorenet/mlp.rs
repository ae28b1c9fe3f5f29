//! Fully connected network with hand-written reverse mode.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiply `grad` by the derivative, expressed through the activation output `h`.
    fn backprop(self, grad: &mut Array2<f64>, h: &Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(h, |g, &h| *g *= 1.0 - h * h),
            Activation::Relu => grad.zip_mut_with(h, |g, &h| {
                if h <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

/// Weights are stored `in x out` so a batch maps as `H W + b`.
/// The last layer is affine; every hidden layer applies the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub activation: Activation,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-layer outputs kept for the backward pass; `layers[0]` is the input.
pub struct Cache {
    layers: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`, uniform init in `+-1/sqrt(fan_in)`.
    pub fn new(widths: &[usize], activation: Activation, seed: Seed) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return param(format!("invalid layer widths {widths:?}"));
        }
        let mut rng = seed.rng();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((pair[0], pair[1]), || {
                rng.gen_range(-bound..bound)
            }));
            biases.push(Array1::from_shape_simple_fn(pair[1], || {
                rng.gen_range(-bound..bound)
            }));
        }
        Ok(Mlp {
            activation,
            weights,
            biases,
        })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        let mut m = Mlp::new(widths, activation, Seed(0))?;
        m.fill(0.0);
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        let mut m = self.clone();
        m.fill(0.0);
        m
    }

    pub fn fill(&mut self, v: f64) {
        self.weights.iter_mut().for_each(|w| w.fill(v));
        self.biases.iter_mut().for_each(|b| b.fill(v));
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].nrows()];
        w.extend(self.weights.iter().map(|m| m.ncols()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("at least one layer").ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return param("network needs one bias per weight matrix");
        }
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.ncols() != b.len() {
                return param(format!("layer {i}: weight has {} outputs, bias {}", w.ncols(), b.len()));
            }
            if i > 0 && self.weights[i - 1].ncols() != w.nrows() {
                return param(format!("layer {i}: input width mismatch"));
            }
        }
        if self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .any(|v| !v.is_finite())
        {
            return param("network has non-finite parameters");
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).1
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Cache, Array2<f64>) {
        let n = self.weights.len();
        let mut layers = Vec::with_capacity(n);
        layers.push(x.to_owned());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = layers[i].dot(w);
            z += b;
            if i + 1 < n {
                self.activation.apply(&mut z);
            }
            layers.push(z);
        }
        let out = layers.pop().expect("output layer");
        (Cache { layers }, out)
    }

    /// Accumulate parameter gradients of a scalar loss into `grads`, given the
    /// loss gradient at the output. Returns the gradient at the input when asked.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: Array2<f64>,
        grads: &mut Mlp,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut g = grad_out;
        for i in (0..self.weights.len()).rev() {
            let h = &cache.layers[i];
            grads.weights[i] += &h.t().dot(&g);
            grads.biases[i] += &g.sum_axis(Axis(0));
            if i == 0 && !want_input_grad {
                return None;
            }
            let mut gh = g.dot(&self.weights[i].t());
            if i > 0 {
                self.activation.backprop(&mut gh, h);
            }
            g = gh;
        }
        Some(g)
    }

    /// Parameter buffers in a fixed order: each layer's weights then bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        let y = m.forward(array![[1.0, 2.0, 3.0]].view());
        assert_eq!(y, array![[0.0, 0.0]]);
    }

    #[test]
    fn shapes_and_validation() {
        let m = Mlp::new(&[3, 5, 5, 2], Activation::Relu, Seed(1)).unwrap();
        assert_eq!(m.widths(), vec![3, 5, 5, 2]);
        assert_eq!(m.num_params(), 3 * 5 + 5 + 5 * 5 + 5 + 5 * 2 + 2);
        m.validate().unwrap();
        let mut bad = m.clone();
        bad.biases[1] = Array1::zeros(4);
        assert!(bad.validate().is_err());
        assert!(Mlp::new(&[3], Activation::Relu, Seed(1)).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let m = Mlp::new(&[2, 6, 3], Activation::Tanh, Seed(4)).unwrap();
        let x = array![[0.3, -0.7]];
        let (cache, y) = m.forward_cached(x.view());
        let mut grads = m.zeros_like();
        // loss = sum(y)
        let gx = m
            .backward(&cache, Array2::ones(y.raw_dim()), &mut grads, true)
            .unwrap();
        for j in 0..2 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[[0, j]] += h;
            let mut xm = x.clone();
            xm[[0, j]] -= h;
            let fd = (m.forward(xp.view()).sum() - m.forward(xm.view()).sum()) / (2.0 * h);
            assert!((fd - gx[[0, j]]).abs() < 1e-8);
        }
    }
}
