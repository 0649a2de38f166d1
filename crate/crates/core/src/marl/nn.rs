//! Dense multilayer perceptrons with an explicit backward pass.
//!
//! Hidden layers use ReLU; the output layer is linear. Squashing of outputs
//! is left to the caller.

use rand::Rng;

/// Row-major `rows x cols` matrix; one row per batch sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column-wise concatenation.
    pub fn hstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            let row = out.row_mut(r);
            row[..self.cols].copy_from_slice(self.row(r));
            row[self.cols..].copy_from_slice(other.row(r));
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn forward(&self, x: &Matrix, relu: bool) -> Matrix {
        debug_assert_eq!(x.cols, self.inputs);
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for b in 0..x.rows {
            let xr = x.row(b);
            let orow = out.row_mut(b);
            for (o, slot) in orow.iter_mut().enumerate() {
                let z = self.bias[o] + dot(&self.weights[o * self.inputs..(o + 1) * self.inputs], xr);
                *slot = if relu { z.max(0.0) } else { z };
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_tape`]: entry 0 is the input,
/// entry `l + 1` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Tape {
    pub activations: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape holds the input")
    }
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Dense>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self { layers: mlp.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for l in &mut self.layers {
                l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= s);
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. Hidden layers get He-uniform
    /// weights; the output layer starts near zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = if i == last { 3e-3 } else { (6.0 / inputs as f64).sqrt() };
                let mut layer = Dense::zeros(inputs, outputs);
                layer.weights.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    /// Layer sizes, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn shapes_chain(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(x, last > 0);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(&h, i < last);
        }
        h
    }

    pub fn forward_tape(&self, x: &Matrix) -> Tape {
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(activations.last().expect("seeded"), i < last);
            activations.push(next);
        }
        Tape { activations }
    }

    /// Backpropagates `grad_out` (dL/d output). Returns parameter gradients
    /// (when `param_grads` is set) and dL/d input.
    pub fn backward(&self, tape: &Tape, grad_out: &Matrix, param_grads: bool) -> (Option<MlpGrad>, Matrix) {
        let mut grads = param_grads.then(|| MlpGrad::zeros_like(self));
        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.activations[i];
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[i];
                for b in 0..delta.rows {
                    let xr = input.row(b);
                    for (o, &d) in delta.row(b).iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, xr, &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs]);
                            gl.bias[o] += d;
                        }
                    }
                }
            }
            let mut prev = Matrix::zeros(delta.rows, layer.inputs);
            for b in 0..delta.rows {
                let prow = prev.row_mut(b);
                for (o, &d) in delta.row(b).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &layer.weights[o * layer.inputs..(o + 1) * layer.inputs], prow);
                    }
                }
            }
            if i > 0 {
                // ReLU derivative from the recorded post-activation.
                for (p, &a) in prev.data.iter_mut().zip(&input.data) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn blend_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, ov) in t.weights.iter_mut().chain(t.bias.iter_mut()).zip(o.weights.iter().chain(&o.bias)) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
    }

    /// Euclidean distance between parameter vectors of equal shape.
    pub fn distance(&self, other: &Mlp) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| a.weights.iter().chain(&a.bias).zip(b.weights.iter().chain(&b.bias)))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: MlpGrad,
    v: MlpGrad,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: MlpGrad::zeros_like(mlp), v: MlpGrad::zeros_like(mlp) }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, mlp: &mut Mlp, grad: &MlpGrad) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((layer, g), m), v) in mlp.layers.iter_mut().zip(&grad.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &gv), mv), vv) in params.zip(gs).zip(ms).zip(vs) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *p -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn loss(mlp: &Mlp, x: &Matrix) -> f64 {
        mlp.forward(x).data.iter().map(|v| 0.5 * v * v).sum()
    }

    #[test]
    fn forward_matches_hand_computation() {
        let mut mlp = Mlp { layers: vec![Dense::zeros(2, 2), Dense::zeros(2, 1)] };
        mlp.layers[0].weights = vec![1.0, -1.0, 2.0, 0.5];
        mlp.layers[0].bias = vec![0.0, -3.0];
        mlp.layers[1].weights = vec![1.0, 2.0];
        mlp.layers[1].bias = vec![0.5];
        // h = relu([1 - 2, 2*1 + 0.5*2 - 3]) = [0, 0]; out = 0.5
        let out = mlp.forward(&Matrix::from_rows(&[[1.0, 2.0]]));
        assert_eq!(out.data, vec![0.5]);
        // h = relu([3 - 1, 6 + 0.5 - 3]) = [2, 3.5]; out = 2 + 7 + 0.5
        let out = mlp.forward(&Matrix::from_rows(&[[3.0, 1.0]]));
        assert_eq!(out.data, vec![9.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seed::stream(3, "nn-test", 0);
        let mlp = Mlp::new(&[4, 6, 5, 3], &mut rng);
        let mut mlp = mlp;
        // larger output weights so the gradient is not vanishingly small
        mlp.layers[2].weights.iter_mut().for_each(|w| *w *= 100.0);
        let x = Matrix::from_rows(&[[0.3, -0.2, 0.9, 0.1], [-0.5, 0.4, 0.2, 0.7]]);
        let tape = mlp.forward_tape(&x);
        let (grads, _) = mlp.backward(&tape, tape.output(), true);
        let analytic = grads.unwrap().flatten();
        let h = 1e-6;
        for i in 0..mlp.num_params() {
            let mut plus = mlp.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = mlp.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn blend_with_tau_one_copies() {
        let mut rng = seed::stream(4, "nn-test", 0);
        let online = Mlp::new(&[3, 4, 2], &mut rng);
        let mut target = Mlp::new(&[3, 4, 2], &mut rng);
        target.blend_from(&online, 1.0);
        assert_eq!(target, online);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut rng = seed::stream(5, "nn-test", 0);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng);
        let mut g = MlpGrad::zeros_like(&mlp);
        g.layers[0].weights.iter_mut().for_each(|w| *w = 10.0);
        g.clip(1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
