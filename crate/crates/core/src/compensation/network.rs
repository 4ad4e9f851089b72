//! Small dense feed-forward network with analytic backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer. `w[i][j]` connects input `j` to output `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, act: Activation) -> Self {
        Layer {
            w: vec![vec![0.0; inputs]; outputs],
            b: vec![0.0; outputs],
            act,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("network has no layers")]
    Empty,
    #[error("layer {0} has ragged or mismatched weights")]
    Layer(usize),
    #[error("network input width is {found}, expected {expected}")]
    Inputs { expected: usize, found: usize },
    #[error("network must end in a single output")]
    Output,
    #[error("parameter {0} is not finite")]
    NonFinite(usize),
}

/// Scalar-output multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-forward scratch buffers, reused across samples.
#[derive(Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Mlp {
    /// All-zero network of the given widths, tanh on hidden layers and a
    /// linear output.
    pub fn zeros(widths: &[usize]) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Linear } else { Activation::Tanh };
                Layer::zeros(widths[i], widths[i + 1], act)
            })
            .collect();
        Mlp { layers }
    }

    /// Weights and biases uniform in [-0.5, 0.5] scaled by 1/√fan_in.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = Mlp::zeros(widths);
        for layer in &mut net.layers {
            let scale = 1.0 / (layer.inputs() as f64).sqrt();
            for row in &mut layer.w {
                for w in row.iter_mut() {
                    *w = rng.random_range(-0.5..=0.5) * scale;
                }
            }
            for b in &mut layer.b {
                *b = rng.random_range(-0.5..=0.5) * scale;
            }
        }
        net
    }

    pub fn check(&self, inputs: usize) -> Result<(), ShapeError> {
        let first = self.layers.first().ok_or(ShapeError::Empty)?;
        if first.inputs() != inputs {
            return Err(ShapeError::Inputs {
                expected: inputs,
                found: first.inputs(),
            });
        }
        let mut width = inputs;
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.b.len() || l.w.iter().any(|r| r.len() != width) {
                return Err(ShapeError::Layer(i));
            }
            width = l.outputs();
        }
        if width != 1 {
            return Err(ShapeError::Output);
        }
        if let Some(i) = self.params().iter().position(|p| !p.is_finite()) {
            return Err(ShapeError::NonFinite(i));
        }
        Ok(())
    }

    /// Layer widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = vec![self.layers.first().map_or(0, Layer::inputs)];
        out.extend(self.layers.iter().map(Layer::outputs));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.b.len() * (l.inputs() + 1)).sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for row in &l.w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for row in &mut l.w {
                for w in row.iter_mut() {
                    *w = it.next().unwrap();
                }
            }
            for b in &mut l.b {
                *b = it.next().unwrap();
            }
        }
    }

    /// `self += scale * other`, over parameters of identical shape.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (l, g) in self.layers.iter_mut().zip(&other.layers) {
            for (row, grow) in l.w.iter_mut().zip(&g.w) {
                for (w, gw) in row.iter_mut().zip(grow) {
                    *w += scale * gw;
                }
            }
            for (b, gb) in l.b.iter_mut().zip(&g.b) {
                *b += scale * gb;
            }
        }
    }

    fn zeroed_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs(), l.act))
                .collect(),
        }
    }

    fn forward_into(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        ws.acts.resize_with(self.layers.len() + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for (k, l) in self.layers.iter().enumerate() {
            let (prev, rest) = ws.acts.split_at_mut(k + 1);
            let input = &prev[k];
            let out = &mut rest[0];
            out.clear();
            for (row, b) in l.w.iter().zip(&l.b) {
                let z = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + b;
                out.push(l.act.apply(z));
            }
        }
        ws.acts[self.layers.len()][0]
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_into(x, &mut Workspace::default())
    }

    pub fn forward_with(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        self.forward_into(x, ws)
    }

    /// Mean squared error of `out_scale · net(x)` against the targets.
    pub fn loss(&self, inputs: &[[f64; 2]], targets: &[f64], out_scale: f64) -> f64 {
        let mut ws = Workspace::default();
        let sum: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| {
                let e = out_scale * self.forward_into(x, &mut ws) - t;
                e * e
            })
            .sum();
        sum / inputs.len() as f64
    }

    /// Exact gradient of [`Mlp::loss`] with respect to every parameter,
    /// returned in the network's own shape.
    pub fn loss_gradient(&self, inputs: &[[f64; 2]], targets: &[f64], out_scale: f64, ws: &mut Workspace) -> Mlp {
        let mut grad = self.zeroed_like();
        let n = inputs.len() as f64;
        let depth = self.layers.len();
        ws.deltas.resize_with(depth, Vec::new);
        for (x, t) in inputs.iter().zip(targets) {
            let y = self.forward_into(x, ws);
            let d_out = 2.0 * (out_scale * y - t) * out_scale / n;
            for k in (0..depth).rev() {
                let l = &self.layers[k];
                let (lower, upper) = ws.deltas.split_at_mut(k + 1);
                let delta = &mut lower[k];
                delta.clear();
                if k + 1 == depth {
                    let a = ws.acts[k + 1][0];
                    delta.push(d_out * l.act.derivative_from_output(a));
                } else {
                    let next_layer = &self.layers[k + 1];
                    let next_delta = &upper[0];
                    for (j, &a) in ws.acts[k + 1].iter().enumerate() {
                        let back: f64 = next_layer.w.iter().zip(next_delta).map(|(row, d)| row[j] * d).sum();
                        delta.push(back * l.act.derivative_from_output(a));
                    }
                }
                let g = &mut grad.layers[k];
                let input = &ws.acts[k];
                for (i, d) in delta.iter().enumerate() {
                    for (gw, a) in g.w[i].iter_mut().zip(input) {
                        *gw += d * a;
                    }
                    g.b[i] += d;
                }
            }
        }
        grad
    }
}
