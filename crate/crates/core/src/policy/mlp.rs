//! Fixed-topology multilayer perceptron over a flat parameter vector.
//!
//! Layer `l` stores a row-major weight block `W_l` (`out x in`) followed by
//! its bias `b_l`. Hidden layers apply the activation, the output layer is
//! linear.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
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

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths from input to output plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Topology {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self { sizes, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("topology has at least two layers")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "invalid layer sizes {:?}",
                self.sizes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Evaluation helper bound to one topology. Holds no parameters.
#[derive(Debug, Clone)]
pub struct Mlp {
    topology: Topology,
    spans: Vec<LayerSpan>,
    param_count: usize,
}

/// Per-layer activations of the most recent forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(topology: Topology) -> Self {
        let mut spans = Vec::with_capacity(topology.num_layers());
        let mut offset = 0;
        for w in topology.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            spans.push(LayerSpan {
                w: offset,
                b: offset + fan_in * fan_out,
                fan_in,
                fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Self {
            topology,
            spans,
            param_count: offset,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn cache(&self) -> Cache {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.topology.sizes.len());
        for &s in &self.topology.sizes {
            acts.push(vec![0.0; s]);
        }
        Cache { acts }
    }

    /// Orthogonal initialization with per-layer gains and zero biases.
    ///
    /// `output_gain` is applied to the last layer, `hidden_gain` to the rest.
    pub fn init_orthogonal<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        hidden_gain: f64,
        output_gain: f64,
    ) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_count];
        let last = self.spans.len() - 1;
        for (l, span) in self.spans.iter().enumerate() {
            let gain = if l == last { output_gain } else { hidden_gain };
            let q = orthogonal_matrix(rng, span.fan_out, span.fan_in);
            for r in 0..span.fan_out {
                for c in 0..span.fan_in {
                    theta[span.w + r * span.fan_in + c] = gain * q[(r, c)];
                }
            }
        }
        theta
    }

    /// Runs the network; the output is available through [`Cache::output`].
    pub fn forward(&self, theta: &[f64], input: &[f64], cache: &mut Cache) {
        debug_assert_eq!(theta.len(), self.param_count);
        debug_assert_eq!(input.len(), self.topology.input_dim());
        if cache.acts.len() != self.topology.sizes.len() {
            *cache = self.cache();
        }
        cache.acts[0].copy_from_slice(input);
        let last = self.spans.len() - 1;
        for (l, span) in self.spans.iter().enumerate() {
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let x = &before[l];
            let y = &mut after[0];
            let w = &theta[span.w..span.b];
            let b = &theta[span.b..span.b + span.fan_out];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * span.fan_in..(o + 1) * span.fan_in];
                let pre = b[o] + dot(row, x);
                *yo = if l == last {
                    pre
                } else {
                    self.topology.activation.apply(pre)
                };
            }
        }
    }

    /// Accumulates `(d output)^T grad_out` into `grad_theta`, using the
    /// activations left in `cache` by the last [`forward`](Self::forward).
    pub fn backward(&self, theta: &[f64], cache: &Cache, grad_out: &[f64], grad_theta: &mut [f64]) {
        let last = self.spans.len() - 1;
        let acts = &cache.acts;
        let mut scratch = grad_out.to_vec();
        let mut scratch_next = Vec::new();
        for l in (0..self.spans.len()).rev() {
            let span = self.spans[l];
            let x = &acts[l];
            let y = &acts[l + 1];
            // scratch holds dL/dy for this layer; turn it into dL/dpre
            if l != last {
                for (d, &yo) in scratch.iter_mut().zip(y) {
                    *d *= self.topology.activation.derivative_from_output(yo);
                }
            }
            for o in 0..span.fan_out {
                let d = scratch[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad_theta[span.w + o * span.fan_in..span.w + (o + 1) * span.fan_in];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad_theta[span.b + o] += d;
            }
            if l > 0 {
                scratch_next.clear();
                scratch_next.resize(span.fan_in, 0.0);
                let w = &theta[span.w..span.b];
                for o in 0..span.fan_out {
                    let d = scratch[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * span.fan_in..(o + 1) * span.fan_in];
                    for (acc, &wi) in scratch_next.iter_mut().zip(row) {
                        *acc += d * wi;
                    }
                }
                std::mem::swap(&mut scratch, &mut scratch_next);
            }
        }
    }

    /// Forward-mode directional derivative of the output along parameter
    /// direction `v`, at the activations stored in `cache`.
    pub fn jvp(&self, theta: &[f64], cache: &Cache, v: &[f64], out: &mut Vec<f64>) {
        let last = self.spans.len() - 1;
        let mut tangent: Vec<f64> = vec![0.0; self.topology.input_dim()];
        let mut next = Vec::new();
        for (l, span) in self.spans.iter().enumerate() {
            let x = &cache.acts[l];
            let y = &cache.acts[l + 1];
            let w = &theta[span.w..span.b];
            let vw = &v[span.w..span.b];
            let vb = &v[span.b..span.b + span.fan_out];
            next.clear();
            next.resize(span.fan_out, 0.0);
            for o in 0..span.fan_out {
                let lo = o * span.fan_in;
                let hi = lo + span.fan_in;
                let mut d = vb[o] + dot(&vw[lo..hi], x);
                if l > 0 {
                    d += dot(&w[lo..hi], &tangent);
                }
                next[o] = if l == last {
                    d
                } else {
                    d * self.topology.activation.derivative_from_output(y[o])
                };
            }
            std::mem::swap(&mut tangent, &mut next);
        }
        out.clear();
        out.extend_from_slice(&tangent);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A `rows x cols` matrix with orthonormal rows or columns (whichever is
/// shorter), from the QR factorization of a Gaussian matrix.
fn orthogonal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let (n, m) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(n, m, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign correction makes the distribution uniform over orthogonal matrices
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}
