/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Multilayer perceptrons with reverse-mode gradients and SGD.
//!
//! Weights are stored row-major, one `out x in` matrix per layer. Batches are
//! `batch x width` row-major buffers; the dense products go through
//! `matrixmultiply`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }

    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
        }
    }

    // derivative expressed through the activation output
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Parameter-shaped buffer, used for gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }
}

/// Activations of every layer for one batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input layer")
    }
}

// c[m x n] = a[m x k] * b[k x n] + beta * c with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents match (m, k, n) and the given
    // strides; `c` is a distinct, contiguous row-major m x n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// ReLU hidden layers and the given output activation, He-uniform
    /// initialized (Glorot-uniform for the output layer), zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "bad layer sizes {layer_sizes:?}"
            )));
        }
        let layers = layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        let mut activations = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let last = l + 1 == layers;
            let bound = if last {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            weights.push((0..fan_in * fan_out).map(|_| dist.sample(rng)).collect());
            biases.push(vec![0.0; fan_out]);
            activations.push(if last { output } else { Activation::Relu });
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activations,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parameters(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let layers = layer_sizes.len().saturating_sub(1);
        if layers == 0
            || activations.len() != layers
            || weights.len() != layers
            || biases.len() != layers
        {
            return Err(Error::InvalidArgument("layer count mismatch".into()));
        }
        for l in 0..layers {
            if weights[l].len() != layer_sizes[l] * layer_sizes[l + 1] {
                return Err(Error::InvalidArgument(format!(
                    "weight shape mismatch in layer {l}"
                )));
            }
            if biases[l].len() != layer_sizes[l + 1] {
                return Err(Error::InvalidArgument(format!(
                    "bias shape mismatch in layer {l}"
                )));
            }
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let net = Mlp {
            layer_sizes,
            activations,
            weights,
            biases,
        };
        if !net.parameters().all(|p| p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn num_parameters(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Parameters in storage order: per layer, weights then biases.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Trace> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::dim(batch * self.input_dim(), input.len()));
        }
        let mut activations = Vec::with_capacity(self.layer_sizes.len());
        activations.push(input.to_vec());
        for l in 0..self.weights.len() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut out = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                out.extend_from_slice(&self.biases[l]);
            }
            // Z = X W^T + b
            gemm(
                batch,
                fan_in,
                fan_out,
                &activations[l],
                fan_in as isize,
                1,
                &self.weights[l],
                1,
                fan_in as isize,
                1.0,
                &mut out,
            );
            self.activations[l].apply(&mut out);
            activations.push(out);
        }
        Ok(Trace { batch, activations })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_batch(x, 1)?;
        Ok(trace.activations.pop().expect("output layer"))
    }

    /// Accumulates parameter gradients of `sum(upstream . output)` into
    /// `grads` and returns the gradient with respect to the batch input.
    pub fn backward_batch(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        self.backward_impl(trace, upstream, Some(grads))
    }

    /// Gradient with respect to the batch input only; parameter gradients are skipped.
    pub fn input_gradient_batch(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backward_impl(trace, upstream, None)
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        let batch = trace.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::dim(batch * self.output_dim(), upstream.len()));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.weights.len()).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let act = self.activations[l];
            for (d, a) in delta.iter_mut().zip(&trace.activations[l + 1]) {
                *d *= act.derivative_from_output(*a);
            }
            if let Some(grads) = grads.as_deref_mut() {
                // dW += dZ^T X
                gemm(
                    fan_out,
                    batch,
                    fan_in,
                    &delta,
                    1,
                    fan_out as isize,
                    &trace.activations[l],
                    fan_in as isize,
                    1,
                    1.0,
                    &mut grads.weights[l],
                );
                for row in delta.chunks_exact(fan_out) {
                    for (g, d) in grads.biases[l].iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            // dX = dZ W
            let mut next = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                &delta,
                fan_out as isize,
                1,
                &self.weights[l],
                fan_in as isize,
                1,
                0.0,
                &mut next,
            );
            delta = next;
        }
        Ok(delta)
    }

    /// Gradients of `upstream . forward(x)` for a single input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let trace = self.forward_batch(x, 1)?;
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_batch(&trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    const MAGIC: &'static [u8; 6] = b"MSMLP1";

    /// Binary model format: magic `MSMLP1`, layer count (u64), layer sizes
    /// (u64 each), one activation code byte per weight layer, then per layer
    /// the row-major weights followed by the biases as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(6 + 8 * (1 + self.layer_sizes.len() + self.num_parameters()));
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.layer_sizes.len() as u64).to_le_bytes());
        for s in &self.layer_sizes {
            out.extend_from_slice(&(*s as u64).to_le_bytes());
        }
        out.extend(self.activations.iter().map(|a| a.code()));
        for p in self.parameters() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format("model stream truncated".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(6)? != Self::MAGIC {
            return Err(Error::Format("bad model header".into()));
        }
        let read_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let count = read_u64(take(8)?);
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let s = read_u64(take(8)?);
            if s == 0 || s > 1 << 20 {
                return Err(Error::Format(format!("implausible layer size {s}")));
            }
            sizes.push(s as usize);
        }
        let layers = sizes.len() - 1;
        let activations = take(layers)?
            .iter()
            .map(|c| {
                Activation::from_code(*c)
                    .ok_or_else(|| Error::Format(format!("unknown activation {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        for l in 0..layers {
            weights.push(read_f64s(sizes[l] * sizes[l + 1])?);
            biases.push(read_f64s(sizes[l + 1])?);
        }
        if !cur.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in model stream",
                cur.len()
            )));
        }
        Mlp::from_parameters(sizes, activations, weights, biases)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for SgdOptions {
    fn default() -> Self {
        SgdOptions {
            learning_rate: 1e-3,
            momentum: 0.9,
        }
    }
}

/// SGD with heavy-ball momentum: `v <- m v + g`, `theta <- theta - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    opts: SgdOptions,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(net: &Mlp, opts: SgdOptions) -> Result<Self> {
        if !(opts.learning_rate >= 0.0 && opts.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&opts.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        Ok(Sgd {
            opts,
            velocity: Gradients::zeros_like(net),
        })
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        let m = self.opts.momentum;
        let lr = self.opts.learning_rate;
        for ((p, v), g) in net
            .parameters_mut()
            .zip(self.velocity.iter_mut())
            .zip(grads.iter())
        {
            *v = m * *v + g;
            *p -= lr * *v;
        }
    }
}
