//! Dense multilayer perceptrons with hand-written reverse-mode gradients.
//!
//! Weights are stored row-major with one row per output unit. Minibatches are
//! row-major [`Matrix`] values with one row per sample. The batched paths run
//! over fixed 64-row chunks (see [`crate::exec`]) and reduce parameter
//! gradients in chunk order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{chunk_ranges, Execution};

/// Negative-side slope of every LeakyReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Rows per chunk in the batched forward/backward passes.
pub const CHUNK_ROWS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFinite { layer: usize },
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu => leaky_relu(z, LEAKY_SLOPE),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z` whose activated value is `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NetError> {
        if data.len() != rows * cols {
            return Err(NetError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NetError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NetError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Concatenates the columns of `self` and `other` row by row.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix, NetError> {
        if self.rows != other.rows {
            return Err(NetError::Shape(format!(
                "cannot join {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copies columns `start..end` into a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    fn rows_slice(&self, range: std::ops::Range<usize>) -> &[f64] {
        &self.data[range.start * self.cols..range.end * self.cols]
    }
}

/// `c ← alpha·a·b + beta·c` for strided operands (`a` is m×k, `b` is k×n).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= span(m, k, rsa, csa));
        assert!(b.len() >= span(k, n, rsb, csb));
    }
    assert!(c.len() >= span(m, n, rsc, 1));
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Output count.
    pub rows: usize,
    /// Input count.
    pub cols: usize,
    /// `rows × cols`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            rows: outputs,
            cols: inputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform weights in ±1/√fan_in, zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Layer {
            rows: outputs,
            cols: inputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Applies the layer to `n` row-major inputs, returning (pre-activations, outputs).
    fn forward_rows(&self, x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut z = Vec::with_capacity(n * self.rows);
        for _ in 0..n {
            z.extend_from_slice(&self.bias);
        }
        // z(n×rows) += x(n×cols) · Wᵀ
        gemm(n, self.cols, self.rows, x, self.cols, 1, &self.weights, 1, self.cols, 1.0, &mut z, self.rows);
        let a = match self.activation {
            Activation::Identity => z.clone(),
            act => z.iter().map(|&v| act.apply(v)).collect(),
        };
        (z, a)
    }
}

/// Per-layer gradients, shaped like [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (dst, src) in self.slices_mut().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn congruent_with(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

/// Activations retained by a forward pass over one chunk of rows.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Pre-activations of layer `l`.
    pub fn pre_activations(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }
}

/// Forward caches for a minibatch, one per fixed-size chunk.
#[derive(Debug, Clone)]
pub struct BatchCache {
    rows: usize,
    chunks: Vec<ForwardCache>,
}

impl BatchCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Shape("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(NetError::Shape(format!("layer {i} storage does not match {}x{}", l.rows, l.cols)));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].rows != pair[1].cols {
                return Err(NetError::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].rows,
                    i + 1,
                    pair[1].cols
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Builds `sizes[0] → … → sizes[last]` with `hidden` on every hidden layer
    /// and `output` on the last one, initialised uniformly in ±1/√fan_in.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::init(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Mlp { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Same layer count, dimensions and activations.
    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols && a.activation == b.activation)
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn forward_rows(&self, x: &[f64], rows: usize) -> ForwardCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for layer in &self.layers {
            let (z, a) = layer.forward_rows(acts.last().unwrap(), rows);
            pre.push(z);
            acts.push(a);
        }
        ForwardCache { rows, acts, pre }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::Shape(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let cache = self.forward_rows(input, 1);
        Ok((cache.output().to_vec(), cache))
    }

    /// Output only, no cache retained.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.forward(input).map(|(y, _)| y)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, BatchCache), NetError> {
        self.forward_batch_with(Execution::default(), x)
    }

    pub fn forward_batch_with(&self, exec: Execution, x: &Matrix) -> Result<(Matrix, BatchCache), NetError> {
        if x.cols() != self.input_dim() {
            return Err(NetError::Shape(format!(
                "batch has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let ranges = chunk_ranges(x.rows(), CHUNK_ROWS);
        let chunks = exec.map(ranges.len(), |c| {
            let r = ranges[c].clone();
            self.forward_rows(x.rows_slice(r.clone()), r.len())
        });
        let mut out = Vec::with_capacity(x.rows() * self.output_dim());
        for c in &chunks {
            out.extend_from_slice(c.output());
        }
        let out = Matrix::from_vec(x.rows(), self.output_dim(), out)?;
        Ok((out, BatchCache { rows: x.rows(), chunks }))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), NetError> {
        let ok = cache.pre.len() == self.layers.len()
            && cache.acts.len() == self.layers.len() + 1
            && cache.acts[0].len() == cache.rows * self.input_dim()
            && cache
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == cache.rows * l.rows);
        if ok {
            Ok(())
        } else {
            Err(NetError::Shape("forward cache does not belong to this network".into()))
        }
    }

    /// Reverse pass for one chunk. `upstream` is ∂L/∂output, row-major.
    fn backward_rows(&self, cache: &ForwardCache, upstream: &[f64], want_params: bool) -> (Option<Grads>, Vec<f64>) {
        let n = cache.rows;
        let mut grads = want_params.then(|| Grads::zeros_like(self));
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                let z = &cache.pre[l];
                let a = &cache.acts[l + 1];
                for ((d, &zv), &av) in delta.iter_mut().zip(z).zip(a) {
                    *d *= layer.activation.derivative(zv, av);
                }
            }
            let x = &cache.acts[l];
            if let Some(g) = grads.as_mut() {
                let lg = &mut g.layers[l];
                // dW(rows×cols) = δᵀ(rows×n) · x(n×cols)
                gemm(layer.rows, n, layer.cols, &delta, 1, layer.rows, x, layer.cols, 1, 0.0, &mut lg.weights, layer.cols);
                for i in 0..n {
                    for (b, d) in lg.bias.iter_mut().zip(&delta[i * layer.rows..(i + 1) * layer.rows]) {
                        *b += d;
                    }
                }
            }
            // δ_prev(n×cols) = δ(n×rows) · W(rows×cols)
            let mut prev = vec![0.0; n * layer.cols];
            gemm(n, layer.rows, layer.cols, &delta, layer.rows, 1, &layer.weights, layer.cols, 1, 0.0, &mut prev, layer.cols);
            delta = prev;
        }
        (grads, delta)
    }

    /// Single-sample reverse pass: returns ∂(upstream·output)/∂θ and ∂/∂input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(Grads, Vec<f64>), NetError> {
        self.check_cache(cache)?;
        if upstream.len() != cache.rows * self.output_dim() {
            return Err(NetError::Shape(format!(
                "upstream has {} values, expected {}",
                upstream.len(),
                cache.rows * self.output_dim()
            )));
        }
        let (g, dx) = self.backward_rows(cache, upstream, true);
        Ok((g.expect("parameter gradients requested"), dx))
    }

    /// Minibatch reverse pass. Parameter gradients are summed over rows (the
    /// caller folds any 1/N into `upstream`); they are skipped when
    /// `want_params` is false. Always returns ∂L/∂input.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        upstream: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Grads>, Matrix), NetError> {
        self.backward_batch_with(Execution::default(), cache, upstream, want_params)
    }

    pub fn backward_batch_with(
        &self,
        exec: Execution,
        cache: &BatchCache,
        upstream: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Grads>, Matrix), NetError> {
        if upstream.rows() != cache.rows || upstream.cols() != self.output_dim() {
            return Err(NetError::Shape(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.rows,
                self.output_dim()
            )));
        }
        for c in &cache.chunks {
            self.check_cache(c)?;
        }
        let ranges = chunk_ranges(cache.rows, CHUNK_ROWS);
        if ranges.len() != cache.chunks.len() {
            return Err(NetError::Shape("batch cache chunking does not match its row count".into()));
        }
        let parts = exec.map(ranges.len(), |c| {
            self.backward_rows(&cache.chunks[c], upstream.rows_slice(ranges[c].clone()), want_params)
        });
        let mut total: Option<Grads> = None;
        let mut dx = Vec::with_capacity(cache.rows * self.input_dim());
        for (g, d) in parts {
            dx.extend_from_slice(&d);
            if let Some(g) = g {
                match total.as_mut() {
                    None => total = Some(g),
                    Some(t) => t.add_assign(&g),
                }
            }
        }
        if want_params && total.is_none() {
            total = Some(Grads::zeros_like(self));
        }
        Ok((total, Matrix::from_vec(cache.rows, self.input_dim(), dx)?))
    }
}

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Grads,
    pub v: Grads,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        AdamState {
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Bias-corrected Adam update of `params` in place.
#[allow(clippy::too_many_arguments)]
pub fn adam_kernel(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, beta1: f64, beta2: f64, eps: f64, lr: f64) {
    let t = step.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step. Non-finite gradients leave everything untouched.
pub fn adam_step(net: &mut Mlp, grads: &Grads, state: &mut AdamState, lr: f64) -> Result<(), NetError> {
    if !grads.congruent_with(net) || !state.m.congruent_with(net) || !state.v.congruent_with(net) {
        return Err(NetError::Shape("gradients or optimizer state do not match the network".into()));
    }
    if let Some(layer) = grads
        .layers
        .iter()
        .position(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
    {
        return Err(NetError::NonFinite { layer });
    }
    state.step += 1;
    let (step, b1, b2, eps) = (state.step, state.beta1, state.beta2, state.eps);
    let params = net.slices_mut();
    let g = grads.slices();
    let m = state.m.slices_mut();
    let v = state.v.slices_mut();
    for (((p, g), m), v) in params.zip(g).zip(m).zip(v) {
        adam_kernel(p, g, m, v, step, b1, b2, eps, lr);
    }
    Ok(())
}

/// `target ← (1 − τ)·target + τ·online`, parameter by parameter.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NetError> {
    if !target.same_shape(online) {
        return Err(NetError::Shape("target and online networks differ in shape".into()));
    }
    for (t, o) in target.slices_mut().zip(online.slices()) {
        for (t, &o) in t.iter_mut().zip(o) {
            // Written as a correction so equal parameters stay bitwise equal.
            *t = if tau == 1.0 { o } else { *t + tau * (o - *t) };
        }
    }
    Ok(())
}

/// Weights used to reduce a network's outputs to the scalar that
/// [`grad_check`] differentiates.
pub fn grad_check_weights(outputs: usize) -> Vec<f64> {
    (0..outputs).map(|j| 1.0 + 0.25 * j as f64).collect()
}

/// Compares `analytic` against central differences of
/// `L(θ) = Σ_j w_j·y_j(θ)` (weights from [`grad_check_weights`]) over the
/// parameters listed in `which` (`None` checks every parameter). Returns the
/// worst relative error `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check_against(
    net: &Mlp,
    input: &[f64],
    h: f64,
    analytic: &Grads,
    which: Option<&[(usize, usize)]>,
) -> Result<f64, NetError> {
    let w = grad_check_weights(net.output_dim());
    let loss = |n: &Mlp| -> Result<f64, NetError> {
        Ok(n.predict(input)?.iter().zip(&w).map(|(y, w)| y * w).sum())
    };
    let all: Vec<(usize, usize)>;
    let which = match which {
        Some(w) => w,
        None => {
            all = (0..net.layers.len() * 2)
                .flat_map(|s| {
                    let layer = &net.layers[s / 2];
                    let len = if s % 2 == 0 { layer.weights.len() } else { layer.bias.len() };
                    (0..len).map(move |i| (s, i))
                })
                .collect();
            &all
        }
    };
    let mut probe = net.clone();
    let mut worst = 0.0_f64;
    for &(slot, idx) in which {
        let a = {
            let lg = &analytic.layers[slot / 2];
            if slot % 2 == 0 { lg.weights[idx] } else { lg.bias[idx] }
        };
        let param = |n: &mut Mlp| -> *mut f64 {
            let l = &mut n.layers[slot / 2];
            if slot % 2 == 0 { &mut l.weights[idx] } else { &mut l.bias[idx] }
        };
        let p = param(&mut probe);
        // SAFETY: `p` points into `probe`, which is not moved or resized while it is used.
        let orig = unsafe { *p };
        unsafe { *p = orig + h };
        let up = loss(&probe)?;
        unsafe { *p = orig - h };
        let down = loss(&probe)?;
        unsafe { *p = orig };
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Worst relative error between [`Mlp::backward`] and central differences.
pub fn grad_check(net: &Mlp, input: &[f64], h: f64) -> Result<f64, NetError> {
    let (_, cache) = net.forward(input)?;
    let (g, _) = net.backward(&cache, &grad_check_weights(net.output_dim()))?;
    grad_check_against(net, input, h, &g, None)
}

/// Like [`grad_check`] but only over `count` parameters spread evenly across
/// every weight and bias slot.
pub fn grad_check_sampled(net: &Mlp, input: &[f64], h: f64, count: usize) -> Result<f64, NetError> {
    let (_, cache) = net.forward(input)?;
    let (g, _) = net.backward(&cache, &grad_check_weights(net.output_dim()))?;
    let slots = net.layers.len() * 2;
    let per_slot = (count / slots).max(1);
    let mut which = Vec::new();
    for s in 0..slots {
        let layer = &net.layers[s / 2];
        let len = if s % 2 == 0 { layer.weights.len() } else { layer.bias.len() };
        let stride = (len / per_slot).max(1);
        which.extend((0..len).step_by(stride).take(per_slot).map(|i| (s, i)));
    }
    grad_check_against(net, input, h, &g, Some(&which))
}

/// Smallest |pre-activation| over the hidden LeakyReLU units for `input`;
/// finite differences are only meaningful away from the kink at zero.
pub fn min_abs_kink_distance(net: &Mlp, input: &[f64]) -> Result<f64, NetError> {
    let (_, cache) = net.forward(input)?;
    Ok(net
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.activation == Activation::LeakyRelu)
        .flat_map(|(i, _)| cache.pre[i].iter().map(|z| z.abs()))
        .fold(f64::INFINITY, f64::min))
}
