//! Dense feedforward scorer: ReLU hidden layers, identity output, exact
//! backpropagation and Adam.
//!
//! Weights are stored row-major with shape `(out, in)`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_HEADER: &str = "sdrisk-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hidden widths used for the classifier: 128, 32 and 8 ReLU units.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 32, 8];

pub fn default_layer_dims(input_dim: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&DEFAULT_HIDDEN);
    dims.push(1);
    dims
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-parameter buffers with the same shapes as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`Mlp::forward_cached`] for one input.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k]` the output of layer `k`.
    activations: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers applied to the last hidden layer.
    dropout_mask: Option<Vec<f64>>,
}

impl ForwardCache {
    pub fn score(&self) -> f64 {
        self.activations.last().expect("cache has an output")[0]
    }
}

/// Inverted dropout on the last hidden layer during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!("layer dims must be positive: {layer_dims:?}")));
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "the scorer emits one value; last dim must be 1, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. Weights are drawn layer by layer
    /// in row-major order from `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = Rng::new(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-limit, limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_dims(&layer_dims)?;
        let n = layer_dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} layers, got {} weight and {} bias arrays",
                weights.len(),
                biases.len()
            )));
        }
        for (k, pair) in layer_dims.windows(2).enumerate() {
            if weights[k].len() != pair[0] * pair[1] || biases[k].len() != pair[1] {
                return Err(Error::Shape(format!(
                    "layer {k}: expected {}x{} weights and {} biases",
                    pair[1], pair[0], pair[1]
                )));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Mutable access to parameter `index` in [`Mlp::params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                return &mut w[index];
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Score `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let last = self.num_layers() - 1;
        for k in 0..self.num_layers() {
            let mut next = affine(&self.weights[k], &self.biases[k], &current);
            if k != last {
                relu_in_place(&mut next);
            }
            current = next;
        }
        Ok(current[0])
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, x: &[f64], dropout: Option<Dropout<'_>>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(x.to_vec());
        let mut dropout_mask = None;
        let mut dropout = dropout;
        for k in 0..self.num_layers() {
            let mut next = affine(&self.weights[k], &self.biases[k], &activations[k]);
            if k != last {
                relu_in_place(&mut next);
                if k + 1 == last {
                    if let Some(d) = dropout.take() {
                        let mask = dropout_mask_for(next.len(), d.rate, d.rng);
                        for (a, m) in next.iter_mut().zip(&mask) {
                            *a *= m;
                        }
                        dropout_mask = Some(mask);
                    }
                }
            }
            activations.push(next);
        }
        Ok(ForwardCache {
            activations,
            dropout_mask,
        })
    }

    /// Accumulates `upstream · ∂f(x)/∂θ` into `grads`.
    ///
    /// A ReLU unit with zero output passes no gradient, including units whose
    /// pre-activation is exactly zero.
    pub fn backward(&self, cache: &ForwardCache, upstream: f64, grads: &mut Gradients) -> Result<()> {
        if cache.activations.len() != self.num_layers() + 1
            || cache
                .activations
                .iter()
                .zip(&self.layer_dims)
                .any(|(a, &d)| a.len() != d)
        {
            return Err(Error::State(
                "forward cache does not belong to this network".into(),
            ));
        }
        grads.check_shape(self)?;
        let last = self.num_layers() - 1;
        let mut delta = vec![upstream];
        for k in (0..self.num_layers()).rev() {
            let input = &cache.activations[k];
            let in_dim = input.len();
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if k == 0 {
                break;
            }
            let w = &self.weights[k];
            let mut prev = vec![0.0; in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * in_dim..(o + 1) * in_dim];
                for (p, &wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            // `input` is the post-ReLU (and post-dropout) output of layer k-1.
            let mask = if k == last { cache.dropout_mask.as_deref() } else { None };
            for (i, p) in prev.iter_mut().enumerate() {
                if input[i] <= 0.0 {
                    *p = 0.0;
                } else if let Some(m) = mask {
                    *p *= m[i];
                }
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Text checkpoint: a versioned header, the layer dims, then one line per
    /// weight and bias array. Values use shortest round-trip formatting, so a
    /// reload is bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_HEADER} {CHECKPOINT_VERSION}");
        let dims: Vec<String> = self.layer_dims.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "layer_dims {}", dims.join(" "));
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let _ = writeln!(out, "weight {k} {}", join_floats(w));
            let _ = writeln!(out, "bias {k} {}", join_floats(b));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |row: usize, message: String| Error::Parse { row: row + 1, message };

        let (row, header) = lines.next().ok_or_else(|| bad(0, "empty checkpoint".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad(row, format!("expected `{CHECKPOINT_HEADER}` header")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(row, "missing format version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(row, format!("unsupported checkpoint version {version}")));
        }

        let (row, dims_line) = lines.next().ok_or_else(|| bad(row, "missing layer_dims".into()))?;
        let mut parts = dims_line.split_whitespace();
        if parts.next() != Some("layer_dims") {
            return Err(bad(row, "expected `layer_dims`".into()));
        }
        let layer_dims = parts
            .map(|p| p.parse::<usize>().map_err(|e| bad(row, e.to_string())))
            .collect::<Result<Vec<_>>>()?;

        let n = layer_dims.len().saturating_sub(1);
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for k in 0..n {
            for (tag, dest) in [("weight", &mut weights), ("bias", &mut biases)] {
                let (row, line) = lines
                    .next()
                    .ok_or_else(|| bad(row, format!("missing {tag} {k}")))?;
                let mut parts = line.split_whitespace();
                if parts.next() != Some(tag) || parts.next() != Some(&k.to_string()) {
                    return Err(bad(row, format!("expected `{tag} {k}`")));
                }
                let values = parts
                    .map(|p| p.parse::<f64>().map_err(|e| bad(row, e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                dest.push(values);
            }
        }
        if let Some((row, _)) = lines.next() {
            return Err(bad(row, "trailing content".into()));
        }
        Self::from_parts(layer_dims, weights, biases)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

fn join_floats(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    parts.join(" ")
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let in_dim = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn relu_in_place(v: &mut [f64]) {
    for a in v {
        if *a < 0.0 {
            *a = 0.0;
        }
    }
}

fn dropout_mask_for(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl Gradients {
    pub fn zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for g in v {
                *g *= factor;
            }
        }
    }

    /// Flattened in [`Mlp::params`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn check_shape(&self, mlp: &Mlp) -> Result<()> {
        let ok = self.weights.len() == mlp.weights.len()
            && self.biases.len() == mlp.biases.len()
            && self.weights.iter().zip(&mlp.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&mlp.biases).all(|(a, b)| a.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradient buffers do not match the network".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps_adam.is_finite() && self.eps_adam > 0.0) {
            return Err(Error::Config("eps_adam must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub fn new(mlp: &Mlp) -> Self {
        Self {
            m: mlp.zero_gradients(),
            v: mlp.zero_gradients(),
            t: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay, when non-zero, is
/// added to the gradient as an L2 term.
pub fn adam_step(
    mlp: &mut Mlp,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    grads.check_shape(mlp)?;
    state.m.check_shape(mlp)?;
    state.v.check_shape(mlp)?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let params = mlp.weights.iter_mut().chain(mlp.biases.iter_mut());
    let gs = grads.weights.iter().chain(&grads.biases);
    let ms = state.m.weights.iter_mut().chain(state.m.biases.iter_mut());
    let vs = state.v.weights.iter_mut().chain(state.v.biases.iter_mut());
    for (((p, g), m), v) in params.zip(gs).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let grad = g[i] + config.weight_decay * p[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad * grad;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps_adam);
        }
    }
    Ok(())
}
