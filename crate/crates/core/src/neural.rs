//! Fully connected network with ReLU hidden layers, a sigmoid output layer
//! and inverted dropout on hidden activations, plus exact backpropagation
//! and Adam.
//!
//! Everything works on row-major batches: one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Layer widths (input first, output last) and hidden-layer dropout rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    dropout_rate: f64,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("architecture", "needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("architecture", "layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid("dropout_rate", format!("must be in [0, 1), got {dropout_rate}")));
        }
        Ok(MlpArchitecture { layer_sizes, dropout_rate })
    }

    /// `input -> hidden... -> output`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, dropout_rate: f64) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, dropout_rate)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.dropout_rate
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// One affine map; `weights` is `fan_out × fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Network parameters. Also used to hold gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        let layers = arch
            .layer_sizes
            .windows(2)
            .map(|w| Layer { weights: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { weights: Array2::zeros(l.weights.raw_dim()), bias: Array1::zeros(l.bias.len()) })
            .collect();
        MlpParams { layers }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights row-major then bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    pub fn matches(&self, arch: &MlpArchitecture) -> bool {
        self.layers.len() == arch.n_layers()
            && self
                .layers
                .iter()
                .zip(arch.layer_sizes.windows(2))
                .all(|(l, w)| l.weights.dim() == (w[1], w[0]) && l.bias.len() == w[1])
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|x| x.is_finite())
    }
}

/// Zero-mean Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
pub fn init_params(arch: &MlpArchitecture, rng: &mut Rng) -> MlpParams {
    let mut params = MlpParams::zeros(arch);
    for layer in &mut params.layers {
        let scale = 1.0 / (layer.weights.ncols() as f64).sqrt();
        layer.weights.iter_mut().for_each(|w| *w = scale * rng.sample::<f64, _>(StandardNormal));
    }
    params
}

/// Logistic function evaluated without overflow, kept strictly inside (0, 1).
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// How hidden-layer dropout is applied in a forward pass.
pub enum Mode<'a> {
    /// No dropout; deterministic.
    Eval,
    /// Fresh inverted-dropout masks drawn from `rng`.
    Train { dropout_rate: f64, rng: &'a mut Rng },
    /// Reuse previously drawn masks (one per hidden layer, already rescaled).
    Masked(&'a [Array2<f64>]),
}

/// Intermediate values of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch itself, then hidden activations after dropout).
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Array2<f64>>,
    /// Rescaled keep masks per hidden layer; empty when no dropout was applied.
    masks: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn masks(&self) -> &[Array2<f64>] {
        &self.masks
    }

    pub fn hidden_activations(&self) -> &[Array2<f64>] {
        &self.inputs[1..]
    }
}

fn affine(x: &ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

fn draw_mask(rows: usize, cols: usize, keep: f64, rng: &mut Rng) -> Array2<f64> {
    let scale = 1.0 / keep;
    // A unit survives when a uniform u32 falls below keep * 2^32.
    let threshold = (keep * 4_294_967_296.0) as u64;
    let mut bits = vec![0u32; rows * cols];
    rng.fill(&mut bits[..]);
    let data = bits.into_iter().map(|b| if u64::from(b) < threshold { scale } else { 0.0 }).collect();
    Array2::from_shape_vec((rows, cols), data).expect("rows * cols values")
}

/// Runs the network on a batch (one sample per row). Outputs are in (0, 1).
pub fn forward(params: &MlpParams, input: ArrayView2<f64>, mut mode: Mode<'_>) -> Result<ForwardCache> {
    let fan_in = params.layers[0].weights.ncols();
    if input.ncols() != fan_in {
        return Err(Error::DimensionMismatch { expected: fan_in, got: input.ncols() });
    }
    let n_hidden = params.layers.len() - 1;
    match &mode {
        Mode::Masked(masks) if masks.len() != n_hidden => {
            return Err(Error::DimensionMismatch { expected: n_hidden, got: masks.len() });
        }
        Mode::Train { dropout_rate, .. } if !(0.0..1.0).contains(dropout_rate) => {
            return Err(Error::invalid("dropout_rate", format!("must be in [0, 1), got {dropout_rate}")));
        }
        _ => {}
    }
    let rows = input.nrows();
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(n_hidden);
    let mut masks = Vec::new();
    inputs.push(input.to_owned());
    for (l, layer) in params.layers[..n_hidden].iter().enumerate() {
        let z = affine(&inputs[l].view(), layer);
        let mut a = z.mapv(|v| v.max(0.0));
        let mask = match &mut mode {
            Mode::Eval => None,
            Mode::Train { dropout_rate, .. } if *dropout_rate == 0.0 => None,
            Mode::Train { dropout_rate, rng } => Some(draw_mask(rows, z.ncols(), 1.0 - *dropout_rate, rng)),
            Mode::Masked(m) => {
                if m[l].dim() != z.dim() {
                    return Err(Error::DimensionMismatch { expected: z.len(), got: m[l].len() });
                }
                Some(m[l].clone())
            }
        };
        if let Some(mask) = mask {
            a *= &mask;
            masks.push(mask);
        }
        pre.push(z);
        inputs.push(a);
    }
    let output = affine(&inputs[n_hidden].view(), &params.layers[n_hidden]).mapv(sigmoid);
    Ok(ForwardCache { inputs, pre, masks, output })
}

/// Training-mode forward pass with inverted dropout on every hidden activation.
pub fn forward_train(
    params: &MlpParams,
    input: ArrayView2<f64>,
    dropout_rate: f64,
    rng: &mut Rng,
) -> Result<ForwardCache> {
    forward(params, input, Mode::Train { dropout_rate, rng })
}

/// Gradients of `sum(output_grad ⊙ output)` with respect to every parameter.
pub fn backward(params: &MlpParams, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<MlpParams> {
    if output_grad.dim() != cache.output.dim() {
        return Err(Error::DimensionMismatch { expected: cache.output.len(), got: output_grad.len() });
    }
    let mut delta = output_grad.to_owned();
    Zip::from(&mut delta).and(&cache.output).for_each(|d, &y| *d *= y * (1.0 - y));
    backward_from_logits(params, cache, delta)
}

/// Same as [`backward`] but seeded with the gradient at the output
/// pre-activations (for losses whose logit gradient is known in closed form).
pub fn backward_from_logits(params: &MlpParams, cache: &ForwardCache, logit_grad: Array2<f64>) -> Result<MlpParams> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::DimensionMismatch { expected: params.layers.len(), got: cache.inputs.len() });
    }
    if logit_grad.dim() != cache.output.dim() {
        return Err(Error::DimensionMismatch { expected: cache.output.len(), got: logit_grad.len() });
    }
    let mut grads = params.zeros_like();
    let mut delta = logit_grad;
    for l in (0..params.layers.len()).rev() {
        let input = &cache.inputs[l];
        let g = &mut grads.layers[l];
        g.weights = delta.t().dot(input);
        g.bias = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut upstream = delta.dot(&params.layers[l].weights);
        let z = &cache.pre[l - 1];
        if cache.masks.is_empty() {
            Zip::from(&mut upstream).and(z).for_each(|u, &z| {
                if z <= 0.0 {
                    *u = 0.0;
                }
            });
        } else {
            Zip::from(&mut upstream)
                .and(z)
                .and(&cache.masks[l - 1])
                .for_each(|u, &z, &m| *u = if z > 0.0 { *u * m } else { 0.0 });
        }
        delta = upstream;
    }
    Ok(grads)
}

/// Whether a step climbs or descends the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: MlpParams,
    second: MlpParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &MlpParams {
        &self.second
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamState,
    learning_rate: f64,
    direction: Direction,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(Error::invalid("gradients", "shape does not match parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::Diverged {
            step: state.step as usize,
            reason: "non-finite gradient entry".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let sign = match direction {
        Direction::Ascent => 1.0,
        Direction::Descent => -1.0,
    };
    let moments = state.first.values_mut().zip(state.second.values_mut());
    for ((p, &g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p += sign * learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], epsilon: f64) -> Vec<f64> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + epsilon;
            let plus = f(&probe);
            probe[i] = x[i] - epsilon;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

/// Central differences of a scalar function of the network parameters.
pub fn finite_diff_grad(f: impl Fn(&MlpParams) -> f64, params: &MlpParams, epsilon: f64) -> MlpParams {
    let mut probe = params.clone();
    let flat = finite_diff(
        |x| {
            let mut p = probe.clone();
            p.values_mut().zip(x).for_each(|(dst, &src)| *dst = src);
            f(&p)
        },
        &params.to_flat(),
        epsilon,
    );
    probe.values_mut().zip(flat).for_each(|(dst, src)| *dst = src);
    probe
}

/// Per-coordinate affine input normalization, frozen after fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Standardizer { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    /// Fits mean and standard deviation per column. Constant columns get unit scale.
    pub fn fit<'a>(width: usize, rows: impl Iterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch { expected: width, got: row.len() });
            }
            n += 1;
            for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                *s += x;
                *q += x * x;
            }
        }
        if n == 0 {
            return Err(Error::Empty("standardization data"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-24 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, raw: &[f64], out: &mut [f64]) {
        for (((o, &x), m), s) in out.iter_mut().zip(raw).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }
}
