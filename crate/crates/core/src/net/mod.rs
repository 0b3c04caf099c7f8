//! Small convolutional network engine: convolution, ReLU, max pooling,
//! fully-connected, dropout and softmax layers with exact backpropagation of
//! the mean cross-entropy loss.

mod checkpoint;
pub(crate) mod layers;
mod sgd;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use sgd::Sgd;
pub use tensor::{Real, Tensor4};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::substream;
use layers::ConvGeom;

/// Standard deviation of the default weight initializer.
pub const INIT_STD: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    FullyConnected {
        units: usize,
    },
    Dropout {
        rate: f32,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride: 1,
            pad: 0,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. })
    }
}

/// Shape of one sample at some point of the network: `(channels, height, width)`.
pub type Shape = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// conv 5x5x64 -> relu -> pool 2 -> conv 5x5x64 -> relu -> pool 2 ->
    /// fc 128 -> relu -> dropout 0.5 -> fc `n_classes` -> softmax, on 3x32x32 input.
    pub fn default_for(n_classes: usize) -> Self {
        NetworkSpec {
            input: (3, 32, 32),
            layers: vec![
                LayerSpec::conv(64, 5),
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::conv(64, 5),
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::FullyConnected { units: 128 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::FullyConnected { units: n_classes },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Output shape of every layer, validating that the stack chains and ends
    /// in a softmax directly preceded by a fully-connected layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input;
        ensure!(cur.0 >= 1 && cur.1 >= 1 && cur.2 >= 1, "empty input shape {cur:?}");
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    ensure!(out_channels >= 1 && kernel >= 1 && stride >= 1, "layer {i}: degenerate convolution");
                    ensure!(
                        cur.1 + 2 * pad >= kernel && cur.2 + 2 * pad >= kernel,
                        "layer {i}: kernel {kernel} larger than padded input {cur:?}"
                    );
                    (out_channels, (cur.1 + 2 * pad - kernel) / stride + 1, (cur.2 + 2 * pad - kernel) / stride + 1)
                }
                LayerSpec::MaxPool { size } => {
                    ensure!(size >= 1 && cur.1 >= size && cur.2 >= size, "layer {i}: pool {size} on {cur:?}");
                    (cur.0, cur.1 / size, cur.2 / size)
                }
                LayerSpec::FullyConnected { units } => {
                    ensure!(units >= 1, "layer {i}: zero units");
                    (units, 1, 1)
                }
                LayerSpec::Dropout { rate } => {
                    ensure!((0.0..1.0).contains(&rate), "layer {i}: dropout rate {rate} outside [0, 1)");
                    cur
                }
                LayerSpec::Relu => cur,
                LayerSpec::Softmax => {
                    ensure!(i + 1 == self.layers.len(), "softmax must be the last layer");
                    ensure!(
                        i > 0 && matches!(self.layers[i - 1], LayerSpec::FullyConnected { .. }),
                        "softmax must follow a fully-connected layer"
                    );
                    cur
                }
            };
            out.push(cur);
        }
        ensure!(
            matches!(self.layers.last(), Some(LayerSpec::Softmax)),
            "network must end in softmax"
        );
        Ok(out)
    }

    pub fn n_classes(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let last = shapes.last().expect("validated non-empty");
        Ok(last.0 * last.1 * last.2)
    }

    /// Same network with the final classifier resized to `n_classes` outputs.
    pub fn with_classes(&self, n_classes: usize) -> Self {
        let mut spec = self.clone();
        if let Some(i) = spec.layers.iter().rposition(|l| matches!(l, LayerSpec::FullyConnected { .. })) {
            spec.layers[i] = LayerSpec::FullyConnected { units: n_classes };
        }
        spec
    }

    /// `(weight count, bias count)` for each layer.
    pub fn param_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let input = if i == 0 { self.input } else { shapes[i - 1] };
                match *layer {
                    LayerSpec::Conv { out_channels, kernel, .. } => (out_channels * input.0 * kernel * kernel, out_channels),
                    LayerSpec::FullyConnected { units } => (units * input.0 * input.1 * input.2, units),
                    _ => (0, 0),
                }
            })
            .collect())
    }
}

/// Weights and biases of one layer (both empty for parameter-free layers).
/// Convolution weights are `out x in x k x k`; fully-connected weights are
/// `units x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Parameters<T> {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        Ok(Parameters {
            layers: spec
                .param_sizes()?
                .into_iter()
                .map(|(w, b)| LayerParams {
                    weights: vec![T::zero(); w],
                    bias: vec![T::zero(); b],
                })
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.iter().map(|v| U::of(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Weight initialization scheme; biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightInit {
    /// Every weight from `Normal(0, std^2)`.
    Normal { std: f64 },
    /// `Normal(0, 2 / fan_in)` per layer.
    HeNormal,
}

impl WeightInit {
    fn std_for(&self, fan_in: usize) -> f64 {
        match *self {
            WeightInit::Normal { std } => std,
            WeightInit::HeNormal => (2.0 / fan_in.max(1) as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightInit::Normal { std } if !(std > 0.0 && std.is_finite()) => {
                Err(Error::Config(format!("init std must be positive, got {std}")))
            }
            _ => Ok(()),
        }
    }
}

/// Weights drawn from `Normal(0, std^2)`, biases zero. Layer `i` draws from
/// stream `i` of `rng_seed`.
pub fn init_parameters<T: Real>(spec: &NetworkSpec, std: f64, rng_seed: u64) -> Result<Parameters<T>> {
    init_parameters_with(spec, WeightInit::Normal { std }, rng_seed)
}

pub fn init_parameters_with<T: Real>(spec: &NetworkSpec, init: WeightInit, rng_seed: u64) -> Result<Parameters<T>> {
    init.validate()?;
    let mut params = Parameters::zeros(spec)?;
    for i in 0..params.layers.len() {
        reinit_layer(&mut params, i, init, rng_seed);
    }
    Ok(params)
}

/// Re-draw the weights of one layer (stream `layer` of `rng_seed`) and zero its bias.
pub fn reinit_layer<T: Real>(params: &mut Parameters<T>, layer: usize, init: WeightInit, rng_seed: u64) {
    let l = &mut params.layers[layer];
    let fan_in = l.weights.len() / l.bias.len().max(1);
    let normal = Normal::new(0.0, init.std_for(fan_in)).expect("valid std");
    let mut rng = substream(rng_seed, layer as u64);
    for w in &mut l.weights {
        *w = T::of(normal.sample(&mut rng));
    }
    l.bias.fill(T::zero());
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum LayerCache<T> {
    Conv { cols: Vec<T>, geom: ConvGeom },
    Pool { argmax: Vec<u32>, input_dims: (usize, usize, usize, usize) },
    Fc,
    Relu,
    Dropout { mask: Option<Vec<T>> },
    Softmax,
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
#[derive(Debug)]
pub struct ForwardPass<T> {
    /// `outputs[i]` is the output of layer `i`; the last entry holds the
    /// class probabilities.
    outputs: Vec<Tensor4<T>>,
    input: Tensor4<T>,
    caches: Vec<LayerCache<T>>,
    mode: Mode,
    generation: u64,
}

impl<T: Real> ForwardPass<T> {
    pub fn probs(&self) -> &Tensor4<T> {
        self.outputs.last().expect("network has layers")
    }

    pub fn layer_output(&self, layer: usize) -> &Tensor4<T> {
        &self.outputs[layer]
    }
}

/// A network specification together with its parameters.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    pub params: Parameters<T>,
    generation: u64,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, params: Parameters<T>) -> Result<Self> {
        let shapes = spec.shapes()?;
        let sizes = spec.param_sizes()?;
        ensure!(params.layers.len() == sizes.len(), "parameter count does not match the network");
        for (i, (l, (w, b))) in params.layers.iter().zip(&sizes).enumerate() {
            ensure!(
                l.weights.len() == *w && l.bias.len() == *b,
                "layer {i}: expected {w} weights / {b} biases"
            );
        }
        Ok(Network {
            spec,
            shapes,
            params,
            generation: 0,
        })
    }

    pub fn init(spec: NetworkSpec, std: f64, rng_seed: u64) -> Result<Self> {
        Network::init_with(spec, WeightInit::Normal { std }, rng_seed)
    }

    pub fn init_with(spec: NetworkSpec, init: WeightInit, rng_seed: u64) -> Result<Self> {
        let params = init_parameters_with(&spec, init, rng_seed)?;
        Network::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn n_classes(&self) -> usize {
        let s = self.shapes.last().expect("network has layers");
        s.0 * s.1 * s.2
    }

    /// Counter bumped on every parameter update; forward passes remember it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        self.generation += 1;
        &mut self.params
    }

    pub(crate) fn conv_geom(&self, layer: usize, in_h: usize, in_w: usize) -> ConvGeom {
        let in_c = if layer == 0 { self.spec.input.0 } else { self.shapes[layer - 1].0 };
        match self.spec.layers[layer] {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => ConvGeom {
                in_c,
                in_h,
                in_w,
                out_c: out_channels,
                kh: kernel,
                kw: kernel,
                stride,
                pad,
            },
            _ => unreachable!("not a convolution"),
        }
    }

    /// Run the whole stack. Train mode draws dropout masks from `rng` (inverted
    /// dropout); eval mode is deterministic and ignores `rng`.
    pub fn forward(&self, input: &Tensor4<T>, mode: Mode, rng: &mut impl rand::Rng) -> Result<ForwardPass<T>> {
        let (c, h, w) = self.spec.input;
        ensure!(
            input.c == c && input.h == h && input.w == w && input.n >= 1,
            "input {:?} does not match network input {c}x{h}x{w}",
            input.dims()
        );
        let mut outputs: Vec<Tensor4<T>> = Vec::with_capacity(self.spec.layers.len());
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let p = &self.params.layers[i];
            let (y, cache) = match *layer {
                LayerSpec::Conv { .. } => {
                    let geom = self.conv_geom(i, x.h, x.w);
                    let keep = mode == Mode::Train;
                    let (y, cols) = layers::conv_forward(x, &geom, &p.weights, &p.bias, keep);
                    (y, LayerCache::Conv { cols, geom })
                }
                LayerSpec::Relu => {
                    let mut y = x.clone();
                    layers::relu_inplace(&mut y);
                    (y, LayerCache::Relu)
                }
                LayerSpec::MaxPool { size } => {
                    let (y, argmax) = layers::maxpool_forward(x, size);
                    (
                        y,
                        LayerCache::Pool {
                            argmax,
                            input_dims: x.dims(),
                        },
                    )
                }
                LayerSpec::FullyConnected { units } => (layers::fc_forward(x, &p.weights, &p.bias, units), LayerCache::Fc),
                LayerSpec::Dropout { rate } => {
                    if mode == Mode::Train && rate > 0.0 {
                        let keep = 1.0 - f64::from(rate);
                        let scale = T::of(1.0 / keep);
                        let mask: Vec<T> = (0..x.data.len())
                            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                            .collect();
                        let mut y = x.clone();
                        for (v, m) in y.data.iter_mut().zip(&mask) {
                            *v = *v * *m;
                        }
                        (y, LayerCache::Dropout { mask: Some(mask) })
                    } else {
                        (x.clone(), LayerCache::Dropout { mask: None })
                    }
                }
                LayerSpec::Softmax => (layers::softmax(x), LayerCache::Softmax),
            };
            outputs.push(y);
            caches.push(cache);
        }
        Ok(ForwardPass {
            outputs,
            input: input.clone(),
            caches,
            mode,
            generation: self.generation,
        })
    }

    /// Class probabilities in eval mode.
    pub fn predict_probs(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut unused = substream(0, 0);
        let mut pass = self.forward(input, Mode::Eval, &mut unused)?;
        Ok(pass.outputs.pop().expect("network has layers"))
    }

    /// Gradients of the mean cross-entropy of `pass` with respect to every
    /// parameter. The pass must come from a train-mode forward with the current
    /// parameters.
    pub fn backward(&self, pass: &ForwardPass<T>, labels: &[u32]) -> Result<Parameters<T>> {
        ensure!(pass.mode == Mode::Train, "backward needs a train-mode forward pass");
        ensure!(
            pass.generation == self.generation && pass.outputs.len() == self.spec.layers.len(),
            "stale forward pass: parameters changed since it was computed"
        );
        let probs = pass.probs();
        let n_classes = probs.sample_len();
        ensure!(labels.len() == probs.n, "{} labels for a batch of {}", labels.len(), probs.n);
        ensure!(
            labels.iter().all(|&l| (l as usize) < n_classes),
            "label out of range for {n_classes} classes"
        );

        let mut grads = self.params.zeros_like();
        // Softmax + cross-entropy: d loss / d logits = (p - onehot) / batch.
        let inv_n = T::of(1.0 / probs.n as f64);
        let mut delta = probs.clone();
        for (row, &l) in delta.data.chunks_exact_mut(n_classes).zip(labels) {
            row[l as usize] = row[l as usize] - T::one();
            for v in row.iter_mut() {
                *v = *v * inv_n;
            }
        }

        let last = self.spec.layers.len() - 1;
        for i in (0..last).rev() {
            let want_dx = i > 0;
            let x = if i == 0 { &pass.input } else { &pass.outputs[i - 1] };
            let g = &mut grads.layers[i];
            delta = match (&self.spec.layers[i], &pass.caches[i]) {
                (LayerSpec::Conv { .. }, LayerCache::Conv { cols, geom }) => {
                    match layers::conv_backward(&delta, geom, &self.params.layers[i].weights, cols, &mut g.weights, &mut g.bias, want_dx) {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (LayerSpec::FullyConnected { .. }, LayerCache::Fc) => {
                    match layers::fc_backward(&delta, x, &self.params.layers[i].weights, &mut g.weights, &mut g.bias, want_dx) {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (LayerSpec::Relu, LayerCache::Relu) => {
                    let y = &pass.outputs[i];
                    for (d, &v) in delta.data.iter_mut().zip(&y.data) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    delta
                }
                (LayerSpec::MaxPool { .. }, LayerCache::Pool { argmax, input_dims }) => {
                    layers::maxpool_backward(&delta, argmax, *input_dims)
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (d, m) in delta.data.iter_mut().zip(mask) {
                            *d = *d * *m;
                        }
                    }
                    delta
                }
                _ => return Err(Error::contract(format!("layer {i}: cache does not match layer type"))),
            };
            // input-shaped gradient for the layer below
            delta.n = x.n;
            delta.c = x.c;
            delta.h = x.h;
            delta.w = x.w;
        }
        Ok(grads)
    }
}

/// Mean over the batch of `-ln p[label]`, with probabilities floored at 1e-12.
pub fn cross_entropy_loss<T: Real>(probs: &Tensor4<T>, labels: &[u32]) -> f64 {
    let k = probs.sample_len();
    let total: f64 = probs
        .data
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| -(row[l as usize].as_f64().max(1e-12)).ln())
        .sum();
    total / labels.len() as f64
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(probs: &Tensor4<T>) -> Vec<u32> {
    let k = probs.sample_len();
    probs
        .data
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}
