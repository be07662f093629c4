//! The learnable score network: a feed-forward residual MLP mapping a
//! normalized frame (3N inputs) to an N×N score matrix in (0,1), plus
//! exact backpropagation through the network and the Sinkhorn relaxation.
//!
//! Architecture: one dense layer up to `hidden_width`, then
//! `n_residual_blocks` blocks of `layers_per_block` dense layers with
//! Leaky-ReLU activations and an identity skip across each block, then a
//! dense layer down to N² with an elementwise sigmoid.

pub mod checkpoint;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assign;
use crate::error::{Error, Result};
use crate::sinkhorn::{self, SinkhornConfig};
use crate::trajlabel;
use crate::types::{LabelledFrameResult, MarkerFrame, Permutation, SquareMatrix};

pub use checkpoint::{ModelCheckpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use train::{train, Dataset, EpochRecord, TrainConfig, TrainItem};

/// Floor for score entries inside the loss logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_markers: usize,
    pub hidden_width: usize,
    pub n_residual_blocks: usize,
    pub layers_per_block: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl NetworkConfig {
    /// Defaults with the stated marker count and seed: width 1024, three
    /// residual blocks of three layers, Leaky-ReLU slope 0.01.
    pub fn new(n_markers: usize, seed: u64) -> Self {
        NetworkConfig {
            n_markers,
            hidden_width: 1024,
            n_residual_blocks: 3,
            layers_per_block: 3,
            leaky_slope: 0.01,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_markers == 0 {
            return Err(Error::InvalidArgument("n_markers must be at least 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::InvalidArgument("hidden_width must be at least 1".into()));
        }
        if self.layers_per_block == 0 {
            return Err(Error::InvalidArgument("layers_per_block must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidArgument(format!(
                "leaky_slope must lie in [0,1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        3 * self.n_markers
    }

    pub fn output_dim(&self) -> usize {
        self.n_markers * self.n_markers
    }
}

/// One dense layer. Weights are row-major `[in_dim][out_dim]` so the
/// forward pass streams rows of the weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], biases: vec![0.0; out_dim] }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.biases.clone();
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }
}

/// Network weights plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<DenseLayer>,
}

/// Human-readable name of the dense layer at `index` in forward order.
fn layer_name(config: &NetworkConfig, index: usize) -> String {
    if index == 0 {
        return "input".into();
    }
    let body = index - 1;
    if body < config.n_residual_blocks * config.layers_per_block {
        format!("block{}.layer{}", body / config.layers_per_block, body % config.layers_per_block)
    } else {
        "output".into()
    }
}

/// Dense layer shapes implied by a config, in forward order.
fn layer_dims(config: &NetworkConfig) -> Vec<(usize, usize)> {
    let h = config.hidden_width;
    let mut dims = vec![(config.input_dim(), h)];
    for _ in 0..config.n_residual_blocks * config.layers_per_block {
        dims.push((h, h));
    }
    dims.push((h, config.output_dim()));
    dims
}

/// Activations recorded during a forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// The vector fed into each dense layer.
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each dense layer.
    preacts: Vec<Vec<f64>>,
    /// Final output after the sigmoid, flattened N².
    output: Vec<f64>,
}

/// Per-layer gradient accumulator, shaped like the network's weights.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for x in &mut layer.weights {
                *x *= factor;
            }
            for x in &mut layer.biases {
                *x *= factor;
            }
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn check_finite(values: &[f64], config: &NetworkConfig, layer_index: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite activation after layer {} ({})",
            layer_index,
            layer_name(config, layer_index)
        )))
    }
}

impl Network {
    /// Freshly initialized network: He-style uniform weights
    /// (bound sqrt(6 / fan_in)) drawn from a stream seeded with
    /// `config.seed`, zero biases.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = layer_dims(config)
            .into_iter()
            .map(|(in_dim, out_dim)| {
                let bound = (6.0 / in_dim as f64).sqrt();
                DenseLayer {
                    in_dim,
                    out_dim,
                    weights: (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Network { config: config.clone(), layers })
    }

    /// All-zero network; blocks act as identities and the output is
    /// uniformly sigmoid(0) = 0.5. Mostly useful in tests.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers =
            layer_dims(config).into_iter().map(|(i, o)| DenseLayer::zeros(i, o)).collect();
        Ok(Network { config: config.clone(), layers })
    }

    pub fn from_layers(config: NetworkConfig, layers: Vec<DenseLayer>) -> Result<Self> {
        config.validate()?;
        let expected = layer_dims(&config);
        if layers.len() != expected.len() {
            return Err(Error::Dimension(format!(
                "{} layers supplied, config implies {}",
                layers.len(),
                expected.len()
            )));
        }
        for (k, (layer, (in_dim, out_dim))) in layers.iter().zip(&expected).enumerate() {
            if layer.in_dim != *in_dim
                || layer.out_dim != *out_dim
                || layer.weights.len() != in_dim * out_dim
                || layer.biases.len() != *out_dim
            {
                return Err(Error::Dimension(format!(
                    "layer {k} ({}) has shape {}x{}, config implies {}x{}",
                    layer_name(&config, k),
                    layer.in_dim,
                    layer.out_dim,
                    in_dim,
                    out_dim
                )));
            }
        }
        Ok(Network { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn validate_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.config.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.config.input_dim()
            )));
        }
        for (k, &v) in input.iter().enumerate() {
            if !v.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "input value {k} = {v} outside the normalized range [0,1]"
                )));
            }
        }
        Ok(())
    }

    fn forward_impl(&self, input: &[f64], tape: Option<&mut ForwardTape>) -> Result<Vec<f64>> {
        self.validate_input(input)?;
        let cfg = &self.config;
        let per_block = cfg.layers_per_block;
        let slope = cfg.leaky_slope;

        let mut tape = tape;
        let record = |layer_input: &[f64], preact: &[f64], tape: &mut Option<&mut ForwardTape>| {
            if let Some(t) = tape {
                t.layer_inputs.push(layer_input.to_vec());
                t.preacts.push(preact.to_vec());
            }
        };

        // Input layer.
        let pre = self.layers[0].forward(input);
        check_finite(&pre, cfg, 0)?;
        record(input, &pre, &mut tape);
        let mut x: Vec<f64> = pre.iter().map(|&v| leaky(v, slope)).collect();

        // Residual blocks.
        for b in 0..cfg.n_residual_blocks {
            let block_in = x.clone();
            let mut h = x;
            for l in 0..per_block {
                let idx = 1 + b * per_block + l;
                let pre = self.layers[idx].forward(&h);
                check_finite(&pre, cfg, idx)?;
                record(&h, &pre, &mut tape);
                h = pre.iter().map(|&v| leaky(v, slope)).collect();
            }
            x = block_in.iter().zip(&h).map(|(a, b)| a + b).collect();
        }

        // Output layer plus sigmoid.
        let last = self.layers.len() - 1;
        let pre = self.layers[last].forward(&x);
        check_finite(&pre, cfg, last)?;
        record(&x, &pre, &mut tape);
        let out: Vec<f64> = pre.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        if let Some(t) = tape {
            t.output = out.clone();
        }
        Ok(out)
    }

    /// Forward pass recording the activations backprop needs. The output
    /// is the flattened N×N score matrix, all entries in (0,1).
    pub fn forward(&self, input: &[f64]) -> Result<(SquareMatrix, ForwardTape)> {
        let mut tape = ForwardTape {
            layer_inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
            output: Vec::new(),
        };
        let out = self.forward_impl(input, Some(&mut tape))?;
        Ok((SquareMatrix::from_vec(self.config.n_markers, out)?, tape))
    }

    /// Forward pass without a tape, for inference.
    pub fn infer(&self, input: &[f64]) -> Result<SquareMatrix> {
        let out = self.forward_impl(input, None)?;
        SquareMatrix::from_vec(self.config.n_markers, out)
    }

    /// Backpropagates `grad_output` (gradient with respect to the
    /// post-sigmoid output) through the tape, accumulating weight and bias
    /// gradients into `acc`.
    pub fn backward(&self, tape: &ForwardTape, grad_output: &[f64], acc: &mut Gradients) -> Result<()> {
        let cfg = &self.config;
        if grad_output.len() != cfg.output_dim() {
            return Err(Error::Dimension(format!(
                "gradient has {} values, network output has {}",
                grad_output.len(),
                cfg.output_dim()
            )));
        }
        if tape.layer_inputs.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "tape records {} layers, network has {}",
                tape.layer_inputs.len(),
                self.layers.len()
            )));
        }
        let per_block = cfg.layers_per_block;
        let slope = cfg.leaky_slope;

        // Sigmoid: dy/dz = y (1 - y).
        let last = self.layers.len() - 1;
        let dpre_out: Vec<f64> = grad_output
            .iter()
            .zip(&tape.output)
            .map(|(&g, &y)| g * y * (1.0 - y))
            .collect();
        let mut g = self.dense_backward(last, &dpre_out, tape, acc);

        // Blocks in reverse; the skip path adds the incoming gradient to
        // the block input's gradient unchanged.
        for b in (0..cfg.n_residual_blocks).rev() {
            let skip = g.clone();
            for l in (0..per_block).rev() {
                let idx = 1 + b * per_block + l;
                let dpre: Vec<f64> = g
                    .iter()
                    .zip(&tape.preacts[idx])
                    .map(|(&gv, &z)| gv * leaky_grad(z, slope))
                    .collect();
                g = self.dense_backward(idx, &dpre, tape, acc);
            }
            for (a, s) in g.iter_mut().zip(&skip) {
                *a += s;
            }
        }

        // Input layer: weight gradients only, nothing upstream to feed.
        let dpre: Vec<f64> = g
            .iter()
            .zip(&tape.preacts[0])
            .map(|(&gv, &z)| gv * leaky_grad(z, slope))
            .collect();
        let input = &tape.layer_inputs[0];
        let grad = &mut acc.layers[0];
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                let row = &mut grad.weights[i * self.layers[0].out_dim..(i + 1) * self.layers[0].out_dim];
                for (w, &d) in row.iter_mut().zip(&dpre) {
                    *w += x * d;
                }
            }
        }
        for (b, &d) in grad.biases.iter_mut().zip(&dpre) {
            *b += d;
        }
        Ok(())
    }

    /// Accumulates gradients of one dense layer and returns the gradient
    /// with respect to its input.
    fn dense_backward(
        &self,
        idx: usize,
        dpre: &[f64],
        tape: &ForwardTape,
        acc: &mut Gradients,
    ) -> Vec<f64> {
        let layer = &self.layers[idx];
        let input = &tape.layer_inputs[idx];
        let grad = &mut acc.layers[idx];
        let mut dinput = vec![0.0; layer.in_dim];
        for (i, &x) in input.iter().enumerate() {
            let row = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
            let mut dot = 0.0;
            let grow = &mut grad.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
            for ((&w, gw), &d) in row.iter().zip(grow.iter_mut()).zip(dpre) {
                dot += w * d;
                *gw += x * d;
            }
            dinput[i] = dot;
        }
        for (b, &d) in grad.biases.iter_mut().zip(dpre) {
            *b += d;
        }
        dinput
    }
}

/// Flattens a frame marker-major: x0, y0, z0, x1, y1, z1, ...
pub fn flatten_frame(frame: &MarkerFrame) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * frame.n_markers());
    for p in &frame.positions {
        out.extend_from_slice(p);
    }
    out
}

/// Loss value plus how many score entries hit the log clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub clamped: usize,
}

/// Cross-entropy of the Sinkhorn output against a target permutation for
/// one frame, plus gradients accumulated into `acc`. The upstream
/// gradient is pre-scaled by `weight` so batch means need no post-pass.
fn item_loss_and_grad(
    net: &Network,
    sk: &SinkhornConfig,
    frame: &MarkerFrame,
    target: &Permutation,
    weight: f64,
    acc: &mut Gradients,
) -> Result<(f64, usize)> {
    let n = net.config().n_markers;
    if frame.n_markers() != n || target.len() != n {
        return Err(Error::Dimension(format!(
            "frame has {} markers and target {} entries, network expects {n}",
            frame.n_markers(),
            target.len()
        )));
    }
    let (raw, tape_net) = net.forward(&flatten_frame(frame))?;
    let (d, tape_sk) = sinkhorn::sinkhorn_forward(&raw, sk)?;

    let mut loss = 0.0;
    let mut clamped = 0;
    let mut grad_d = SquareMatrix::zeros(n);
    for j in 0..n {
        let i_star = target[j];
        let v = d[(i_star, j)];
        if v < LOG_CLAMP {
            clamped += 1;
            loss -= LOG_CLAMP.ln();
            // Clamped entries contribute a constant, so no gradient.
        } else {
            loss -= v.ln();
            grad_d[(i_star, j)] = -weight / v;
        }
    }

    let grad_raw = sinkhorn::sinkhorn_backward(&tape_sk, &grad_d)?;
    net.backward(&tape_net, grad_raw.data(), acc)?;
    Ok((loss * weight, clamped))
}

/// Mean column cross-entropy over a batch, with gradients for every
/// weight, flowing through the Sinkhorn relaxation.
///
/// The loss is `mean over items and columns j of -log D[target_j, j]`.
/// Batch items are processed in a fixed chunked order so the summation
/// order (and therefore the result, bit for bit) does not depend on how
/// many worker threads are available.
pub fn loss_and_gradients(
    batch: &[TrainItem],
    net: &Network,
    sk: &SinkhornConfig,
) -> Result<(LossStats, Gradients)> {
    let indices: Vec<usize> = (0..batch.len()).collect();
    loss_and_gradients_indexed(batch, &indices, net, sk)
}

/// Number of fixed reduction chunks for batch-parallel gradient work.
const GRAD_CHUNKS: usize = 8;

pub(crate) fn loss_and_gradients_indexed(
    items: &[TrainItem],
    indices: &[usize],
    net: &Network,
    sk: &SinkhornConfig,
) -> Result<(LossStats, Gradients)> {
    use rayon::prelude::*;

    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let weight = 1.0 / (indices.len() * net.config().n_markers) as f64;

    let chunk_size = indices.len().div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[usize]> = indices.chunks(chunk_size).collect();
    let partials: Vec<Result<(f64, usize, Gradients)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut acc = Gradients::zeros_like(net);
            let mut loss = 0.0;
            let mut clamped = 0;
            for &idx in *chunk {
                let item = &items[idx];
                let (l, c) = item_loss_and_grad(net, sk, &item.frame, &item.target, weight, &mut acc)?;
                loss += l;
                clamped += c;
            }
            Ok((loss, clamped, acc))
        })
        .collect();

    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let mut clamped = 0;
    for partial in partials {
        let (l, c, g) = partial?;
        loss += l;
        clamped += c;
        total.add_assign(&g);
    }
    Ok((LossStats { loss, clamped }, total))
}

/// Labels one normalized frame: forward pass, Sinkhorn relaxation,
/// Hungarian decode, and per-marker confidences.
pub fn label_frame(frame: &MarkerFrame, ckpt: &ModelCheckpoint) -> Result<LabelledFrameResult> {
    let net = ckpt.network();
    if frame.n_markers() != net.config().n_markers {
        return Err(Error::Dimension(format!(
            "frame has {} markers, model expects {}",
            frame.n_markers(),
            net.config().n_markers
        )));
    }
    let raw = net.infer(&flatten_frame(frame))?;
    let (d, _) = sinkhorn::sinkhorn_forward(&raw, ckpt.sinkhorn())?;
    let decoded = assign::decode(&d)?;
    let confidences = (0..frame.n_markers())
        .map(|j| {
            let c = trajlabel::confidence(&d, decoded.permutation[j], j)?;
            trajlabel::normalize_confidence(c)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LabelledFrameResult {
        permutation: decoded.permutation,
        dsm: d,
        confidences,
        frame_index: frame.frame_index,
    })
}
