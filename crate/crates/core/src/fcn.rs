//! The Fast-FCN encoder/decoder: architecture description, parameters,
//! forward/backward passes, inference and the Adam training loop.
//!
//! The encoder is three blocks of two 3x3 convolutions and a 2x2 max pool,
//! followed by one more convolution at the bottleneck. The decoder restores
//! full resolution with three 4x4 transposed convolutions (one convolution
//! between the first two) and a final 3x3 convolution producing per-class
//! logits. Every layer but the last is followed by a ReLU. There are no skip
//! connections.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Error, Result};
use crate::geometry::{LabelMap, SemanticLabel, NET_HEIGHT, NET_WIDTH};
use crate::nn::{self, AdamConfig, AdamState, PoolIndices};
use crate::tensor::{Scalar, Tensor};

/// One layer of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3 {
        c_in: usize,
        c_out: usize,
        relu: bool,
    },
    MaxPool2x2,
    /// `target` is the `(height, width)` the output is padded to.
    Deconv4x4 {
        c_in: usize,
        c_out: usize,
        target: (usize, usize),
        relu: bool,
    },
}

impl LayerKind {
    fn relu(&self) -> bool {
        match *self {
            LayerKind::Conv3x3 { relu, .. } | LayerKind::Deconv4x4 { relu, .. } => relu,
            LayerKind::MaxPool2x2 => false,
        }
    }

    fn param_shapes(&self) -> Option<[Vec<usize>; 2]> {
        match *self {
            LayerKind::Conv3x3 { c_in, c_out, .. } => {
                Some([alloc::vec![3, 3, c_in, c_out], alloc::vec![c_out]])
            }
            LayerKind::Deconv4x4 { c_in, c_out, .. } => {
                Some([alloc::vec![c_in, 4, 4, c_out], alloc::vec![c_out]])
            }
            LayerKind::MaxPool2x2 => None,
        }
    }

    /// Inputs contributing to one output unit, for He initialization. A
    /// stride-2 4x4 transposed convolution reaches each output from 2x2 input
    /// positions.
    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv3x3 { c_in, .. } => 9 * c_in,
            LayerKind::Deconv4x4 { c_in, .. } => 4 * c_in,
            LayerKind::MaxPool2x2 => 0,
        }
    }
}

/// Operation totals of a network, as tabulated for architecture comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpCounts {
    pub conv: usize,
    pub pool: usize,
    pub deconv: usize,
}

/// Ordered layer list plus the input/output contract.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    /// `(height, width, channels)`.
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerKind>,
}

impl NetworkSpec {
    /// The full-size network: 128x106x4 input, 16x13x512 bottleneck,
    /// 128x106x7 logits.
    pub fn fast_fcn() -> Self {
        Self::encoder_decoder(
            (NET_HEIGHT, NET_WIDTH),
            4,
            [64, 128, 256, 512],
            SemanticLabel::COUNT,
        )
    }

    /// The same topology at another input size and channel plan. `widths` are
    /// the channel counts of the three encoder blocks and the bottleneck.
    pub fn encoder_decoder(
        hw: (usize, usize),
        c_in: usize,
        widths: [usize; 4],
        classes: usize,
    ) -> Self {
        let (h, w) = hw;
        let half = (h / 2, w / 2);
        let quarter = (half.0 / 2, half.1 / 2);
        let [w0, w1, w2, w3] = widths;
        let conv = |c_in, c_out| LayerKind::Conv3x3 {
            c_in,
            c_out,
            relu: true,
        };
        let deconv = |c_in, c_out, target| LayerKind::Deconv4x4 {
            c_in,
            c_out,
            target,
            relu: true,
        };
        let layers = alloc::vec![
            conv(c_in, w0),
            conv(w0, w0),
            LayerKind::MaxPool2x2,
            conv(w0, w1),
            conv(w1, w1),
            LayerKind::MaxPool2x2,
            conv(w1, w2),
            conv(w2, w2),
            LayerKind::MaxPool2x2,
            conv(w2, w3),
            deconv(w3, w2, quarter),
            conv(w2, w2),
            deconv(w2, w1, half),
            deconv(w1, w0, (h, w)),
            LayerKind::Conv3x3 {
                c_in: w0,
                c_out: classes,
                relu: false
            },
        ];
        Self {
            input: [h, w, c_in],
            classes,
            layers,
        }
    }

    pub fn op_counts(&self) -> OpCounts {
        let mut counts = OpCounts {
            conv: 0,
            pool: 0,
            deconv: 0,
        };
        for l in &self.layers {
            match l {
                LayerKind::Conv3x3 { .. } => counts.conv += 1,
                LayerKind::MaxPool2x2 => counts.pool += 1,
                LayerKind::Deconv4x4 { .. } => counts.deconv += 1,
            }
        }
        counts
    }

    /// Output shape of every layer, validating channel and size chaining.
    pub fn shape_trace(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let [h, w, c] = shape;
            shape = match *layer {
                LayerKind::Conv3x3 { c_in, c_out, .. } => {
                    if c_in != c {
                        bail!(
                            DimensionMismatch,
                            "layer {i}: conv expects {c_in} channels, gets {c}"
                        );
                    }
                    [h, w, c_out]
                }
                LayerKind::MaxPool2x2 => {
                    if h < 2 || w < 2 {
                        bail!(DimensionMismatch, "layer {i}: pool on {h}x{w}");
                    }
                    [h / 2, w / 2, c]
                }
                LayerKind::Deconv4x4 {
                    c_in,
                    c_out,
                    target,
                    ..
                } => {
                    if c_in != c {
                        bail!(
                            DimensionMismatch,
                            "layer {i}: deconv expects {c_in} channels, gets {c}"
                        );
                    }
                    let (th, tw) = target;
                    if !(th == 2 * h || th == 2 * h + 1) || !(tw == 2 * w || tw == 2 * w + 1) {
                        bail!(
                            DimensionMismatch,
                            "layer {i}: deconv {h}x{w} cannot reach {th}x{tw}"
                        );
                    }
                    [th, tw, c_out]
                }
            };
            trace.push(shape);
        }
        Ok(trace)
    }

    pub fn output_shape(&self) -> Result<[usize; 3]> {
        self.shape_trace()?
            .last()
            .copied()
            .ok_or_else(|| Error::InvalidInput("network has no layers".into()))
    }

    /// Shape entering the first transposed convolution.
    pub fn bottleneck_shape(&self) -> Result<[usize; 3]> {
        let trace = self.shape_trace()?;
        let first_deconv = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerKind::Deconv4x4 { .. }))
            .ok_or_else(|| Error::InvalidInput("network has no decoder".into()))?;
        Ok(if first_deconv == 0 {
            self.input
        } else {
            trace[first_deconv - 1]
        })
    }

    /// Parameter tensor shapes in storage order (kernel, bias per layer).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .filter_map(|l| l.param_shapes())
            .flatten()
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Canonical text form; checkpoints hash this to detect mismatches.
    pub fn describe(&self) -> String {
        let [h, w, c] = self.input;
        let mut s = format!("fastfcn/v1 input={h}x{w}x{c} classes={}", self.classes);
        for l in &self.layers {
            let _ = match *l {
                LayerKind::Conv3x3 { c_in, c_out, relu } => {
                    write!(s, " conv3x3({c_in}->{c_out},relu={relu})")
                }
                LayerKind::MaxPool2x2 => write!(s, " maxpool2x2"),
                LayerKind::Deconv4x4 {
                    c_in,
                    c_out,
                    target,
                    relu,
                } => write!(
                    s,
                    " deconv4x4({c_in}->{c_out},target={}x{},relu={relu})",
                    target.0, target.1
                ),
            };
        }
        s
    }
}

/// All kernels and biases, in [`NetworkSpec::param_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            tensors: spec
                .param_shapes()
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
        }
    }

    /// He-normal kernels (std `sqrt(2 / fan_in)`), zero biases.
    pub fn he_init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = crate::rng::seeded(seed);
        let mut tensors = Vec::new();
        for layer in &spec.layers {
            let Some([k_shape, b_shape]) = layer.param_shapes() else {
                continue;
            };
            let std = num_traits::Float::sqrt(2.0 / layer.fan_in() as f64);
            let normal = Normal::new(0.0, std).expect("positive std");
            let n: usize = k_shape.iter().product();
            let data = (0..n)
                .map(|_| T::from_f64(normal.sample(&mut rng)))
                .collect();
            tensors.push(Tensor::from_vec(&k_shape, data).expect("shape"));
            tensors.push(Tensor::zeros(&b_shape));
        }
        Self { tensors }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn from_flat(spec: &NetworkSpec, flat: &[T]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            bail!(
                DimensionMismatch,
                "{} parameters for a network of {}",
                flat.len(),
                spec.param_count()
            );
        }
        let mut offset = 0;
        let mut tensors = Vec::new();
        for shape in spec.param_shapes() {
            let n: usize = shape.iter().product();
            tensors.push(Tensor::from_vec(&shape, flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(Self { tensors })
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.tensors.len()
            || shapes
                .iter()
                .zip(&self.tensors)
                .any(|(s, t)| s[..] != *t.shape())
        {
            bail!(DimensionMismatch, "parameters do not match network spec");
        }
        Ok(())
    }
}

/// Builds the full-size network with He-initialized parameters.
pub fn build_fast_fcn(seed: u64) -> (NetworkSpec, NetworkParams<f32>) {
    let spec = NetworkSpec::fast_fcn();
    let params = NetworkParams::he_init(&spec, seed);
    (spec, params)
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[i + 1]` the output of
    /// layer `i` after its ReLU.
    pub activations: Vec<Tensor<T>>,
    pools: Vec<Option<PoolIndices>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("non-empty")
    }
}

fn check_input<T: Scalar>(spec: &NetworkSpec, input: &Tensor<T>) -> Result<()> {
    if input.shape() != spec.input {
        bail!(
            DimensionMismatch,
            "network input {:?}, expected {:?}",
            input.shape(),
            spec.input
        );
    }
    Ok(())
}

fn apply_layer<T: Scalar>(
    layer: &LayerKind,
    params: &[Tensor<T>],
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Option<PoolIndices>)> {
    let (mut y, pool) = match *layer {
        LayerKind::Conv3x3 { .. } => (nn::conv2d_forward(x, &params[0], &params[1])?, None),
        LayerKind::Deconv4x4 { target, .. } => (
            nn::deconv2d_forward(x, &params[0], &params[1], target)?,
            None,
        ),
        LayerKind::MaxPool2x2 => {
            let (y, idx) = nn::maxpool2x2_forward(x)?;
            (y, Some(idx))
        }
    };
    if layer.relu() {
        nn::relu_in_place(&mut y);
    }
    Ok((y, pool))
}

fn param_slices<'a, T>(spec: &NetworkSpec, params: &'a NetworkParams<T>) -> Vec<&'a [Tensor<T>]> {
    let mut out = Vec::with_capacity(spec.layers.len());
    let mut offset = 0;
    for l in &spec.layers {
        let n = if l.param_shapes().is_some() { 2 } else { 0 };
        out.push(&params.tensors[offset..offset + n]);
        offset += n;
    }
    out
}

/// Forward pass returning only the logits.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_input(spec, input)?;
    params.check(spec)?;
    let slices = param_slices(spec, params);
    let mut x = input.clone();
    for (layer, p) in spec.layers.iter().zip(slices) {
        x = apply_layer(layer, p, &x)?.0;
    }
    Ok(x)
}

/// Forward pass keeping every activation.
pub fn forward_cached<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    input: &Tensor<T>,
) -> Result<ForwardCache<T>> {
    check_input(spec, input)?;
    params.check(spec)?;
    let slices = param_slices(spec, params);
    let mut activations = Vec::with_capacity(spec.layers.len() + 1);
    let mut pools = Vec::with_capacity(spec.layers.len());
    activations.push(input.clone());
    for (layer, p) in spec.layers.iter().zip(slices) {
        let (y, pool) = apply_layer(layer, p, activations.last().expect("non-empty"))?;
        activations.push(y);
        pools.push(pool);
    }
    Ok(ForwardCache { activations, pools })
}

/// Gradient of the loss with respect to every parameter tensor, given the
/// gradient with respect to the logits.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    d_logits: &Tensor<T>,
) -> Result<NetworkParams<T>> {
    if d_logits.shape() != cache.logits().shape() {
        bail!(DimensionMismatch, "logit gradient {:?}", d_logits.shape());
    }
    let slices = param_slices(spec, params);
    let mut grads: Vec<Option<[Tensor<T>; 2]>> = (0..spec.layers.len()).map(|_| None).collect();
    let mut d = d_logits.clone();
    for i in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[i];
        if layer.relu() {
            d = nn::relu_backward(&cache.activations[i + 1], &d)?;
        }
        let x = &cache.activations[i];
        d = match *layer {
            LayerKind::Conv3x3 { .. } => {
                let g = nn::conv2d_backward_impl(x, &slices[i][0], &d, i > 0)?;
                let [k, b]: [Tensor<T>; 2] = g.d_params.try_into().expect("two tensors");
                grads[i] = Some([k, b]);
                g.d_input
            }
            LayerKind::Deconv4x4 { .. } => {
                let g = nn::deconv2d_backward(x, &slices[i][0], &d)?;
                let [k, b]: [Tensor<T>; 2] = g.d_params.try_into().expect("two tensors");
                grads[i] = Some([k, b]);
                g.d_input
            }
            LayerKind::MaxPool2x2 => {
                nn::maxpool2x2_backward(cache.pools[i].as_ref().expect("pool indices"), &d)?
            }
        };
    }
    Ok(NetworkParams {
        tensors: grads.into_iter().flatten().flatten().collect(),
    })
}

/// Loss and parameter gradient for one labelled input.
pub fn loss_and_gradient<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    truth: &LabelMap,
    lambda: f64,
) -> Result<(f64, NetworkParams<T>)> {
    let cache = forward_cached(spec, params, input)?;
    let (loss, d_logits) = nn::segmentation_loss_with_grad(cache.logits(), truth, lambda)?;
    Ok((loss, backward(spec, params, &cache, &d_logits)?))
}

/// Per-pixel argmax of a logit map; ties go to the lowest label id.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Result<LabelMap> {
    let (h, w, c) = logits.hwc()?;
    if c != SemanticLabel::COUNT {
        bail!(DimensionMismatch, "logit map has {c} channels");
    }
    let labels = logits
        .data()
        .chunks_exact(c)
        .map(|px| {
            let mut best = 0;
            for k in 1..c {
                if px[k] > px[best] {
                    best = k;
                }
            }
            SemanticLabel::ALL[best]
        })
        .collect();
    LabelMap::from_labels(w, h, labels)
}

/// Network output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor<f32>,
    pub labels: LabelMap,
}

/// Logits plus argmax label map for a normalized network input.
pub fn predict(
    spec: &NetworkSpec,
    params: &NetworkParams<f32>,
    input: &Tensor<f32>,
) -> Result<Prediction> {
    let logits = forward(spec, params, input)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("network activations"));
    }
    let labels = argmax_labels(&logits)?;
    Ok(Prediction { logits, labels })
}

/// Source of training pairs `(normalized input, ground-truth labels)`.
/// `epoch` lets randomized sets draw a fresh variant on every pass.
pub trait TrainingSet {
    fn len(&self) -> usize;
    fn sample(&self, index: usize, epoch: usize) -> Result<(Tensor<f32>, LabelMap)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TrainingSet for [(Tensor<f32>, LabelMap)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }
    fn sample(&self, index: usize, _epoch: usize) -> Result<(Tensor<f32>, LabelMap)> {
        Ok(self[index].clone())
    }
}

impl TrainingSet for Vec<(Tensor<f32>, LabelMap)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn sample(&self, index: usize, epoch: usize) -> Result<(Tensor<f32>, LabelMap)> {
        self.as_slice().sample(index, epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the background/body imbalance term.
    pub lambda: f64,
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            adam: AdamConfig::default(),
            batch: 4,
            epochs: 1,
            seed: 0,
            max_steps: None,
        }
    }
}

/// Progress callback payload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    /// Mean loss over the steps of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean loss of each mini-batch.
    pub step_losses: Vec<f64>,
}

#[derive(Debug)]
pub enum TrainError {
    Input(Error),
    /// Loss or gradient became non-finite; `last_good` are the parameters
    /// before the failing step.
    Diverged {
        step: usize,
        last_good: Box<NetworkParams<f32>>,
        step_losses: Vec<f64>,
    },
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Input(e)
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Input(e) => write!(f, "{e}"),
            TrainError::Diverged { step, .. } => write!(f, "training diverged at step {step}"),
        }
    }
}

impl core::error::Error for TrainError {}

/// Mini-batch Adam on the segmentation loss. Each epoch visits the dataset
/// in a seeded random order; the batch gradient is the mean of per-frame
/// gradients. Deterministic for a fixed seed.
pub fn train<D: TrainingSet + ?Sized>(
    spec: &NetworkSpec,
    params: NetworkParams<f32>,
    data: &D,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepInfo),
) -> Result<TrainReport, TrainError> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()).into());
    }
    if config.batch == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()).into());
    }
    params.check(spec)?;
    let mut params = params;
    let mut adam = AdamState::new(&params.tensors, config.adam)?;
    let mut rng = crate::rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut step_losses = Vec::new();
    let inv_batch = 1.0 / config.batch as f32;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0;
        for batch in order.chunks(config.batch) {
            if config.max_steps.is_some_and(|m| step_losses.len() >= m) {
                if epoch_steps > 0 {
                    epoch_losses.push(epoch_total / epoch_steps as f64);
                }
                break 'epochs;
            }
            let mut sum: Option<NetworkParams<f32>> = None;
            let mut loss = 0.0;
            for &i in batch {
                let (input, truth) = data.sample(i, epoch)?;
                let (l, g) = loss_and_gradient(spec, &params, &input, &truth, config.lambda)?;
                loss += l;
                match sum.as_mut() {
                    None => sum = Some(g),
                    Some(acc) => acc
                        .tensors
                        .iter_mut()
                        .zip(&g.tensors)
                        .for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grad = sum.expect("non-empty batch");
            let scale = if batch.len() == config.batch {
                inv_batch
            } else {
                1.0 / batch.len() as f32
            };
            grad.tensors.iter_mut().for_each(|t| t.scale(scale));
            loss /= batch.len() as f64;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(TrainError::Diverged {
                    step: step_losses.len(),
                    last_good: Box::new(params),
                    step_losses,
                });
            }
            nn::adam_step(&mut params.tensors, &grad.tensors, &mut adam)?;
            step_losses.push(loss);
            epoch_total += loss;
            epoch_steps += 1;
            on_step(&StepInfo {
                epoch,
                step: step_losses.len(),
                loss,
            });
        }
        epoch_losses.push(epoch_total / epoch_steps.max(1) as f64);
    }
    Ok(TrainReport {
        params,
        adam,
        epoch_losses,
        step_losses,
    })
}
