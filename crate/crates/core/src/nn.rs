//! Layer kernels for the segmentation network, each with an exact backward
//! pass.
//!
//! Feature maps are `(height, width, channels)` tensors. Convolutions use the
//! cross-correlation convention (no kernel flip) throughout. Kernel layouts:
//!
//! - 3x3 convolution: `(3, 3, c_in, c_out)`
//! - 4x4 transposed convolution: `(c_in, 4, 4, c_out)`

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{bail, Error, Result};
use crate::geometry::{LabelMap, SemanticLabel};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Lower clamp applied to probabilities before taking logs in the loss.
pub const LOG_CLAMP: f64 = 1e-7;

/// Gradients of one layer: with respect to its input and to each parameter
/// tensor, in declaration order (kernel, then bias).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub d_input: Tensor<T>,
    pub d_params: Vec<Tensor<T>>,
}

fn check_kernel<T: Scalar>(kernel: &Tensor<T>, expect: [usize; 4], what: &str) -> Result<()> {
    if kernel.shape() != expect {
        bail!(
            DimensionMismatch,
            "{what} kernel shape {:?}, expected {expect:?}",
            kernel.shape()
        );
    }
    Ok(())
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, c_out: usize) -> Result<()> {
    if bias.shape() != [c_out] {
        bail!(
            DimensionMismatch,
            "bias shape {:?}, expected [{c_out}]",
            bias.shape()
        );
    }
    Ok(())
}

/// Zero-padded copy of an `(h, w, c)` map with a one-pixel border, flattened
/// to rows of width `w + 2`, plus two trailing pixels so every shifted window
/// of `h * (w + 2)` rows stays in bounds.
fn pad1<T: Scalar>(input: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let wp = w + 2;
    let mut p = vec![T::zero(); ((h + 2) * wp + 2) * c];
    for y in 0..h {
        p[((y + 1) * wp + 1) * c..][..w * c].copy_from_slice(&input[y * w * c..][..w * c]);
    }
    p
}

/// A 3x3 convolution is nine matrix products, one per tap, between shifted
/// views of the padded input and the tap's `c_in x c_out` slice. Outputs are
/// computed on the padded-width grid; its last two columns are discarded.
fn tap_view<T: Scalar>(
    padded: &[T],
    ky: usize,
    kx: usize,
    h: usize,
    w: usize,
    c: usize,
) -> MatRef<'_, T> {
    let wp = w + 2;
    MatRef::row_major(&padded[(ky * wp + kx) * c..][..h * wp * c], h * wp, c)
}

fn kernel_tap<T: Scalar>(
    kernel: &[T],
    ky: usize,
    kx: usize,
    c_in: usize,
    c_out: usize,
) -> MatRef<'_, T> {
    MatRef::row_major(
        &kernel[(ky * 3 + kx) * c_in * c_out..][..c_in * c_out],
        c_in,
        c_out,
    )
}

fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (h, w, c_in) = input.hwc()?;
    let c_out = *kernel.shape().last().unwrap_or(&0);
    check_kernel(kernel, [3, 3, c_in, c_out], "conv")?;
    Ok((h, w, c_in, c_out))
}

/// 3x3 convolution, stride 1, zero padding 1, plus bias. Output keeps the
/// input's spatial size.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, c_in, c_out) = conv_dims(input, kernel)?;
    check_bias(bias, c_out)?;
    let padded = pad1(input.data(), h, w, c_in);
    let wp = w + 2;
    let mut wide = vec![T::zero(); h * wp * c_out];
    for ky in 0..3 {
        for kx in 0..3 {
            let a = tap_view(&padded, ky, kx, h, w, c_in);
            gemm(
                a,
                kernel_tap(kernel.data(), ky, kx, c_in, c_out),
                T::one(),
                &mut wide,
            );
        }
    }
    let mut out = Vec::with_capacity(h * w * c_out);
    for y in 0..h {
        for px in wide[y * wp * c_out..][..w * c_out].chunks_exact(c_out) {
            out.extend(px.iter().zip(bias.data()).map(|(&v, &b)| v + b));
        }
    }
    Tensor::from_vec(&[h, w, c_out], out)
}

/// Exact gradients of [`conv2d_forward`] given the output gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    d_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    conv2d_backward_impl(input, kernel, d_output, true)
}

pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    d_output: &Tensor<T>,
    need_input_grad: bool,
) -> Result<LayerGrad<T>> {
    let (h, w, c_in, c_out) = conv_dims(input, kernel)?;
    if d_output.shape() != [h, w, c_out] {
        bail!(
            DimensionMismatch,
            "conv output gradient shape {:?}",
            d_output.shape()
        );
    }
    let padded = pad1(input.data(), h, w, c_in);
    let wp = w + 2;
    // output gradient on the padded-width grid, zero in the discarded columns
    let mut d_wide = vec![T::zero(); h * wp * c_out];
    for y in 0..h {
        d_wide[y * wp * c_out..][..w * c_out]
            .copy_from_slice(&d_output.data()[y * w * c_out..][..w * c_out]);
    }
    let d_wide_m = MatRef::row_major(&d_wide, h * wp, c_out);

    let mut d_kernel = vec![T::zero(); 9 * c_in * c_out];
    for ky in 0..3 {
        for kx in 0..3 {
            let dst = &mut d_kernel[(ky * 3 + kx) * c_in * c_out..][..c_in * c_out];
            gemm(
                tap_view(&padded, ky, kx, h, w, c_in).t(),
                d_wide_m,
                T::zero(),
                dst,
            );
        }
    }

    let mut d_bias = vec![T::zero(); c_out];
    for px in d_output.data().chunks_exact(c_out) {
        for (b, &g) in d_bias.iter_mut().zip(px) {
            *b += g;
        }
    }

    let d_input = if need_input_grad {
        let mut d_padded = vec![T::zero(); ((h + 2) * wp + 2) * c_in];
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut d_padded[(ky * wp + kx) * c_in..][..h * wp * c_in];
                gemm(
                    d_wide_m,
                    kernel_tap(kernel.data(), ky, kx, c_in, c_out).t(),
                    T::one(),
                    dst,
                );
            }
        }
        let mut d = Vec::with_capacity(h * w * c_in);
        for y in 0..h {
            d.extend_from_slice(&d_padded[((y + 1) * wp + 1) * c_in..][..w * c_in]);
        }
        Tensor::from_vec(&[h, w, c_in], d)?
    } else {
        Tensor::zeros(&[h, w, c_in])
    };
    Ok(LayerGrad {
        d_input,
        d_params: vec![
            Tensor::from_vec(&[3, 3, c_in, c_out], d_kernel)?,
            Tensor::from_vec(&[c_out], d_bias)?,
        ],
    })
}

/// Argmax bookkeeping from [`maxpool2x2_forward`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: [usize; 3],
    /// Flat input index chosen for each output element.
    pub argmax: Vec<u32>,
}

/// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (h, w, c) = input.hwc()?;
    if h < 2 || w < 2 {
        bail!(
            InvalidInput,
            "max pool needs at least 2x2 input, got {h}x{w}"
        );
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best = (2 * y * w + 2 * x) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[oh, ow, c], out)?,
        PoolIndices {
            input_shape: [h, w, c],
            argmax,
        },
    ))
}

/// Routes each output gradient to the input element that won the max.
pub fn maxpool2x2_backward<T: Scalar>(
    indices: &PoolIndices,
    d_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if d_output.len() != indices.argmax.len() {
        bail!(
            DimensionMismatch,
            "pool gradient has {} entries, expected {}",
            d_output.len(),
            indices.argmax.len()
        );
    }
    let mut d_input = Tensor::zeros(&indices.input_shape);
    let dst = d_input.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(d_output.data()) {
        dst[i as usize] += g;
    }
    Ok(d_input)
}

fn deconv_dims<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (h, w, c_in) = input.hwc()?;
    let c_out = *kernel.shape().last().unwrap_or(&0);
    check_kernel(kernel, [c_in, 4, 4, c_out], "deconv")?;
    Ok((h, w, c_in, c_out))
}

fn check_target(h: usize, w: usize, target: (usize, usize)) -> Result<()> {
    let (th, tw) = target;
    if !(th == 2 * h || th == 2 * h + 1) || !(tw == 2 * w || tw == 2 * w + 1) {
        bail!(
            InvalidInput,
            "deconv target {th}x{tw} not reachable from {h}x{w}"
        );
    }
    Ok(())
}

/// Output position of input pixel `i` under kernel tap `k` (stride 2, pad 1),
/// if it lands inside the nominal `2n` extent.
#[inline]
fn tap(i: usize, k: usize, n: usize) -> Option<usize> {
    (2 * i + k).checked_sub(1).filter(|&o| o < 2 * n)
}

/// 4x4 transposed convolution with stride 2 and padding 1 (nominal output
/// `2h x 2w`), zero-padded on the bottom/right edge up to `target`
/// (height, width), plus bias.
pub fn deconv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    target: (usize, usize),
) -> Result<Tensor<T>> {
    let (h, w, c_in, c_out) = deconv_dims(input, kernel)?;
    check_bias(bias, c_out)?;
    check_target(h, w, target)?;
    let (th, tw) = target;
    let taps = 16 * c_out;
    let mut cols = vec![T::zero(); h * w * taps];
    gemm(
        MatRef::row_major(input.data(), h * w, c_in),
        MatRef::row_major(kernel.data(), c_in, taps),
        T::zero(),
        &mut cols,
    );
    let mut out = vec![T::zero(); th * tw * c_out];
    for y in 0..h {
        for x in 0..w {
            let row = &cols[(y * w + x) * taps..][..taps];
            for ky in 0..4 {
                let Some(oy) = tap(y, ky, h) else { continue };
                for kx in 0..4 {
                    let Some(ox) = tap(x, kx, w) else { continue };
                    let dst = &mut out[(oy * tw + ox) * c_out..][..c_out];
                    for (d, &s) in dst.iter_mut().zip(&row[(ky * 4 + kx) * c_out..][..c_out]) {
                        *d += s;
                    }
                }
            }
        }
    }
    for px in out.chunks_exact_mut(c_out) {
        for (v, &b) in px.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::from_vec(&[th, tw, c_out], out)
}

/// Gathers, for every input pixel, the output values each kernel tap touched.
fn gather_taps<T: Scalar>(x: &Tensor<T>, h: usize, w: usize, c_out: usize) -> Vec<T> {
    let (_, tw, _) = x.hwc().expect("rank-3");
    let taps = 16 * c_out;
    let src = x.data();
    let mut cols = vec![T::zero(); h * w * taps];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * taps..][..taps];
            for ky in 0..4 {
                let Some(oy) = tap(y, ky, h) else { continue };
                for kx in 0..4 {
                    let Some(ox) = tap(xx, kx, w) else { continue };
                    row[(ky * 4 + kx) * c_out..][..c_out]
                        .copy_from_slice(&src[(oy * tw + ox) * c_out..][..c_out]);
                }
            }
        }
    }
    cols
}

/// The strided 4x4 convolution (stride 2, padding 1, no bias) whose adjoint is
/// [`deconv2d_forward`]. Maps a `(H, W, c_out)` map to `(h, w, c_in)` where
/// `H in {2h, 2h+1}` and `W in {2w, 2w+1}`; the padded edge row/column is
/// ignored.
pub fn strided_conv4x4<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    out_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let (th, tw, c_out) = x.hwc()?;
    let (h, w) = out_hw;
    let c_in = kernel.shape()[0];
    check_kernel(kernel, [c_in, 4, 4, c_out], "strided conv")?;
    check_target(h, w, (th, tw))?;
    let cols = gather_taps(x, h, w, c_out);
    let mut out = vec![T::zero(); h * w * c_in];
    gemm(
        MatRef::row_major(&cols, h * w, 16 * c_out),
        MatRef::row_major(kernel.data(), c_in, 16 * c_out).t(),
        T::zero(),
        &mut out,
    );
    Tensor::from_vec(&[h, w, c_in], out)
}

/// Exact gradients of [`deconv2d_forward`]; the target shape is read from
/// `d_output`.
pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    d_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    let (h, w, c_in, c_out) = deconv_dims(input, kernel)?;
    let (th, tw, dc) = d_output.hwc()?;
    if dc != c_out {
        bail!(
            DimensionMismatch,
            "deconv output gradient has {dc} channels, expected {c_out}"
        );
    }
    check_target(h, w, (th, tw))?;
    let taps = 16 * c_out;
    let cols = gather_taps(d_output, h, w, c_out);
    let cols_m = MatRef::row_major(&cols, h * w, taps);

    let mut d_input = vec![T::zero(); h * w * c_in];
    gemm(
        cols_m,
        MatRef::row_major(kernel.data(), c_in, taps).t(),
        T::zero(),
        &mut d_input,
    );

    let mut d_kernel = vec![T::zero(); c_in * taps];
    gemm(
        MatRef::row_major(input.data(), h * w, c_in).t(),
        cols_m,
        T::zero(),
        &mut d_kernel,
    );

    let mut d_bias = vec![T::zero(); c_out];
    for px in d_output.data().chunks_exact(c_out) {
        for (b, &g) in d_bias.iter_mut().zip(px) {
            *b += g;
        }
    }
    Ok(LayerGrad {
        d_input: Tensor::from_vec(&[h, w, c_in], d_input)?,
        d_params: vec![
            Tensor::from_vec(&[c_in, 4, 4, c_out], d_kernel)?,
            Tensor::from_vec(&[c_out], d_bias)?,
        ],
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub(crate) fn relu_in_place<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Passes `d_output` where `input > 0`, zero elsewhere.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, d_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != d_output.shape() {
        bail!(
            DimensionMismatch,
            "relu gradient shape {:?} vs {:?}",
            d_output.shape(),
            input.shape()
        );
    }
    let data = input
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Numerically stable softmax of one pixel's scores, in `f64`.
fn softmax_into<T: Scalar>(scores: &[T], out: &mut [f64]) {
    let max = scores
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s.as_f64() - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_pixelwise<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, c) = logits.hwc()?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let mut probs = vec![0.0f64; c];
    let mut data = Vec::with_capacity(logits.len());
    for px in logits.data().chunks_exact(c) {
        softmax_into(px, &mut probs);
        data.extend(probs.iter().map(|&p| T::from_f64(p)));
    }
    Tensor::from_vec(logits.shape(), data)
}

fn check_truth<T: Scalar>(map: &Tensor<T>, truth: &LabelMap, lambda: f64) -> Result<usize> {
    let (h, w, c) = map.hwc()?;
    if c != SemanticLabel::COUNT || h != truth.height || w != truth.width {
        bail!(
            DimensionMismatch,
            "score map {h}x{w}x{c} vs label map {}x{}",
            truth.width,
            truth.height
        );
    }
    if !(lambda >= 0.0) {
        bail!(InvalidInput, "lambda must be non-negative, got {lambda}");
    }
    Ok(c)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

/// Cross-entropy plus `lambda` times the background/body imbalance term, per
/// pixel, from probabilities.
fn pixel_loss(p: &[f64], truth: SemanticLabel, lambda: f64) -> f64 {
    let h = -clamp_prob(p[truth.index()]).ln();
    let bg = clamp_prob(p[0]);
    let m = if truth.is_body() {
        -(1.0 - bg).ln()
    } else {
        -bg.ln()
    };
    h + lambda * m
}

/// Mean over pixels of `H_i + lambda * M_i` for a probability map.
pub fn segmentation_loss<T: Scalar>(
    probs: &Tensor<T>,
    truth: &LabelMap,
    lambda: f64,
) -> Result<f64> {
    let c = check_truth(probs, truth, lambda)?;
    if !probs.is_finite() {
        return Err(Error::NonFinite("probabilities"));
    }
    let mut p = vec![0.0f64; c];
    let mut total = 0.0;
    for (px, &t) in probs.data().chunks_exact(c).zip(&truth.labels) {
        for (d, s) in p.iter_mut().zip(px) {
            *d = s.as_f64();
        }
        total += pixel_loss(&p, t, lambda);
    }
    Ok(total / truth.n_pixels() as f64)
}

/// Loss from raw logits together with its gradient with respect to them.
///
/// The softmax is fused into the gradient. The probability clamp only
/// guards the reported value against `log(0)`; the gradient is the analytic
/// one of the unclamped loss so badly wrong pixels keep their full signal.
pub fn segmentation_loss_with_grad<T: Scalar>(
    logits: &Tensor<T>,
    truth: &LabelMap,
    lambda: f64,
) -> Result<(f64, Tensor<T>)> {
    let c = check_truth(logits, truth, lambda)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let inv_n = 1.0 / truth.n_pixels() as f64;
    let mut p = vec![0.0f64; c];
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (px, &t) in logits.data().chunks_exact(c).zip(&truth.labels) {
        softmax_into(px, &mut p);
        total += pixel_loss(&p, t, lambda);
        let body_mass: f64 = p[1..].iter().sum();
        for k in 0..c {
            let mut g = p[k] - if k == t.index() { 1.0 } else { 0.0 };
            g += lambda
                * if !t.is_body() {
                    p[k] - if k == 0 { 1.0 } else { 0.0 }
                } else if k == 0 {
                    p[0]
                } else if body_mass > 0.0 {
                    -p[0] * p[k] / body_mass
                } else {
                    -p[0] / (c - 1) as f64
                };
            grad.push(T::from_f64(g * inv_n));
        }
    }
    Ok((total * inv_n, Tensor::from_vec(logits.shape(), grad)?))
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Result<Self> {
        let ok = config.lr > 0.0
            && config.epsilon > 0.0
            && (0.0..1.0).contains(&config.beta1)
            && config.beta1 > 0.0
            && (0.0..1.0).contains(&config.beta2)
            && config.beta2 > 0.0;
        if !ok {
            bail!(InvalidInput, "invalid Adam configuration {config:?}");
        }
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        bail!(
            DimensionMismatch,
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        );
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            bail!(
                DimensionMismatch,
                "param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            );
        }
    }
    state.t += 1;
    let cfg = state.config;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_b2 = T::from_f64(1.0 - cfg.beta2);
    let c1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powi(state.t as i32)));
    let c2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(state.t as i32)));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.epsilon);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi * c1;
            let v_hat = *vi * c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
