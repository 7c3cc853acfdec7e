//! One-dimensional convolutional feature network over spectrograms.
//!
//! A spectrogram's frequency bins are the input channels and convolution runs
//! along time only, so each kernel spans every bin. The network is a stack of
//! blocks (`conv1d → relu → maxpool2`, the last two optional), optionally
//! followed by a classifier head used by the trainer.

mod weights_file;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dsp::LogMagSpectrogram;

pub use weights_file::{load_weights, read_weights, save_weights, write_weights, WeightsFileError, MAGIC, VERSION};

pub const DEFAULT_KERNEL_WIDTH: usize = 11;
pub const DEFAULT_CHANNELS: [usize; 2] = [2048, 64];
pub const WIDE_CHANNELS: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("feature map with {0} time steps is too short to pool")]
    TooShort(usize),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Channels × time activation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array2<f64>,
}

impl FeatureMap {
    pub fn new(data: Array2<f64>) -> Result<Self, NetError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NetError::Dimension("feature map has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(channels: usize, time: usize) -> Self {
        Self { data: Array2::zeros((channels, time)) }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn time(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }
}

impl From<&LogMagSpectrogram> for FeatureMap {
    fn from(spec: &LogMagSpectrogram) -> Self {
        Self { data: spec.data().clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d { in_channels: usize, out_channels: usize, kernel_width: usize },
    Relu,
    MaxPool2,
    Dense { in_features: usize, out_features: usize },
}

/// `blocks` conv layers of the given widths, each followed by relu and (optionally) pooling.
pub fn conv_stack(in_channels: usize, channels: &[usize], kernel_width: usize, pool: bool) -> Vec<LayerSpec> {
    let mut arch = Vec::new();
    let mut prev = in_channels;
    for &out in channels {
        arch.push(LayerSpec::Conv1d { in_channels: prev, out_channels: out, kernel_width });
        arch.push(LayerSpec::Relu);
        if pool {
            arch.push(LayerSpec::MaxPool2);
        }
        prev = out;
    }
    arch
}

/// Two pooled blocks of 2048 and 64 channels.
pub fn default_architecture(bins: usize) -> Vec<LayerSpec> {
    conv_stack(bins, &DEFAULT_CHANNELS, DEFAULT_KERNEL_WIDTH, true)
}

/// Single wide unpooled layer.
pub fn single_wide_architecture(bins: usize) -> Vec<LayerSpec> {
    conv_stack(bins, &[WIDE_CHANNELS], DEFAULT_KERNEL_WIDTH, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// out × in × width
    pub kernel: Array3<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn width(&self) -> usize {
        self.kernel.dim().2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out × in
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self { weight: Array2::zeros((out_features, in_features)), bias: Array1::zeros(out_features) }
    }

    pub fn in_features(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvLayer,
    pub relu: bool,
    pub pool: bool,
}

/// Hidden FC layer with relu feeding two parallel output layers (main task and
/// spectral-centroid task).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub hidden: DenseLayer,
    pub main: DenseLayer,
    pub aux: DenseLayer,
}

/// One entry of the flat layer list, as stored in weight files.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(ConvLayer),
    Relu,
    MaxPool2,
    Dense(DenseLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    blocks: Vec<ConvBlock>,
    head: Option<ClassifierHead>,
}

impl NetworkWeights {
    pub fn new(blocks: Vec<ConvBlock>, head: Option<ClassifierHead>) -> Result<Self, NetError> {
        let w = Self { blocks, head };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.blocks.is_empty() {
            return Err(NetError::InvalidArchitecture("network has no conv layers".into()));
        }
        let mut prev: Option<usize> = None;
        for (i, b) in self.blocks.iter().enumerate() {
            let (out, inp, width) = b.conv.kernel.dim();
            if out == 0 || inp == 0 {
                return Err(NetError::InvalidArchitecture(format!("block {i} has an empty kernel")));
            }
            if width % 2 == 0 {
                return Err(NetError::InvalidArchitecture(format!("block {i} kernel width {width} is even")));
            }
            if b.conv.bias.len() != out {
                return Err(NetError::Dimension(format!(
                    "block {i} bias has {} entries, expected {out}",
                    b.conv.bias.len()
                )));
            }
            if let Some(p) = prev {
                if p != inp {
                    return Err(NetError::Dimension(format!(
                        "block {i} expects {inp} input channels but previous block emits {p}"
                    )));
                }
            }
            prev = Some(out);
        }
        if let Some(h) = &self.head {
            let feat = self.output_channels();
            let dense = [("hidden", &h.hidden), ("main", &h.main), ("aux", &h.aux)];
            for (name, d) in dense {
                if d.bias.len() != d.out_features() {
                    return Err(NetError::Dimension(format!("{name} bias length mismatch")));
                }
            }
            if h.hidden.in_features() != feat {
                return Err(NetError::Dimension(format!(
                    "head expects {} features, network emits {feat}",
                    h.hidden.in_features()
                )));
            }
            if h.main.in_features() != h.hidden.out_features() || h.aux.in_features() != h.hidden.out_features() {
                return Err(NetError::Dimension("output layers do not match hidden width".into()));
            }
        }
        let finite = self.blocks.iter().all(|b| b.conv.kernel.iter().chain(b.conv.bias.iter()).all(|v| v.is_finite()))
            && self.head.iter().all(|h| {
                [&h.hidden, &h.main, &h.aux].iter().all(|d| d.weight.iter().chain(d.bias.iter()).all(|v| v.is_finite()))
            });
        if !finite {
            return Err(NetError::Dimension("weights contain non-finite values".into()));
        }
        Ok(())
    }

    /// Groups a flat layer list into blocks and an optional trailing head
    /// (`dense, relu, dense, dense`).
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        let mut blocks: Vec<ConvBlock> = Vec::new();
        let mut iter = layers.into_iter().peekable();
        while let Some(layer) = iter.next_if(|l| !matches!(l, Layer::Dense(_))) {
            match layer {
                Layer::Conv1d(conv) => {
                    let relu = iter.next_if(|l| matches!(l, Layer::Relu)).is_some();
                    let pool = iter.next_if(|l| matches!(l, Layer::MaxPool2)).is_some();
                    blocks.push(ConvBlock { conv, relu, pool });
                }
                other => {
                    return Err(NetError::InvalidArchitecture(format!(
                        "{other:?} must follow a conv layer in relu, maxpool order"
                    )))
                }
            }
        }
        let rest: Vec<Layer> = iter.collect();
        let head = match rest.as_slice() {
            [] => None,
            [Layer::Dense(hidden), Layer::Relu, Layer::Dense(main), Layer::Dense(aux)] => {
                Some(ClassifierHead { hidden: hidden.clone(), main: main.clone(), aux: aux.clone() })
            }
            _ => return Err(NetError::InvalidArchitecture("classifier head must be dense, relu, dense, dense".into())),
        };
        Self::new(blocks, head)
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(Layer::Conv1d(b.conv.clone()));
            if b.relu {
                out.push(Layer::Relu);
            }
            if b.pool {
                out.push(Layer::MaxPool2);
            }
        }
        if let Some(h) = &self.head {
            out.push(Layer::Dense(h.hidden.clone()));
            out.push(Layer::Relu);
            out.push(Layer::Dense(h.main.clone()));
            out.push(Layer::Dense(h.aux.clone()));
        }
        out
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.layers()
            .iter()
            .map(|l| match l {
                Layer::Conv1d(c) => LayerSpec::Conv1d {
                    in_channels: c.in_channels(),
                    out_channels: c.out_channels(),
                    kernel_width: c.width(),
                },
                Layer::Relu => LayerSpec::Relu,
                Layer::MaxPool2 => LayerSpec::MaxPool2,
                Layer::Dense(d) => LayerSpec::Dense { in_features: d.in_features(), out_features: d.out_features() },
            })
            .collect()
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConvBlock] {
        &mut self.blocks
    }

    /// Mutable access to blocks and head together.
    pub fn parts_mut(&mut self) -> (&mut [ConvBlock], Option<&mut ClassifierHead>) {
        (&mut self.blocks, self.head.as_mut())
    }

    pub fn head(&self) -> Option<&ClassifierHead> {
        self.head.as_ref()
    }

    pub fn head_mut(&mut self) -> Option<&mut ClassifierHead> {
        self.head.as_mut()
    }

    pub fn set_head(&mut self, head: Option<ClassifierHead>) -> Result<(), NetError> {
        let old = std::mem::replace(&mut self.head, head);
        if let Err(e) = self.validate() {
            self.head = old;
            return Err(e);
        }
        Ok(())
    }

    /// Drops the classifier head, keeping the feature layers.
    pub fn features_only(&self) -> Self {
        Self { blocks: self.blocks.clone(), head: None }
    }

    pub fn input_channels(&self) -> usize {
        self.blocks[0].conv.in_channels()
    }

    pub fn output_channels(&self) -> usize {
        self.blocks.last().expect("validated non-empty").conv.out_channels()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Rectifier-scaled Gaussian weights and zero biases. Each layer draws from
/// its own ChaCha stream keyed by layer index, so appending layers leaves
/// earlier ones unchanged.
pub fn init_random(arch: &[LayerSpec], seed: u64) -> Result<NetworkWeights, NetError> {
    let layers = arch
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            match *spec {
                LayerSpec::Conv1d { in_channels, out_channels, kernel_width } => {
                    let std = (2.0 / (in_channels * kernel_width).max(1) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    Layer::Conv1d(ConvLayer {
                        kernel: Array3::from_shape_simple_fn((out_channels, in_channels, kernel_width), || {
                            normal.sample(&mut rng)
                        }),
                        bias: Array1::zeros(out_channels),
                    })
                }
                LayerSpec::Dense { in_features, out_features } => {
                    let std = (2.0 / in_features.max(1) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    Layer::Dense(DenseLayer {
                        weight: Array2::from_shape_simple_fn((out_features, in_features), || normal.sample(&mut rng)),
                        bias: Array1::zeros(out_features),
                    })
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2 => Layer::MaxPool2,
            }
        })
        .collect();
    NetworkWeights::from_layers(layers)
}

/// Lays out every width-`width` time window of `input` as a column:
/// `cols[c * width + k, t] = input[c, t + k - width/2]`, zero outside.
fn im2col(input: ArrayView2<'_, f64>, width: usize) -> Array2<f64> {
    let (channels, time) = input.dim();
    let half = width / 2;
    let mut cols = Array2::zeros((channels * width, time));
    for c in 0..channels {
        let src = input.row(c);
        for k in 0..width {
            let mut dst = cols.row_mut(c * width + k);
            // output t reads input t + k - half
            let lo = half.saturating_sub(k);
            let hi = (time + half).saturating_sub(k).min(time);
            if lo < hi {
                dst.slice_mut(s![lo..hi]).assign(&src.slice(s![lo + k - half..hi + k - half]));
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, channels: usize, width: usize) -> Array2<f64> {
    let time = cols.ncols();
    let half = width / 2;
    let mut out = Array2::zeros((channels, time));
    for c in 0..channels {
        let mut dst = out.row_mut(c);
        for k in 0..width {
            let src = cols.row(c * width + k);
            let lo = half.saturating_sub(k);
            let hi = (time + half).saturating_sub(k).min(time);
            if lo < hi {
                let mut d = dst.slice_mut(s![lo + k - half..hi + k - half]);
                d += &src.slice(s![lo..hi]);
            }
        }
    }
    out
}

fn flat_kernel<'a>(kernel: &'a ndarray::ArrayView3<'a, f64>) -> ArrayView2<'a, f64> {
    let (o, i, w) = kernel.dim();
    kernel.into_shape_with_order((o, i * w)).expect("standard-layout kernels are contiguous")
}

/// Stride-1 same-padded convolution along time.
pub fn conv1d_forward(input: &FeatureMap, kernel: &Array3<f64>, bias: &Array1<f64>) -> Result<FeatureMap, NetError> {
    let (out_ch, in_ch, width) = kernel.dim();
    if input.channels() != in_ch {
        return Err(NetError::ChannelMismatch { expected: in_ch, got: input.channels() });
    }
    if width % 2 == 0 {
        return Err(NetError::InvalidArchitecture(format!("kernel width {width} is even")));
    }
    if bias.len() != out_ch {
        return Err(NetError::Dimension(format!("bias has {} entries, kernel has {out_ch} outputs", bias.len())));
    }
    let kernel = kernel.as_standard_layout();
    let cols = im2col(input.data.view(), width);
    let mut out = flat_kernel(&kernel.view()).dot(&cols);
    out += &bias.view().insert_axis(Axis(1));
    Ok(FeatureMap { data: out })
}

/// Gradient of the convolution with respect to its input (transposed-kernel correlation).
pub fn conv1d_backward_input(grad_out: &FeatureMap, kernel: &Array3<f64>) -> Result<FeatureMap, NetError> {
    let (out_ch, in_ch, width) = kernel.dim();
    if grad_out.channels() != out_ch {
        return Err(NetError::ChannelMismatch { expected: out_ch, got: grad_out.channels() });
    }
    let kernel = kernel.as_standard_layout();
    let dcols = flat_kernel(&kernel.view()).t().dot(&grad_out.data);
    Ok(FeatureMap { data: col2im(&dcols, in_ch, width) })
}

/// Kernel and bias gradients of the convolution.
pub fn conv1d_backward_weights(
    input: &FeatureMap,
    grad_out: &FeatureMap,
    width: usize,
) -> Result<(Array3<f64>, Array1<f64>), NetError> {
    if input.time() != grad_out.time() {
        return Err(NetError::Dimension(format!("input has {} steps, gradient has {}", input.time(), grad_out.time())));
    }
    let cols = im2col(input.data.view(), width);
    let dk = grad_out.data.dot(&cols.t()).as_standard_layout().into_owned();
    let dk =
        dk.into_shape_with_order((grad_out.channels(), input.channels(), width)).expect("gemm output is contiguous");
    Ok((dk, grad_out.data.sum_axis(Axis(1))))
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    FeatureMap { data: x.data.mapv(|v| v.max(0.0)) }
}

/// Non-overlapping pairwise max along time; a trailing odd step is dropped.
pub fn maxpool2(x: &FeatureMap) -> Result<FeatureMap, NetError> {
    let (ch, time) = x.dims();
    if time < 2 {
        return Err(NetError::TooShort(time));
    }
    let half = time / 2;
    let data = Array2::from_shape_fn((ch, half), |(c, t)| x.data[(c, 2 * t)].max(x.data[(c, 2 * t + 1)]));
    Ok(FeatureMap { data })
}

/// Routes each pooled gradient to the larger input of its pair; ties go to the earlier step.
pub fn maxpool2_backward(input: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap, NetError> {
    let (ch, time) = input.dims();
    if grad_out.dims() != (ch, time / 2) {
        return Err(NetError::Dimension(format!(
            "pool gradient {:?} does not match input {:?}",
            grad_out.dims(),
            (ch, time)
        )));
    }
    let mut g = Array2::zeros((ch, time));
    for c in 0..ch {
        for t in 0..time / 2 {
            let idx = if input.data[(c, 2 * t)] >= input.data[(c, 2 * t + 1)] { 2 * t } else { 2 * t + 1 };
            g[(c, idx)] = grad_out.data[(c, t)];
        }
    }
    Ok(FeatureMap { data: g })
}

/// Time-normalized Gram matrix, `G = F Fᵀ / T`.
pub fn gram(f: &FeatureMap) -> Array2<f64> {
    let t = f.time().max(1) as f64;
    f.data.dot(&f.data.t()) / t
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    /// After the nonlinearity, before pooling.
    pub activation: FeatureMap,
    pub pooled: Option<FeatureMap>,
}

impl BlockTrace {
    /// What the next block sees.
    pub fn output(&self) -> &FeatureMap {
        self.pooled.as_ref().unwrap_or(&self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn output(&self) -> &FeatureMap {
        self.blocks.last().expect("non-empty trace").output()
    }
}

pub fn forward_map(w: &NetworkWeights, input: &FeatureMap) -> Result<ForwardTrace, NetError> {
    if input.channels() != w.input_channels() {
        return Err(NetError::ChannelMismatch { expected: w.input_channels(), got: input.channels() });
    }
    let mut blocks: Vec<BlockTrace> = Vec::with_capacity(w.blocks.len());
    for b in &w.blocks {
        let x = blocks.last().map_or(input, |t| t.output());
        let z = conv1d_forward(x, &b.conv.kernel, &b.conv.bias)?;
        let activation = if b.relu { relu(&z) } else { z };
        let pooled = if b.pool { Some(maxpool2(&activation)?) } else { None };
        blocks.push(BlockTrace { activation, pooled });
    }
    Ok(ForwardTrace { blocks })
}

/// Runs the feature blocks on a spectrogram, bins as channels and frames as time.
pub fn forward(w: &NetworkWeights, spec: &LogMagSpectrogram) -> Result<ForwardTrace, NetError> {
    forward_map(w, &FeatureMap::from(spec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub kernel: Array3<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: FeatureMap,
    /// One entry per block; empty unless weight gradients were requested.
    pub blocks: Vec<ConvGrad>,
}

/// Reverse-mode pass through the feature blocks.
///
/// `activation_grads[b]` is the loss gradient with respect to block `b`'s
/// activation (post-relu, pre-pool); `output_grad` is the gradient with respect
/// to the final block output. Contributions from every block are summed.
pub fn backward(
    w: &NetworkWeights,
    input: &FeatureMap,
    trace: &ForwardTrace,
    activation_grads: &[Option<FeatureMap>],
    output_grad: Option<&FeatureMap>,
    with_weights: bool,
) -> Result<Gradients, NetError> {
    let nblocks = w.blocks.len();
    if trace.len() != nblocks || activation_grads.len() != nblocks {
        return Err(NetError::Dimension(format!(
            "{nblocks} blocks, trace has {}, gradients cover {}",
            trace.len(),
            activation_grads.len()
        )));
    }
    for (b, g) in activation_grads.iter().enumerate() {
        if let Some(g) = g {
            if g.dims() != trace.blocks[b].activation.dims() {
                return Err(NetError::Dimension(format!(
                    "block {b} gradient {:?} does not match activation {:?}",
                    g.dims(),
                    trace.blocks[b].activation.dims()
                )));
            }
        }
    }
    if let Some(g) = output_grad {
        if g.dims() != trace.output().dims() {
            return Err(NetError::Dimension("output gradient does not match network output".into()));
        }
    }

    let mut carry: Option<FeatureMap> = output_grad.cloned();
    let mut weight_grads = Vec::new();
    for b in (0..nblocks).rev() {
        let block = &w.blocks[b];
        let bt = &trace.blocks[b];
        let block_input = if b == 0 { input } else { trace.blocks[b - 1].output() };

        let mut g_act = match (carry.take(), block.pool) {
            (Some(g), true) => Some(maxpool2_backward(&bt.activation, &g)?),
            (g, _) => g,
        };
        if let Some(extra) = &activation_grads[b] {
            match g_act.as_mut() {
                Some(g) => g.data += &extra.data,
                None => g_act = Some(extra.clone()),
            }
        }
        let Some(mut g) = g_act else {
            if with_weights {
                let (o, i, k) = block.conv.kernel.dim();
                weight_grads.push(ConvGrad { kernel: Array3::zeros((o, i, k)), bias: Array1::zeros(o) });
            }
            continue;
        };
        if block.relu {
            ndarray::Zip::from(&mut g.data).and(&bt.activation.data).for_each(|gv, &a| {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            });
        }
        if with_weights {
            let (kernel, bias) = conv1d_backward_weights(block_input, &g, block.conv.width())?;
            weight_grads.push(ConvGrad { kernel, bias });
        }
        carry = Some(conv1d_backward_input(&g, &block.conv.kernel)?);
    }
    weight_grads.reverse();
    let input_grad = carry.unwrap_or_else(|| FeatureMap::zeros(input.channels(), input.time()));
    Ok(Gradients { input: input_grad, blocks: weight_grads })
}
