//! Content/style losses on network activations and the spectrogram
//! optimization loop.
//!
//! Content is matched on raw activations of one block, style on the
//! time-normalized Gram matrices of a set of blocks. Block indices in
//! [`TransferConfig`] are 1-based. Losses attach to each block's activation
//! after the nonlinearity and before pooling.

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio_io::AudioBuffer;
use crate::dsp::{stft, DspError, FftConfig, LogMagSpectrogram};
use crate::net::{
    self, default_architecture, gram, init_random, FeatureMap, LayerSpec, NetError, NetworkWeights, WeightsFileError,
};
use crate::optim::{adam_step, AdamState, OptimError};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("sample rates differ: content {content} Hz, style {style} Hz")]
    SampleRateMismatch { content: u32, style: u32 },
    #[error("invalid transfer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Weights(#[from] WeightsFileError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    Content,
    /// Uniform noise in `[0, level · max(content)]`.
    Noise {
        seed: u64,
        level: f64,
    },
    ContentPlusNoise {
        seed: u64,
        level: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    Random { seed: u64, architecture: Vec<LayerSpec> },
    File(PathBuf),
    Provided(NetworkWeights),
}

impl WeightsSource {
    pub fn resolve(&self) -> Result<NetworkWeights, TransferError> {
        Ok(match self {
            WeightsSource::Random { seed, architecture } => init_random(architecture, *seed)?,
            WeightsSource::File(path) => net::load_weights(path)?,
            WeightsSource::Provided(w) => w.clone(),
        })
    }
}

pub const DEFAULT_NOISE_LEVEL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub alpha: f64,
    pub beta: f64,
    pub content_layer: usize,
    pub style_layers: Vec<usize>,
    pub iterations: usize,
    pub step_size: f64,
    pub init_mode: InitMode,
    pub weights_source: WeightsSource,
    pub fft: FftConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        let fft = FftConfig::default();
        Self {
            alpha: 1.0,
            beta: 1e3,
            content_layer: 2,
            style_layers: vec![1, 2],
            iterations: 500,
            step_size: 0.05,
            init_mode: InitMode::Content,
            weights_source: WeightsSource::Random { seed: 0, architecture: default_architecture(fft.bins()) },
            fft,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self, blocks: usize) -> Result<(), TransferError> {
        let bad = |m: String| Err(TransferError::InvalidConfig(m));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha == 0.0 && self.beta == 0.0) {
            return bad(format!(
                "weights alpha={} beta={} must be nonnegative and not both zero",
                self.alpha, self.beta
            ));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size {} must be positive", self.step_size));
        }
        if !(1..=blocks).contains(&self.content_layer) {
            return bad(format!("content layer {} outside 1..={blocks}", self.content_layer));
        }
        if let Some(l) = self.style_layers.iter().find(|l| !(1..=blocks).contains(*l)) {
            return bad(format!("style layer {l} outside 1..={blocks}"));
        }
        match self.init_mode {
            InitMode::Noise { level, .. } | InitMode::ContentPlusNoise { level, .. }
                if level.is_nan() || level < 0.0 =>
            {
                bad(format!("noise level {level} must be nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

/// Weighted loss components at one iteration; `total = content + style`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    pub output: LogMagSpectrogram,
    pub loss_trace: Vec<LossRecord>,
    pub config: TransferConfig,
}

fn same_dims(a: &FeatureMap, b: (usize, usize), what: &str) -> Result<(), NetError> {
    if (a.channels(), a.time()) != b {
        return Err(NetError::Dimension(format!("{what}: {:?} vs {:?}", (a.channels(), a.time()), b)));
    }
    Ok(())
}

/// `L = Σ(f − p)² / (2CT)` and its gradient `(f − p) / (CT)`.
pub fn content_loss(f: &FeatureMap, p: &FeatureMap) -> Result<(f64, FeatureMap), NetError> {
    same_dims(f, (p.channels(), p.time()), "content features")?;
    let scale = (f.channels() * f.time()) as f64;
    let diff = f.data() - p.data();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * scale);
    Ok((loss, FeatureMap::new(diff / scale)?))
}

/// `L = Σ(G − A)² / (4C²)` with `G` the time-normalized Gram of `f`;
/// gradient `(G − A) f / (C² T)`.
pub fn style_loss(f: &FeatureMap, target_gram: &Array2<f64>) -> Result<(f64, FeatureMap), NetError> {
    let c = f.channels();
    if target_gram.dim() != (c, c) {
        return Err(NetError::Dimension(format!("target gram {:?} for {c} channels", target_gram.dim())));
    }
    let diff = gram(f) - target_gram;
    let c2 = (c * c) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / (4.0 * c2);
    let grad = diff.dot(f.data()) / (c2 * f.time() as f64);
    Ok((loss, FeatureMap::new(grad)?))
}

/// Gradient of a loss defined on block activations with respect to the
/// network input. `layer_grads[b]` is `∂L/∂activation_b` (or `None`).
pub fn backprop_to_input(
    w: &NetworkWeights,
    x: &FeatureMap,
    layer_grads: &[Option<FeatureMap>],
) -> Result<Array2<f64>, NetError> {
    let trace = net::forward_map(w, x)?;
    Ok(net::backward(w, x, &trace, layer_grads, None, false)?.input.into_data())
}

/// The full transfer loss as a function of the input grid.
#[derive(Debug, Clone)]
pub struct TransferObjective<'w> {
    weights: &'w NetworkWeights,
    alpha: f64,
    beta: f64,
    /// 0-based block index and target activations.
    content: (usize, FeatureMap),
    /// 0-based block index and target Gram.
    style: Vec<(usize, Array2<f64>)>,
}

impl<'w> TransferObjective<'w> {
    /// Extracts targets from content and style inputs. Layer indices are 1-based.
    pub fn new(
        weights: &'w NetworkWeights,
        content: &FeatureMap,
        style: &FeatureMap,
        alpha: f64,
        beta: f64,
        content_layer: usize,
        style_layers: &[usize],
    ) -> Result<Self, NetError> {
        let blocks = weights.block_count();
        let check = |l: usize| {
            if (1..=blocks).contains(&l) {
                Ok(l - 1)
            } else {
                Err(NetError::InvalidArchitecture(format!("layer {l} outside 1..={blocks}")))
            }
        };
        let content_idx = check(content_layer)?;
        let style_idx = style_layers.iter().map(|&l| check(l)).collect::<Result<Vec<_>, _>>()?;

        let ct = net::forward_map(weights, content)?;
        let content_target = ct.blocks[content_idx].activation.clone();
        let style = if beta > 0.0 && !style_idx.is_empty() {
            let st = net::forward_map(weights, style)?;
            style_idx.into_iter().map(|b| (b, gram(&st.blocks[b].activation))).collect()
        } else {
            Vec::new()
        };
        Ok(Self { weights, alpha, beta, content: (content_idx, content_target), style })
    }

    pub fn evaluate(&self, x: &FeatureMap) -> Result<(LossRecord, Array2<f64>), NetError> {
        let trace = net::forward_map(self.weights, x)?;
        let mut grads: Vec<Option<FeatureMap>> = vec![None; trace.len()];
        let mut add = |b: usize, g: FeatureMap, scale: f64| -> Result<(), NetError> {
            let g = g.into_data() * scale;
            match &mut grads[b] {
                Some(existing) => *existing.data_mut() += &g,
                slot => *slot = Some(FeatureMap::new(g)?),
            }
            Ok(())
        };

        let mut content = 0.0;
        if self.alpha > 0.0 {
            let (b, target) = &self.content;
            let (l, g) = content_loss(&trace.blocks[*b].activation, target)?;
            content = self.alpha * l;
            add(*b, g, self.alpha)?;
        }
        let mut style = 0.0;
        for (b, target) in &self.style {
            let (l, g) = style_loss(&trace.blocks[*b].activation, target)?;
            style += self.beta * l;
            add(*b, g, self.beta)?;
        }
        let grad = if grads.iter().all(Option::is_none) {
            Array2::zeros((x.channels(), x.time()))
        } else {
            net::backward(self.weights, x, &trace, &grads, None, false)?.input.into_data()
        };
        Ok((LossRecord { total: content + style, content, style }, grad))
    }
}

/// Starting point of the optimization for the given content grid.
pub fn initial_grid(content: &Array2<f64>, mode: &InitMode) -> Array2<f64> {
    let peak = content.iter().copied().fold(0.0, f64::max);
    let noise = |seed: u64, level: f64| {
        let hi = level * peak;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn(content.dim(), || if hi > 0.0 { rng.random_range(0.0..=hi) } else { 0.0 })
    };
    match *mode {
        InitMode::Content => content.clone(),
        InitMode::Noise { seed, level } => noise(seed, level),
        InitMode::ContentPlusNoise { seed, level } => content + &noise(seed, level),
    }
}

/// Optimizes a log-magnitude grid against already-computed spectrograms.
pub fn transfer_spectrograms(
    content: &LogMagSpectrogram,
    style: &LogMagSpectrogram,
    weights: &NetworkWeights,
    cfg: &TransferConfig,
) -> Result<TransferResult, TransferError> {
    cfg.validate(weights.block_count())?;
    if content.sample_rate() != style.sample_rate() {
        return Err(TransferError::SampleRateMismatch { content: content.sample_rate(), style: style.sample_rate() });
    }
    if content.bins() != weights.input_channels() {
        return Err(NetError::ChannelMismatch { expected: weights.input_channels(), got: content.bins() }.into());
    }
    let objective = TransferObjective::new(
        weights,
        &FeatureMap::from(content),
        &FeatureMap::from(style),
        cfg.alpha,
        cfg.beta,
        cfg.content_layer,
        &cfg.style_layers,
    )?;

    let mut x = initial_grid(content.data(), &cfg.init_mode);
    let mut state = AdamState::new(x.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        let input = FeatureMap::new(x)?;
        let (losses, grad) = objective.evaluate(&input)?;
        trace.push(losses);
        x = input.into_data();
        let params = x.as_slice_mut().expect("owned grids are contiguous");
        adam_step(params, grad.as_slice().expect("contiguous"), &mut state, cfg.step_size, t as u64)?;
        x.mapv_inplace(|v| v.max(0.0));
    }
    let output = LogMagSpectrogram::new(x, *content.config(), content.sample_rate())?;
    Ok(TransferResult { output, loss_trace: trace, config: cfg.clone() })
}

pub fn run_transfer(
    content: &AudioBuffer,
    style: &AudioBuffer,
    cfg: &TransferConfig,
) -> Result<TransferResult, TransferError> {
    if content.sample_rate() != style.sample_rate() {
        return Err(TransferError::SampleRateMismatch { content: content.sample_rate(), style: style.sample_rate() });
    }
    let c = stft(content, &cfg.fft)?.to_log_mag();
    let s = stft(style, &cfg.fft)?.to_log_mag();
    let weights = cfg.weights_source.resolve()?;
    transfer_spectrograms(&c, &s, &weights, cfg)
}
