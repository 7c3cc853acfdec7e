//! Multi-task spectrogram classifier: conv feature blocks, global average
//! pooling over time, a 32-wide hidden layer, and two output layers (main
//! classes and 16 spectral-centroid classes).

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::audio_io::{read_wav, AudioBuffer, AudioError};
use crate::dsp::{spectral_centroid, stft, DspError, FftConfig, LogMagSpectrogram};
use crate::net::{
    self, conv_stack, init_random, ClassifierHead, ConvGrad, DenseLayer, FeatureMap, LayerSpec, NetError,
    NetworkWeights,
};
use crate::optim::{adam_step, AdamState, OptimError};

pub const CENTROID_CLASSES: usize = 16;
pub const HIDDEN_WIDTH: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {CENTROID_CLASSES} clips to form centroid classes, got {0}")]
    TooFewClips(usize),
    #[error("clip {0} is silent; spectral centroid undefined")]
    SilentClip(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("clip {0} has no centroid class assigned")]
    Unassigned(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("weights have no classifier head")]
    NoHead,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub audio: AudioBuffer,
    pub class_id: usize,
    pub centroid_class: Option<usize>,
}

impl LabeledClip {
    pub fn new(audio: AudioBuffer, class_id: usize) -> Self {
        Self { audio, class_id, centroid_class: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    pub aux_weight: f64,
    pub num_classes: usize,
    /// Conv block widths.
    pub channels: Vec<usize>,
    pub kernel_width: usize,
    pub fft: FftConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            step_size: 1e-3,
            seed: 0,
            aux_weight: 0.3,
            num_classes: 50,
            channels: vec![64, 16],
            kernel_width: net::DEFAULT_KERNEL_WIDTH,
            fft: FftConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Vec<LayerSpec> {
        let mut arch = conv_stack(self.fft.bins(), &self.channels, self.kernel_width, true);
        let feat = *self.channels.last().unwrap_or(&0);
        arch.extend([
            LayerSpec::Dense { in_features: feat, out_features: HIDDEN_WIDTH },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: HIDDEN_WIDTH, out_features: self.num_classes },
            LayerSpec::Dense { in_features: HIDDEN_WIDTH, out_features: CENTROID_CLASSES },
        ]);
        arch
    }

    fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.num_classes == 0 {
            return bad("epochs, batch size and class count must be positive");
        }
        if [self.step_size, self.aux_weight].iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("step size and aux weight must be nonnegative");
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("need at least one conv block of positive width");
        }
        Ok(())
    }
}

/// Sorts clips by spectral centroid and splits them into 16 contiguous groups
/// whose sizes differ by at most one. Ties keep input order.
pub fn assign_centroid_classes(mut clips: Vec<LabeledClip>, fft: &FftConfig) -> Result<Vec<LabeledClip>, TrainError> {
    let n = clips.len();
    if n < CENTROID_CLASSES {
        return Err(TrainError::TooFewClips(n));
    }
    let centroids = clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mag = stft(&c.audio, fft)?.magnitude();
            spectral_centroid(&mag).map_err(|e| match e {
                DspError::Silent => TrainError::SilentClip(i),
                other => other.into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]));
    for (rank, &i) in order.iter().enumerate() {
        clips[i].centroid_class = Some(rank * CENTROID_CLASSES / n);
    }
    Ok(clips)
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// `−log softmax(logits)[label]` and its gradient `p − onehot(label)`.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> Result<(f64, Array1<f64>), TrainError> {
    if label >= logits.len() {
        return Err(TrainError::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = (log_sum - logits[label]).max(0.0);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

fn head_of(w: &NetworkWeights) -> Result<&ClassifierHead, TrainError> {
    w.head().ok_or(TrainError::NoHead)
}

struct Pass {
    trace: net::ForwardTrace,
    pooled: Array1<f64>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
    main: Array1<f64>,
    aux: Array1<f64>,
}

fn run_pass(w: &NetworkWeights, x: &FeatureMap) -> Result<Pass, TrainError> {
    let head = head_of(w)?;
    let trace = net::forward_map(w, x)?;
    let pooled = global_average(trace.output());
    let hidden_pre = head.hidden.apply(&pooled);
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let main = head.main.apply(&hidden);
    let aux = head.aux.apply(&hidden);
    Ok(Pass { trace, pooled, hidden_pre, hidden, main, aux })
}

/// Mean over time of each channel.
pub fn global_average(map: &FeatureMap) -> Array1<f64> {
    map.data().mean_axis(Axis(1)).expect("feature maps have at least one step")
}

/// Main-task and centroid-task logits for one spectrogram.
pub fn classifier_forward(
    w: &NetworkWeights,
    spec: &LogMagSpectrogram,
) -> Result<(Array1<f64>, Array1<f64>), TrainError> {
    let p = run_pass(w, &FeatureMap::from(spec))?;
    Ok((p.main, p.aux))
}

/// Per-parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub blocks: Vec<ConvGrad>,
    pub hidden: DenseLayer,
    pub main: DenseLayer,
    pub aux: DenseLayer,
}

impl ModelGrads {
    fn zeros_like(w: &NetworkWeights) -> Result<Self, TrainError> {
        let head = head_of(w)?;
        let z = |d: &DenseLayer| DenseLayer::zeros(d.in_features(), d.out_features());
        Ok(Self {
            blocks: w
                .blocks()
                .iter()
                .map(|b| ConvGrad {
                    kernel: ndarray::Array3::zeros(b.conv.kernel.dim()),
                    bias: Array1::zeros(b.conv.bias.len()),
                })
                .collect(),
            hidden: z(&head.hidden),
            main: z(&head.main),
            aux: z(&head.aux),
        })
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(b.kernel.as_slice().expect("contiguous"));
            out.push(b.bias.as_slice().expect("contiguous"));
        }
        for d in [&self.hidden, &self.main, &self.aux] {
            out.push(d.weight.as_slice().expect("contiguous"));
            out.push(d.bias.as_slice().expect("contiguous"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.kernel.as_slice_mut().expect("contiguous"));
            out.push(b.bias.as_slice_mut().expect("contiguous"));
        }
        for d in [&mut self.hidden, &mut self.main, &mut self.aux] {
            out.push(d.weight.as_slice_mut().expect("contiguous"));
            out.push(d.bias.as_slice_mut().expect("contiguous"));
        }
        out
    }

    /// Flattened in the same order as [`parameter_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn param_slices_mut(w: &mut NetworkWeights) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    let (blocks, head) = w.parts_mut();
    for b in blocks {
        if !b.conv.kernel.is_standard_layout() {
            b.conv.kernel = b.conv.kernel.as_standard_layout().into_owned();
        }
        out.push(b.conv.kernel.as_slice_mut().expect("contiguous"));
        out.push(b.conv.bias.as_slice_mut().expect("contiguous"));
    }
    if let Some(h) = head {
        for d in [&mut h.hidden, &mut h.main, &mut h.aux] {
            if !d.weight.is_standard_layout() {
                d.weight = d.weight.as_standard_layout().into_owned();
            }
            out.push(d.weight.as_slice_mut().expect("contiguous"));
            out.push(d.bias.as_slice_mut().expect("contiguous"));
        }
    }
    out
}

/// All trainable values in a fixed order: per block kernel then bias, then
/// hidden, main and aux weight/bias pairs.
pub fn parameter_vector(w: &NetworkWeights) -> Vec<f64> {
    let mut copy = w.clone();
    param_slices_mut(&mut copy).into_iter().flat_map(|s| s.to_vec()).collect()
}

pub fn set_parameter_vector(w: &mut NetworkWeights, values: &[f64]) -> Result<(), TrainError> {
    let mut slices = param_slices_mut(w);
    let total: usize = slices.iter().map(|s| s.len()).sum();
    if total != values.len() {
        return Err(TrainError::InvalidConfig(format!("expected {total} parameters, got {}", values.len())));
    }
    let mut offset = 0;
    for s in slices.iter_mut() {
        let n = s.len();
        s.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub main: f64,
    pub aux: f64,
    pub main_correct: bool,
}

/// Loss `CE_main + aux_weight · CE_centroid` for one input and the gradient
/// with respect to every weight.
pub fn loss_and_gradients(
    w: &NetworkWeights,
    x: &FeatureMap,
    label: usize,
    centroid_label: usize,
    aux_weight: f64,
) -> Result<(SampleLoss, ModelGrads), TrainError> {
    let head = head_of(w)?;
    let pass = run_pass(w, x)?;
    let (main_loss, d_main) = cross_entropy(&pass.main, label)?;
    let (aux_loss, d_aux) = cross_entropy(&pass.aux, centroid_label)?;
    let d_aux = d_aux * aux_weight;

    let outer = |g: &Array1<f64>, x: &Array1<f64>| Array2::from_shape_fn((g.len(), x.len()), |(i, j)| g[i] * x[j]);
    let main_grad = DenseLayer { weight: outer(&d_main, &pass.hidden), bias: d_main.clone() };
    let aux_grad = DenseLayer { weight: outer(&d_aux, &pass.hidden), bias: d_aux.clone() };
    let mut d_hidden = head.main.weight.t().dot(&d_main) + head.aux.weight.t().dot(&d_aux);
    ndarray::Zip::from(&mut d_hidden).and(&pass.hidden_pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    let hidden_grad = DenseLayer { weight: outer(&d_hidden, &pass.pooled), bias: d_hidden.clone() };
    let d_pooled = head.hidden.weight.t().dot(&d_hidden);

    let out = pass.trace.output();
    let steps = out.time() as f64;
    let d_out = Array2::from_shape_fn((out.channels(), out.time()), |(c, _)| d_pooled[c] / steps);
    let no_activation_grads = vec![None; w.block_count()];
    let back = net::backward(w, x, &pass.trace, &no_activation_grads, Some(&FeatureMap::new(d_out)?), true)?;

    let predicted = argmax(&pass.main);
    Ok((
        SampleLoss { main: main_loss, aux: aux_loss, main_correct: predicted == label },
        ModelGrads { blocks: back.blocks, hidden: hidden_grad, main: main_grad, aux: aux_grad },
    ))
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub main_loss: f64,
    pub aux_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each update.
    pub main_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub weights: NetworkWeights,
    pub log: Vec<EpochStats>,
}

fn features(clips: &[LabeledClip], fft: &FftConfig) -> Result<Vec<FeatureMap>, TrainError> {
    clips.iter().map(|c| Ok(FeatureMap::from(&stft(&c.audio, fft)?.to_log_mag()))).collect()
}

/// Minibatch Adam on the multi-task loss, starting from rectifier-scaled
/// random weights. Deterministic for a given seed.
pub fn train(clips: &[LabeledClip], cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let weights = init_random(&cfg.architecture(), cfg.seed)?;
    train_from(weights, clips, cfg)
}

/// Like [`train`], continuing from the given weights.
pub fn train_from(
    mut weights: NetworkWeights,
    clips: &[LabeledClip],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let head = head_of(&weights)?;
    let classes = head.main.out_features();
    let mut labels = Vec::with_capacity(clips.len());
    for (i, c) in clips.iter().enumerate() {
        let centroid = c.centroid_class.ok_or(TrainError::Unassigned(i))?;
        if c.class_id >= classes {
            return Err(TrainError::LabelOutOfRange { label: c.class_id, classes });
        }
        labels.push((c.class_id, centroid));
    }
    let inputs = features(clips, &cfg.fft)?;

    let mut states: Vec<AdamState> = param_slices_mut(&mut weights).iter().map(|s| AdamState::new(s.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut step = 0u64;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut main_sum, mut aux_sum, mut correct) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<ModelGrads> = None;
            for &i in batch {
                let (label, centroid) = labels[i];
                let (loss, g) = loss_and_gradients(&weights, &inputs[i], label, centroid, cfg.aux_weight)?;
                main_sum += loss.main;
                aux_sum += loss.aux;
                correct += loss.main_correct as usize;
                match acc.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
            let mut grads = acc.unwrap_or(ModelGrads::zeros_like(&weights)?);
            grads.scale(1.0 / batch.len() as f64);
            step += 1;
            for ((p, g), s) in param_slices_mut(&mut weights).into_iter().zip(grads.slices()).zip(&mut states) {
                adam_step(p, g, s, cfg.step_size, step)?;
            }
        }
        let n = clips.len() as f64;
        log.push(EpochStats { epoch, main_loss: main_sum / n, aux_loss: aux_sum / n, main_acc: correct as f64 / n });
    }
    Ok(TrainReport { weights, log })
}

/// Fraction of clips whose top logit matches the label, for the main head and
/// the centroid head (the latter over clips with an assigned centroid class).
pub fn evaluate(w: &NetworkWeights, clips: &[LabeledClip], fft: &FftConfig) -> Result<(f64, f64), TrainError> {
    let (mut main_hits, mut aux_hits, mut aux_total) = (0usize, 0usize, 0usize);
    for c in clips {
        let spec = stft(&c.audio, fft)?.to_log_mag();
        let (main, aux) = classifier_forward(w, &spec)?;
        main_hits += (argmax(&main) == c.class_id) as usize;
        if let Some(cc) = c.centroid_class {
            aux_total += 1;
            aux_hits += (argmax(&aux) == cc) as usize;
        }
    }
    let frac = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Ok((frac(main_hits, clips.len()), frac(aux_hits, aux_total)))
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    filename: String,
    class_id: usize,
}

/// Loads `filename,class_id` rows (with header) relative to `data_dir`.
pub fn load_dataset(data_dir: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<Vec<LabeledClip>, TrainError> {
    let data_dir = data_dir.as_ref();
    let manifest = manifest.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| TrainError::Dataset(format!("{}: {e}", manifest.display())))?;
    let mut clips = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| TrainError::Dataset(format!("{}: {e}", manifest.display())))?;
        let path: PathBuf = data_dir.join(&row.filename);
        clips.push(LabeledClip::new(read_wav(&path)?, row.class_id));
    }
    if clips.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(clips)
}
