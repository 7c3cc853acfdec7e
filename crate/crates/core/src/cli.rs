//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spectral_style::audio_io::{read_wav, write_wav, AudioBuffer};
use spectral_style::dsp::{self, stft, FftConfig, LogMagSpectrogram};
use spectral_style::net::{self, conv_stack, init_random, save_weights, NetworkWeights};
use spectral_style::phase::{reconstruct, spectral_convergence, Method};
use spectral_style::train::{self, assign_centroid_classes, evaluate, TrainConfig};
use spectral_style::transfer::{
    transfer_spectrograms, InitMode, LossRecord, TransferConfig, TransferResult, WeightsSource,
};

#[derive(Debug, Parser)]
#[command(name = "spectral-style", version, about = "Spectrogram style transfer with frequency bins as channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transfer the style of one clip onto the content of another
    Transfer(TransferCmd),
    /// Run the trained/random weights x with/without noise grid
    Figure1(Figure1Cmd),
    /// Rebuild audio from the magnitude spectrogram of a clip
    Reconstruct(ReconstructCmd),
    /// Train the multi-task classifier on a labelled WAV corpus
    Train(TrainCmd),
    /// Render a clip's spectrogram as PNG (and optionally CSV)
    Spectrogram(SpectrogramCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PhaseMethod {
    #[value(name = "griffinlim")]
    GriffinLim,
    #[value(name = "spsi")]
    Spsi,
    #[value(name = "spsi+gl")]
    SpsiGl,
}

impl PhaseMethod {
    fn method(self, iters: usize) -> Method {
        match self {
            PhaseMethod::GriffinLim => Method::GriffinLim(iters),
            PhaseMethod::Spsi => Method::Spsi,
            PhaseMethod::SpsiGl => Method::SpsiThenGl(iters),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Content,
    Noise,
    #[value(name = "content+noise")]
    ContentNoise,
}

#[derive(Debug, Args)]
struct FftArgs {
    /// Transform size (power of two)
    #[arg(long, default_value_t = dsp::DEFAULT_FFT_SIZE)]
    fft_size: usize,
    /// Hop between frames in samples
    #[arg(long, default_value_t = dsp::DEFAULT_HOP)]
    hop: usize,
}

impl FftArgs {
    fn config(&self) -> Result<FftConfig> {
        Ok(FftConfig::new(self.fft_size, self.hop)?)
    }
}

#[derive(Debug, Args)]
struct OptimArgs {
    /// Content loss weight
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Style loss weight
    #[arg(long, default_value_t = 1e3)]
    beta: f64,
    /// Optimization steps
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Adam step size
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    /// Block whose activations define content (1-based)
    #[arg(long, default_value_t = 2)]
    content_layer: usize,
    /// Blocks whose Gram matrices define style (1-based, comma separated)
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    style_layers: Vec<usize>,
    /// Noise amplitude as a fraction of the content spectrogram's maximum
    #[arg(long, default_value_t = spectral_style::transfer::DEFAULT_NOISE_LEVEL)]
    noise_level: f64,
    /// Seed for initial-image noise
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Phase reconstruction for the output audio
    #[arg(long, value_enum, default_value_t = PhaseMethod::SpsiGl)]
    phase: PhaseMethod,
    /// Griffin-Lim iterations
    #[arg(long, default_value_t = spectral_style::phase::DEFAULT_GL_ITERATIONS)]
    gl_iters: usize,
    #[command(flatten)]
    fft: FftArgs,
}

#[derive(Debug, Args)]
struct TransferCmd {
    /// Content WAV file
    #[arg(long)]
    content: PathBuf,
    /// Style WAV file
    #[arg(long)]
    style: PathBuf,
    /// Output WAV; a PNG with the same stem is written next to it
    #[arg(long)]
    out: PathBuf,
    /// Trained ASTW weight file
    #[arg(long, conflicts_with = "random_seed")]
    weights: Option<PathBuf>,
    /// Seed for random weights (used when --weights is absent; default 0)
    #[arg(long)]
    random_seed: Option<u64>,
    /// Conv block widths for random weights
    #[arg(long, value_delimiter = ',', default_value = "2048,64")]
    channels: Vec<usize>,
    /// Conv kernel width for random weights
    #[arg(long, default_value_t = net::DEFAULT_KERNEL_WIDTH)]
    kernel_width: usize,
    /// Initial spectrogram
    #[arg(long, value_enum, default_value_t = InitArg::Content)]
    init: InitArg,
    /// Loss trace CSV [default: loss.csv next to --out]
    #[arg(long)]
    loss: Option<PathBuf>,
    #[command(flatten)]
    opt: OptimArgs,
}

#[derive(Debug, Args)]
struct Figure1Cmd {
    /// Content WAV file
    #[arg(long)]
    content: PathBuf,
    /// Style WAV file
    #[arg(long)]
    style: PathBuf,
    /// Trained ASTW weight file
    #[arg(long)]
    weights: PathBuf,
    /// Output directory for a..d artifacts
    #[arg(long)]
    outdir: PathBuf,
    /// Seed for the random-weight conditions
    #[arg(long, default_value_t = 0)]
    random_seed: u64,
    #[command(flatten)]
    opt: OptimArgs,
}

#[derive(Debug, Args)]
struct ReconstructCmd {
    /// Input WAV whose magnitude spectrogram is inverted
    #[arg(long = "in")]
    input: PathBuf,
    /// Output WAV
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PhaseMethod::SpsiGl)]
    method: PhaseMethod,
    /// Griffin-Lim iterations
    #[arg(long, default_value_t = spectral_style::phase::DEFAULT_GL_ITERATIONS)]
    iters: usize,
    /// Convergence trace CSV (iteration,value)
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    fft: FftArgs,
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// Directory holding the WAV files
    #[arg(long)]
    data: PathBuf,
    /// CSV manifest with a `filename,class_id` header
    #[arg(long)]
    manifest: PathBuf,
    /// Output ASTW weight file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    step_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight of the spectral-centroid task
    #[arg(long, default_value_t = 0.3)]
    aux_weight: f64,
    /// Main-task classes [default: largest class_id + 1]
    #[arg(long)]
    num_classes: Option<usize>,
    /// Conv block widths
    #[arg(long, value_delimiter = ',', default_value = "64,16")]
    channels: Vec<usize>,
    #[arg(long, default_value_t = net::DEFAULT_KERNEL_WIDTH)]
    kernel_width: usize,
    /// Training log CSV [default: <out>.log.csv]
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    fft: FftArgs,
}

#[derive(Debug, Args)]
struct SpectrogramCmd {
    /// Input WAV
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
    /// Also write the magnitude grid as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    fft: FftArgs,
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub(crate) fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Transfer(c) => cmd_transfer(c),
        Command::Figure1(c) => cmd_figure1(c),
        Command::Reconstruct(c) => cmd_reconstruct(c),
        Command::Train(c) => cmd_train(c),
        Command::Spectrogram(c) => cmd_spectrogram(c),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

fn load_pair(content: &Path, style: &Path, fft: &FftConfig) -> Result<(LogMagSpectrogram, LogMagSpectrogram)> {
    let c = read_wav(content).with_context(|| format!("reading {}", content.display()))?;
    let s = read_wav(style).with_context(|| format!("reading {}", style.display()))?;
    if c.sample_rate() != s.sample_rate() {
        bail!("sample rates differ: content {} Hz, style {} Hz", c.sample_rate(), s.sample_rate());
    }
    Ok((stft(&c, fft)?.to_log_mag(), stft(&s, fft)?.to_log_mag()))
}

fn transfer_config(opt: &OptimArgs, init: InitMode, weights: WeightsSource) -> Result<TransferConfig> {
    Ok(TransferConfig {
        alpha: opt.alpha,
        beta: opt.beta,
        content_layer: opt.content_layer,
        style_layers: opt.style_layers.clone(),
        iterations: opt.iterations,
        step_size: opt.step_size,
        init_mode: init,
        weights_source: weights,
        fft: opt.fft.config()?,
    })
}

fn init_mode(arg: InitArg, opt: &OptimArgs) -> InitMode {
    let (seed, level) = (opt.noise_seed, opt.noise_level);
    match arg {
        InitArg::Content => InitMode::Content,
        InitArg::Noise => InitMode::Noise { seed, level },
        InitArg::ContentNoise => InitMode::ContentPlusNoise { seed, level },
    }
}

fn write_loss_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "iteration,total,content,style")?;
    for (i, r) in trace.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, r.total, r.content, r.style)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "iteration,value")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Scales the signal down if it would clip.
fn limit_peak(buf: AudioBuffer) -> AudioBuffer {
    let peak = buf.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak <= 1.0 {
        return buf;
    }
    let rate = buf.sample_rate();
    let scaled = buf.into_samples().into_iter().map(|v| v * 0.99 / peak).collect();
    AudioBuffer::new(scaled, rate).expect("finite")
}

/// Writes `<wav>`, `<wav stem>.png` and the loss CSV for one transfer result.
fn emit_transfer(result: &TransferResult, phase: Method, wav: &Path, loss: &Path) -> Result<()> {
    let mag = result.output.from_log();
    let report = reconstruct(&mag, &phase)?;
    write_wav(wav, &limit_peak(report.signal))?;
    dsp::write_png(&mag, wav.with_extension("png"))?;
    write_loss_csv(loss, &result.loss_trace)
}

fn cmd_transfer(c: TransferCmd) -> Result<()> {
    let fft = c.opt.fft.config()?;
    let (content, style) = load_pair(&c.content, &c.style, &fft)?;
    let weights = match &c.weights {
        Some(path) => WeightsSource::File(path.clone()),
        None => WeightsSource::Random {
            seed: c.random_seed.unwrap_or(0),
            architecture: conv_stack(fft.bins(), &c.channels, c.kernel_width, true),
        },
    };
    let cfg = transfer_config(&c.opt, init_mode(c.init, &c.opt), weights)?;
    let w = cfg.weights_source.resolve()?;
    let result = transfer_spectrograms(&content, &style, &w, &cfg)?;
    let loss = c.loss.clone().unwrap_or_else(|| sibling(&c.out, "loss.csv"));
    emit_transfer(&result, c.opt.phase.method(c.opt.gl_iters), &c.out, &loss)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

/// Condition letters: trained/random weights crossed with plain/noisy initial image.
const FIGURE1_CELLS: [(&str, bool, bool); 4] =
    [("a", true, false), ("b", false, false), ("c", true, true), ("d", false, true)];

fn cmd_figure1(c: Figure1Cmd) -> Result<()> {
    let fft = c.opt.fft.config()?;
    let (content, style) = load_pair(&c.content, &c.style, &fft)?;
    let trained =
        net::load_weights(&c.weights).with_context(|| format!("loading {}", c.weights.display()))?.features_only();
    let random: NetworkWeights = init_random(&trained.architecture(), c.random_seed)?;
    std::fs::create_dir_all(&c.outdir).with_context(|| format!("creating {}", c.outdir.display()))?;

    for (letter, use_trained, noisy) in FIGURE1_CELLS {
        let w = if use_trained { &trained } else { &random };
        let init = if noisy { init_mode(InitArg::ContentNoise, &c.opt) } else { InitMode::Content };
        let cfg = transfer_config(&c.opt, init, WeightsSource::Provided(w.clone()))?;
        let result = transfer_spectrograms(&content, &style, w, &cfg)?;
        let wav = c.outdir.join(format!("{letter}.wav"));
        let loss = c.outdir.join(format!("{letter}_loss.csv"));
        emit_transfer(&result, c.opt.phase.method(c.opt.gl_iters), &wav, &loss)?;
    }
    Ok(())
}

fn cmd_reconstruct(c: ReconstructCmd) -> Result<()> {
    let fft = c.fft.config()?;
    let input = read_wav(&c.input).with_context(|| format!("reading {}", c.input.display()))?;
    let target = stft(&input, &fft)?.magnitude();
    let report = reconstruct(&target, &c.method.method(c.iters))?;
    let convergence = spectral_convergence(&target, &report.signal)?;
    write_wav(&c.out, &limit_peak(report.signal))?;
    if let Some(path) = &c.trace {
        write_trace_csv(path, &report.convergence_trace)?;
    }
    println!("{convergence}");
    Ok(())
}

fn cmd_train(c: TrainCmd) -> Result<()> {
    let fft = c.fft.config()?;
    let clips = train::load_dataset(&c.data, &c.manifest)?;
    let inferred = clips.iter().map(|clip| clip.class_id).max().unwrap_or(0) + 1;
    let cfg = TrainConfig {
        epochs: c.epochs,
        batch_size: c.batch_size,
        step_size: c.step_size,
        seed: c.seed,
        aux_weight: c.aux_weight,
        num_classes: c.num_classes.unwrap_or(inferred),
        channels: c.channels.clone(),
        kernel_width: c.kernel_width,
        fft,
    };
    let clips = assign_centroid_classes(clips, &fft)?;
    let report = train::train(&clips, &cfg)?;
    save_weights(&report.weights, &c.out)?;

    let log_path = c.log.clone().unwrap_or_else(|| c.out.with_extension("log.csv"));
    let mut w = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(w, "epoch,main_loss,aux_loss,main_acc")?;
    for e in &report.log {
        writeln!(w, "{},{},{},{}", e.epoch, e.main_loss, e.aux_loss, e.main_acc)?;
    }
    w.flush()?;

    let (main_acc, aux_acc) = evaluate(&report.weights, &clips, &fft)?;
    println!("train accuracy: main {main_acc:.4}, centroid {aux_acc:.4}");
    Ok(())
}

fn cmd_spectrogram(c: SpectrogramCmd) -> Result<()> {
    let fft = c.fft.config()?;
    let input = read_wav(&c.input).with_context(|| format!("reading {}", c.input.display()))?;
    let mag = stft(&input, &fft)?.magnitude();
    dsp::write_png(&mag, &c.out)?;
    if let Some(csv) = &c.csv {
        dsp::write_csv(mag.data(), csv)?;
    }
    Ok(())
}
