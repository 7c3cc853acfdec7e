//! Short-time Fourier analysis/synthesis and the spectrogram types built on it.
//!
//! Spectrogram grids are stored bins × frames, bin 0 at DC. Frames are taken
//! without centering or padding: frame `f` covers samples
//! `[f * hop, f * hop + fft_size)`.

mod export;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft as FftPlan, FftPlanner};
use thiserror::Error;

use crate::audio_io::AudioBuffer;

pub use export::{magnitude_to_pixel, write_csv, write_png, ExportError};

pub const DEFAULT_FFT_SIZE: usize = 512;
pub const DEFAULT_HOP: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("transform length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("window length {0} is too short (need at least 2)")]
    WindowTooShort(usize),
    #[error("invalid fft configuration: {0}")]
    InvalidConfig(String),
    #[error("signal of {len} samples is shorter than one {fft_size}-sample frame")]
    TooShort { len: usize, fft_size: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("spectrogram has zero total magnitude")]
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Hann,
}

/// Periodic Hann window, `w[i] = 0.5 * (1 - cos(2πi/n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, DspError> {
    if n < 2 {
        return Err(DspError::WindowTooShort(n));
    }
    Ok((0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FftConfig {
    fft_size: usize,
    hop: usize,
    window: WindowKind,
}

impl FftConfig {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self, DspError> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(DspError::NotPowerOfTwo(fft_size));
        }
        if hop == 0 || hop > fft_size || !fft_size.is_multiple_of(hop) {
            return Err(DspError::InvalidConfig(format!("hop {hop} must be positive and divide fft size {fft_size}")));
        }
        Ok(Self { fft_size, hop, window: WindowKind::Hann })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window_kind(&self) -> WindowKind {
        self.window
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann_window(self.fft_size).expect("fft_size >= 2"),
        }
    }

    /// Frame count for a signal of `len` samples; zero if shorter than one frame.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    /// Length of the signal produced by inverting `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.fft_size
        }
    }

    pub fn bin_frequency(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.fft_size as f64
    }
}

impl Default for FftConfig {
    fn default() -> Self {
        Self::new(DEFAULT_FFT_SIZE, DEFAULT_HOP).expect("default config is valid")
    }
}

/// Complex DFT of any nonzero length with an `e^{-2πikn/N}` kernel; the
/// inverse is scaled by `1/N`.
pub fn fft(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>, DspError> {
    let n = x.len();
    if n == 0 {
        return Err(DspError::InvalidConfig("fft of an empty sequence".into()));
    }
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = x.to_vec();
    plan.process(&mut buf);
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(buf)
}

/// Planned forward/inverse transforms for one frame size.
struct FramePlans {
    forward: Arc<dyn FftPlan<f64>>,
    inverse: Arc<dyn FftPlan<f64>>,
    window: Vec<f64>,
}

impl FramePlans {
    fn new(cfg: &FftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            window: cfg.window(),
        }
    }
}

macro_rules! grid_accessors {
    ($t:ty, $elem:ty) => {
        impl $t {
            pub fn data(&self) -> &Array2<$elem> {
                &self.data
            }

            pub fn into_data(self) -> Array2<$elem> {
                self.data
            }

            pub fn config(&self) -> &FftConfig {
                &self.config
            }

            pub fn sample_rate(&self) -> u32 {
                self.sample_rate
            }

            pub fn bins(&self) -> usize {
                self.data.nrows()
            }

            pub fn frames(&self) -> usize {
                self.data.ncols()
            }
        }
    };
}

fn check_grid_shape(rows: usize, cols: usize, cfg: &FftConfig) -> Result<(), DspError> {
    if rows != cfg.bins() {
        return Err(DspError::Dimension(format!(
            "grid has {rows} bins, fft size {} implies {}",
            cfg.fft_size,
            cfg.bins()
        )));
    }
    if cols == 0 {
        return Err(DspError::Dimension("grid has no frames".into()));
    }
    Ok(())
}

fn check_real_grid(data: &Array2<f64>, cfg: &FftConfig, nonneg: bool) -> Result<(), DspError> {
    check_grid_shape(data.nrows(), data.ncols(), cfg)?;
    if data.iter().any(|v| !v.is_finite() || (nonneg && *v < 0.0)) {
        return Err(DspError::Dimension("grid entries must be finite and nonnegative".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Array2<Complex64>,
    config: FftConfig,
    sample_rate: u32,
}

grid_accessors!(ComplexSpectrogram, Complex64);

impl ComplexSpectrogram {
    pub fn new(data: Array2<Complex64>, config: FftConfig, sample_rate: u32) -> Result<Self, DspError> {
        check_grid_shape(data.nrows(), data.ncols(), &config)?;
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(DspError::Dimension("complex grid has non-finite entries".into()));
        }
        Ok(Self { data, config, sample_rate })
    }

    /// Combines a magnitude grid with a phase grid (radians).
    pub fn from_polar(mag: &MagSpectrogram, phase: &Array2<f64>) -> Result<Self, DspError> {
        if phase.dim() != mag.data.dim() {
            return Err(DspError::Dimension(format!(
                "phase grid {:?} does not match magnitude grid {:?}",
                phase.dim(),
                mag.data.dim()
            )));
        }
        let mut data = Array2::zeros(mag.data.dim());
        ndarray::Zip::from(&mut data).and(&mag.data).and(phase).for_each(|d, &m, &p| *d = Complex64::from_polar(m, p));
        Ok(Self { data, config: mag.config, sample_rate: mag.sample_rate })
    }

    pub fn magnitude(&self) -> MagSpectrogram {
        MagSpectrogram { data: self.data.mapv(|c| c.norm()), config: self.config, sample_rate: self.sample_rate }
    }

    pub fn phase(&self) -> Array2<f64> {
        self.data.mapv(|c| c.arg())
    }

    pub fn to_log_mag(&self) -> LogMagSpectrogram {
        to_log_mag(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagSpectrogram {
    data: Array2<f64>,
    config: FftConfig,
    sample_rate: u32,
}

grid_accessors!(MagSpectrogram, f64);

impl MagSpectrogram {
    pub fn new(data: Array2<f64>, config: FftConfig, sample_rate: u32) -> Result<Self, DspError> {
        check_real_grid(&data, &config, true)?;
        Ok(Self { data, config, sample_rate })
    }

    pub fn to_log(&self) -> LogMagSpectrogram {
        LogMagSpectrogram { data: self.data.mapv(f64::ln_1p), config: self.config, sample_rate: self.sample_rate }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Magnitudes compressed as `ln(1 + |S|)`; the working domain for transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMagSpectrogram {
    data: Array2<f64>,
    config: FftConfig,
    sample_rate: u32,
}

grid_accessors!(LogMagSpectrogram, f64);

impl LogMagSpectrogram {
    pub fn new(data: Array2<f64>, config: FftConfig, sample_rate: u32) -> Result<Self, DspError> {
        check_real_grid(&data, &config, true)?;
        Ok(Self { data, config, sample_rate })
    }

    pub fn from_log(&self) -> MagSpectrogram {
        from_log_mag(self)
    }
}

/// `L = ln(1 + |S|)`.
pub fn to_log_mag(spec: &ComplexSpectrogram) -> LogMagSpectrogram {
    spec.magnitude().to_log()
}

/// `M = exp(L) - 1`, clamped at zero.
pub fn from_log_mag(spec: &LogMagSpectrogram) -> MagSpectrogram {
    MagSpectrogram { data: spec.data.mapv(|l| l.exp_m1().max(0.0)), config: spec.config, sample_rate: spec.sample_rate }
}

pub fn stft(buf: &AudioBuffer, cfg: &FftConfig) -> Result<ComplexSpectrogram, DspError> {
    let x = buf.samples();
    let frames = cfg.frame_count(x.len());
    if frames == 0 {
        return Err(DspError::TooShort { len: x.len(), fft_size: cfg.fft_size });
    }
    let plans = FramePlans::new(cfg);
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let mut data = Array2::zeros((bins, frames));
    let mut frame = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); plans.forward.get_inplace_scratch_len()];
    for f in 0..frames {
        let start = f * cfg.hop;
        for ((dst, &s), &w) in frame.iter_mut().zip(&x[start..start + n]).zip(&plans.window) {
            *dst = Complex64::new(s * w, 0.0);
        }
        plans.forward.process_with_scratch(&mut frame, &mut scratch);
        for (k, v) in frame.iter().take(bins).enumerate() {
            data[(k, f)] = *v;
        }
    }
    Ok(ComplexSpectrogram { data, config: *cfg, sample_rate: buf.sample_rate() })
}

/// Weighted overlap-add inversion: each inverse-transformed frame is re-windowed
/// and the sum is divided by the accumulated squared-window envelope. This is the
/// least-squares signal estimate for an arbitrary (possibly inconsistent) grid.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioBuffer, DspError> {
    let cfg = spec.config;
    check_grid_shape(spec.bins(), spec.frames(), &cfg)?;
    let plans = FramePlans::new(&cfg);
    let n = cfg.fft_size;
    let half = n / 2;
    let len = cfg.signal_len(spec.frames());
    let mut out = vec![0.0; len];
    let mut envelope = vec![0.0; len];
    let mut frame = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); plans.inverse.get_inplace_scratch_len()];
    let scale = 1.0 / n as f64;

    for f in 0..spec.frames() {
        let col = spec.data.column(f);
        frame[0] = Complex64::new(col[0].re, 0.0);
        frame[half] = Complex64::new(col[half].re, 0.0);
        for k in 1..half {
            frame[k] = col[k];
            frame[n - k] = col[k].conj();
        }
        plans.inverse.process_with_scratch(&mut frame, &mut scratch);
        let start = f * cfg.hop;
        for (i, (v, &w)) in frame.iter().zip(&plans.window).enumerate() {
            out[start + i] += v.re * scale * w;
            envelope[start + i] += w * w;
        }
    }
    for (o, &e) in out.iter_mut().zip(&envelope) {
        *o = if e > 1e-10 { *o / e } else { 0.0 };
    }
    Ok(AudioBuffer::new(out, spec.sample_rate).expect("istft output is finite"))
}

/// Magnitude-weighted mean frequency over the whole clip, in Hz.
pub fn spectral_centroid(mag: &MagSpectrogram) -> Result<f64, DspError> {
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (k, row) in mag.data.rows().into_iter().enumerate() {
        let row_sum: f64 = row.sum();
        weighted += mag.config.bin_frequency(k, mag.sample_rate) * row_sum;
        total += row_sum;
    }
    if total <= 0.0 {
        return Err(DspError::Silent);
    }
    Ok(weighted / total)
}
