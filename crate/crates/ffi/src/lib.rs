//! C ABI over the spectral-style engine.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `ast_*` constructor and released with the matching `*_free`. Fallible
//! calls return [`AstStatus`]; on failure, [`ast_last_error`] yields a
//! message for the calling thread. Panics are caught and reported as
//! `AST_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spectral_style::audio_io::{read_wav, write_wav, AudioBuffer, AudioError};
use spectral_style::dsp::{stft, DspError, FftConfig, LogMagSpectrogram};
use spectral_style::net::{
    conv_stack, init_random, load_weights, save_weights, NetError, NetworkWeights, WeightsFileError,
};
use spectral_style::phase::{reconstruct, spectral_convergence, Method, PhaseError};
use spectral_style::transfer::{
    transfer_spectrograms, InitMode, LossRecord, TransferConfig, TransferError, WeightsSource,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AstInitMode {
    Content = 0,
    Noise = 1,
    ContentPlusNoise = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AstPhaseMethod {
    GriffinLim = 0,
    Spsi = 1,
    SpsiThenGriffinLim = 2,
}

/// Mono audio clip.
pub struct AstAudio(AudioBuffer);

/// Feature network weights.
pub struct AstWeights(NetworkWeights);

/// Log-magnitude spectrogram, plus the loss trace when produced by a transfer.
pub struct AstSpectrogram {
    spec: LogMagSpectrogram,
    losses: Vec<LossRecord>,
}

/// Transfer settings. `style_layers` points at `style_layer_count` 1-based block indices.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AstTransferConfig {
    pub alpha: f64,
    pub beta: f64,
    pub content_layer: usize,
    pub style_layers: *const usize,
    pub style_layer_count: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub init_mode: AstInitMode,
    pub noise_seed: u64,
    pub noise_level: f64,
    pub fft_size: usize,
    pub hop: usize,
}

static DEFAULT_STYLE_LAYERS: [usize; 2] = [1, 2];

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AstStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: AstStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

fn dsp_status(e: &DspError) -> AstStatus {
    match e {
        DspError::Dimension(_) => AstStatus::Dimension,
        _ => AstStatus::InvalidArgument,
    }
}

fn net_status(e: &NetError) -> AstStatus {
    match e {
        NetError::InvalidArchitecture(_) => AstStatus::InvalidArgument,
        _ => AstStatus::Dimension,
    }
}

fn weights_status(e: &WeightsFileError) -> AstStatus {
    match e {
        WeightsFileError::Io { .. } => AstStatus::Io,
        WeightsFileError::Dimension(_) => AstStatus::Dimension,
        _ => AstStatus::Format,
    }
}

macro_rules! failure_from {
    ($ty:ty, $f:expr) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                let status: fn(&$ty) -> AstStatus = $f;
                Failure(status(&e), e.to_string())
            }
        }
    };
}

failure_from!(DspError, dsp_status);
failure_from!(NetError, net_status);
failure_from!(WeightsFileError, weights_status);
failure_from!(AudioError, |e| match e {
    AudioError::NotFound(_) | AudioError::Write { .. } => AstStatus::Io,
    AudioError::InvalidBuffer(_) => AstStatus::InvalidArgument,
    _ => AstStatus::Format,
});
failure_from!(PhaseError, |e| match e {
    PhaseError::Dsp(d) => dsp_status(d),
    PhaseError::CandidateTooShort { .. } => AstStatus::Dimension,
    _ => AstStatus::InvalidArgument,
});
failure_from!(TransferError, |e| match e {
    TransferError::Dsp(d) => dsp_status(d),
    TransferError::Net(n) => net_status(n),
    TransferError::Weights(w) => weights_status(w),
    _ => AstStatus::InvalidArgument,
});

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, storing its error message and converting panics.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> AstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AstStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AstStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(AstStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return fail(AstStatus::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(AstStatus::InvalidArgument, format!("{what} is not valid UTF-8")),
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return fail(AstStatus::NullPointer, "output pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(AstStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ast_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_read_wav(path: *const c_char, out: *mut *mut AstAudio) -> AstStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, AstAudio(read_wav(&path)?))
    })
}

/// Copies `len` samples into a new clip.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_from_samples(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut *mut AstAudio,
) -> AstStatus {
    guard(|| {
        let s = slice_arg(samples, len, "samples")?;
        put(out, AstAudio(AudioBuffer::new(s.to_vec(), sample_rate)?))
    })
}

/// Writes 16-bit PCM mono.
///
/// # Safety
/// `audio` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_write_wav(audio: *const AstAudio, path: *const c_char) -> AstStatus {
    guard(|| {
        let a = deref(audio, "audio")?;
        let path = path_arg(path, "path")?;
        Ok(write_wav(&path, &a.0)?)
    })
}

/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_len(audio: *const AstAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.0.len())
}

/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_sample_rate(audio: *const AstAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.0.sample_rate())
}

/// Borrowed view of the samples, valid while the handle lives.
///
/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_samples(audio: *const AstAudio) -> *const f64 {
    audio.as_ref().map_or(ptr::null(), |a| a.0.samples().as_ptr())
}

/// # Safety
/// `audio` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ast_audio_free(audio: *mut AstAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

/// Seeded random feature network: `channel_count` conv blocks of the given
/// widths over `in_channels` bins, each followed by ReLU and 2x max-pooling.
///
/// # Safety
/// `channels` must point to `channel_count` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ast_weights_random(
    in_channels: usize,
    channels: *const usize,
    channel_count: usize,
    kernel_width: usize,
    seed: u64,
    out: *mut *mut AstWeights,
) -> AstStatus {
    guard(|| {
        let widths = slice_arg(channels, channel_count, "channels")?;
        let arch = conv_stack(in_channels, widths, kernel_width, true);
        put(out, AstWeights(init_random(&arch, seed)?))
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ast_weights_load(path: *const c_char, out: *mut *mut AstWeights) -> AstStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, AstWeights(load_weights(&path)?))
    })
}

/// # Safety
/// `weights` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ast_weights_save(weights: *const AstWeights, path: *const c_char) -> AstStatus {
    guard(|| {
        let w = deref(weights, "weights")?;
        let path = path_arg(path, "path")?;
        Ok(save_weights(&w.0, &path)?)
    })
}

/// # Safety
/// `weights` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_weights_block_count(weights: *const AstWeights) -> usize {
    weights.as_ref().map_or(0, |w| w.0.block_count())
}

/// # Safety
/// `weights` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ast_weights_free(weights: *mut AstWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

/// Library defaults; `style_layers` points at static storage.
#[no_mangle]
pub extern "C" fn ast_transfer_config_default() -> AstTransferConfig {
    let d = TransferConfig::default();
    AstTransferConfig {
        alpha: d.alpha,
        beta: d.beta,
        content_layer: d.content_layer,
        style_layers: DEFAULT_STYLE_LAYERS.as_ptr(),
        style_layer_count: DEFAULT_STYLE_LAYERS.len(),
        iterations: d.iterations,
        step_size: d.step_size,
        init_mode: AstInitMode::Content,
        noise_seed: 0,
        noise_level: spectral_style::transfer::DEFAULT_NOISE_LEVEL,
        fft_size: d.fft.fft_size(),
        hop: d.fft.hop(),
    }
}

unsafe fn transfer_config(c: &AstTransferConfig, weights: &NetworkWeights) -> FfiResult<TransferConfig> {
    let layers = slice_arg(c.style_layers, c.style_layer_count, "style_layers")?;
    let (seed, level) = (c.noise_seed, c.noise_level);
    Ok(TransferConfig {
        alpha: c.alpha,
        beta: c.beta,
        content_layer: c.content_layer,
        style_layers: layers.to_vec(),
        iterations: c.iterations,
        step_size: c.step_size,
        init_mode: match c.init_mode {
            AstInitMode::Content => InitMode::Content,
            AstInitMode::Noise => InitMode::Noise { seed, level },
            AstInitMode::ContentPlusNoise => InitMode::ContentPlusNoise { seed, level },
        },
        weights_source: WeightsSource::Provided(weights.clone()),
        fft: FftConfig::new(c.fft_size, c.hop)?,
    })
}

/// Optimizes a spectrogram with the content of `content` and style of `style`.
///
/// # Safety
/// All handles must be live; `config` must be valid; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ast_transfer_run(
    content: *const AstAudio,
    style: *const AstAudio,
    weights: *const AstWeights,
    config: *const AstTransferConfig,
    out: *mut *mut AstSpectrogram,
) -> AstStatus {
    guard(|| {
        let (c, s) = (deref(content, "content")?, deref(style, "style")?);
        let w = deref(weights, "weights")?;
        let cfg = transfer_config(deref(config, "config")?, &w.0)?;
        if c.0.sample_rate() != s.0.sample_rate() {
            return Err(
                TransferError::SampleRateMismatch { content: c.0.sample_rate(), style: s.0.sample_rate() }.into()
            );
        }
        let cs = stft(&c.0, &cfg.fft)?.to_log_mag();
        let ss = stft(&s.0, &cfg.fft)?.to_log_mag();
        let result = transfer_spectrograms(&cs, &ss, &w.0, &cfg)?;
        put(out, AstSpectrogram { spec: result.output, losses: result.loss_trace })
    })
}

/// Log-magnitude spectrogram of a clip.
///
/// # Safety
/// `audio` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_from_audio(
    audio: *const AstAudio,
    fft_size: usize,
    hop: usize,
    out: *mut *mut AstSpectrogram,
) -> AstStatus {
    guard(|| {
        let a = deref(audio, "audio")?;
        let spec = stft(&a.0, &FftConfig::new(fft_size, hop)?)?.to_log_mag();
        put(out, AstSpectrogram { spec, losses: Vec::new() })
    })
}

/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_bins(spec: *const AstSpectrogram) -> usize {
    spec.as_ref().map_or(0, |s| s.spec.bins())
}

/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_frames(spec: *const AstSpectrogram) -> usize {
    spec.as_ref().map_or(0, |s| s.spec.frames())
}

/// Copies the bins x frames grid, row-major by bin, into `dst` of length `len`.
///
/// # Safety
/// `spec` must be live; `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_copy_data(
    spec: *const AstSpectrogram,
    dst: *mut f64,
    len: usize,
) -> AstStatus {
    guard(|| {
        let s = deref(spec, "spectrogram")?;
        let grid = s.spec.data();
        if len != grid.len() {
            return fail(AstStatus::Dimension, format!("buffer holds {len} values, grid has {}", grid.len()));
        }
        if dst.is_null() {
            return fail(AstStatus::NullPointer, "dst is null");
        }
        let dst = std::slice::from_raw_parts_mut(dst, len);
        for (d, v) in dst.iter_mut().zip(grid.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Number of recorded optimization steps (0 for spectrograms not produced by a transfer).
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_loss_count(spec: *const AstSpectrogram) -> usize {
    spec.as_ref().map_or(0, |s| s.losses.len())
}

/// Weighted loss terms at 0-based step `index`. Any output pointer may be null.
///
/// # Safety
/// `spec` must be live; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_loss(
    spec: *const AstSpectrogram,
    index: usize,
    total: *mut f64,
    content: *mut f64,
    style: *mut f64,
) -> AstStatus {
    guard(|| {
        let s = deref(spec, "spectrogram")?;
        let Some(r) = s.losses.get(index) else {
            return fail(AstStatus::InvalidArgument, format!("step {index} out of range ({})", s.losses.len()));
        };
        for (p, v) in [(total, r.total), (content, r.content), (style, r.style)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Inverts the spectrogram's magnitude to audio. `convergence` (nullable)
/// receives the final spectral convergence.
///
/// # Safety
/// `spec` must be live; `out` must be valid; `convergence` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ast_reconstruct(
    spec: *const AstSpectrogram,
    method: AstPhaseMethod,
    iterations: usize,
    out: *mut *mut AstAudio,
    convergence: *mut f64,
) -> AstStatus {
    guard(|| {
        let s = deref(spec, "spectrogram")?;
        let mag = s.spec.from_log();
        let method = match method {
            AstPhaseMethod::GriffinLim => Method::GriffinLim(iterations),
            AstPhaseMethod::Spsi => Method::Spsi,
            AstPhaseMethod::SpsiThenGriffinLim => Method::SpsiThenGl(iterations),
        };
        let report = reconstruct(&mag, &method)?;
        if !convergence.is_null() {
            *convergence = spectral_convergence(&mag, &report.signal)?;
        }
        put(out, AstAudio(report.signal))
    })
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ast_spectrogram_free(spec: *mut AstSpectrogram) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}
