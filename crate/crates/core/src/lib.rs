//! Audio style transfer on log-magnitude spectrograms.
//!
//! Spectrogram frequency bins are treated as the channels of a 1-D
//! convolutional network running along time. A synthesized spectrogram is
//! optimized so its activations match a content clip and its Gram matrices
//! match a style clip, then turned back into audio by phase reconstruction.

pub mod audio_io;
pub mod dsp;
pub mod net;
pub mod optim;
pub mod phase;
pub mod train;
pub mod transfer;

pub use audio_io::{read_wav, write_wav, AudioBuffer, AudioError};
pub use dsp::{
    from_log_mag, istft, stft, to_log_mag, ComplexSpectrogram, DspError, FftConfig, LogMagSpectrogram, MagSpectrogram,
};
pub use net::{FeatureMap, LayerSpec, NetError, NetworkWeights};
pub use phase::{reconstruct, Method, PhaseError, ReconstructionReport};
pub use train::{TrainConfig, TrainError};
pub use transfer::{run_transfer, InitMode, TransferConfig, TransferError, TransferResult, WeightsSource};
