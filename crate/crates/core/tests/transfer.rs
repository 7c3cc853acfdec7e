mod common;

use common::{noise, sine};
use spectral_style::dsp::{stft, FftConfig, LogMagSpectrogram};
use spectral_style::net::{conv_stack, init_random, save_weights, NetworkWeights};
use spectral_style::transfer::{
    initial_grid, run_transfer, transfer_spectrograms, InitMode, TransferConfig, TransferError, WeightsSource,
};

fn inputs() -> (LogMagSpectrogram, LogMagSpectrogram) {
    let fft = FftConfig::default();
    (
        stft(&sine(440.0, 8000, 6000), &fft).unwrap().to_log_mag(),
        stft(&noise(9, 8000, 6000), &fft).unwrap().to_log_mag(),
    )
}

fn small_net(seed: u64) -> NetworkWeights {
    init_random(&conv_stack(257, &[16, 8], 5, true), seed).unwrap()
}

fn cfg(init: InitMode) -> TransferConfig {
    TransferConfig { iterations: 25, init_mode: init, ..TransferConfig::default() }
}

#[test]
fn results_are_bit_deterministic_nonnegative_and_losses_nonnegative() {
    let (c, s) = inputs();
    let w = small_net(1);
    let config = cfg(InitMode::ContentPlusNoise { seed: 3, level: 0.2 });
    let a = transfer_spectrograms(&c, &s, &w, &config).unwrap();
    let b = transfer_spectrograms(&c, &s, &w, &config).unwrap();
    assert_eq!(a, b);
    assert!(a.output.data().iter().all(|&v| v >= 0.0));
    assert!(a.loss_trace.iter().all(|r| r.total >= 0.0 && r.content >= 0.0 && r.style >= 0.0));
    assert!(a.loss_trace.iter().all(|r| (r.total - r.content - r.style).abs() <= 1e-9 * r.total.max(1.0)));
}

#[test]
fn figure_one_cells_are_distinct() {
    let (c, s) = inputs();
    let trained = small_net(1);
    let random = small_net(2);
    let noisy = InitMode::ContentPlusNoise { seed: 0, level: 0.1 };
    let outputs: Vec<_> =
        [(&trained, InitMode::Content), (&random, InitMode::Content), (&trained, noisy.clone()), (&random, noisy)]
            .into_iter()
            .map(|(w, init)| transfer_spectrograms(&c, &s, w, &cfg(init)).unwrap().output)
            .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(outputs[i], outputs[j], "cells {i} and {j}");
        }
    }
}

#[test]
fn noise_init_stays_within_level() {
    let (c, _) = inputs();
    let max = c.data().iter().cloned().fold(0.0, f64::max);
    let noise = initial_grid(c.data(), &InitMode::Noise { seed: 5, level: 0.25 });
    assert!(noise.iter().all(|&v| (0.0..=0.25 * max).contains(&v)));
    assert!(noise.iter().any(|&v| v > 0.2 * max));
    let mixed = initial_grid(c.data(), &InitMode::ContentPlusNoise { seed: 5, level: 0.25 });
    assert!((mixed - c.data() - &noise).iter().all(|d| d.abs() < 1e-12));
    assert_eq!(&initial_grid(c.data(), &InitMode::Content), c.data());
}

#[test]
fn weights_from_file_match_provided_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.astw");
    let w = small_net(4);
    save_weights(&w, &path).unwrap();
    let content = sine(440.0, 8000, 6000);
    let style = noise(9, 8000, 6000);
    let from_file = run_transfer(
        &content,
        &style,
        &TransferConfig { weights_source: WeightsSource::File(path), ..cfg(InitMode::Content) },
    )
    .unwrap();
    let stored = spectral_style::net::load_weights(dir.path().join("w.astw")).unwrap();
    let provided = run_transfer(
        &content,
        &style,
        &TransferConfig { weights_source: WeightsSource::Provided(stored), ..cfg(InitMode::Content) },
    )
    .unwrap();
    assert_eq!(from_file.output, provided.output);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let config = TransferConfig { weights_source: WeightsSource::Provided(small_net(1)), ..cfg(InitMode::Content) };
    let err = run_transfer(&sine(440.0, 8000, 6000), &sine(440.0, 16000, 6000), &config).unwrap_err();
    assert!(matches!(err, TransferError::SampleRateMismatch { content: 8000, style: 16000 }));
    let msg = err.to_string();
    assert!(msg.contains("8000") && msg.contains("16000"));

    let narrow = TransferConfig {
        weights_source: WeightsSource::Provided(init_random(&conv_stack(129, &[4, 4], 3, true), 0).unwrap()),
        ..cfg(InitMode::Content)
    };
    assert!(matches!(
        run_transfer(&sine(440.0, 8000, 6000), &noise(1, 8000, 6000), &narrow),
        Err(TransferError::Net(_))
    ));

    let bad_layer = TransferConfig { content_layer: 3, ..config };
    assert!(matches!(
        run_transfer(&sine(440.0, 8000, 6000), &noise(1, 8000, 6000), &bad_layer),
        Err(TransferError::InvalidConfig(_))
    ));
}
