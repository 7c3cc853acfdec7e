mod common;

use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;

use spectral_style::audio_io::{read_wav, write_wav, AudioBuffer};
use spectral_style::dsp::{istft, spectral_centroid, stft, FftConfig};
use spectral_style::net::{conv1d_forward, conv_stack, forward_map, gram, init_random, FeatureMap};
use spectral_style::phase::{griffin_lim, spectral_convergence, spsi, PhaseInit};
use spectral_style::train::{assign_centroid_classes, cross_entropy, softmax, LabeledClip};

fn grid(c: usize, t: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, c * t).prop_map(move |v| Array2::from_shape_vec((c, t), v).unwrap())
}

fn config() -> impl Strategy<Value = FftConfig> {
    (5u32..9, 0u32..3).prop_map(|(p, d)| FftConfig::new(1 << p, (1 << p) >> (d + 1)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wav_round_trip(samples in prop::collection::vec(-1.0f64..=1.0, 1..2000), rate in 1000u32..96_000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let buf = AudioBuffer::new(samples, rate).unwrap();
        write_wav(&path, &buf).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.len(), buf.len());
        prop_assert_eq!(back.sample_rate(), rate);
        for (a, b) in buf.samples().iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn stft_round_trip_and_frame_count(cfg in config(), extra in 0usize..700, seed in any::<u64>()) {
        let n = cfg.fft_size();
        let len = 4 * n + extra;
        let x = common::noise(seed, 16_000, len);
        let spec = stft(&x, &cfg).unwrap();
        prop_assert_eq!(spec.frames(), (len - n) / cfg.hop() + 1);
        let y = istft(&spec).unwrap();
        let hi = y.len() - n;
        let ss: f64 = (n..hi).map(|i| (x.samples()[i] - y.samples()[i]).powi(2)).sum();
        prop_assert!((ss / (hi - n) as f64).sqrt() < 1e-6);
    }

    #[test]
    fn centroid_within_nyquist(seed in any::<u64>(), rate in 8000u32..48_000) {
        let x = common::noise(seed, rate, 2048);
        let c = spectral_centroid(&stft(&x, &FftConfig::default()).unwrap().magnitude()).unwrap();
        prop_assert!((0.0..=rate as f64 / 2.0).contains(&c));
    }

    #[test]
    fn griffin_lim_trace_and_determinism(seed in any::<u64>(), iters in 1usize..12) {
        let cfg = FftConfig::new(64, 16).unwrap();
        let target = stft(&common::noise(seed, 8000, 640), &cfg).unwrap().magnitude();
        let a = griffin_lim(&target, iters, &PhaseInit::Random(seed)).unwrap();
        let b = griffin_lim(&target, iters, &PhaseInit::Random(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for w in a.convergence_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        let last = *a.convergence_trace.last().unwrap();
        prop_assert!((spectral_convergence(&target, &a.signal).unwrap() - last).abs() < 1e-12);
    }

    #[test]
    fn convergence_is_monotone_in_iterations(seed in any::<u64>()) {
        let cfg = FftConfig::new(64, 16).unwrap();
        let target = stft(&common::noise(seed, 8000, 512), &cfg).unwrap().magnitude();
        let sc: Vec<f64> = (1..=6)
            .map(|n| spectral_convergence(&target, &griffin_lim(&target, n, &PhaseInit::Zero).unwrap().signal).unwrap())
            .collect();
        for w in sc.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn spsi_length_matches_istft(seed in any::<u64>(), cfg in config()) {
        let x = common::noise(seed, 8000, 3 * cfg.fft_size() + 17);
        let spec = stft(&x, &cfg).unwrap();
        prop_assert_eq!(spsi(&spec.magnitude()).unwrap().len(), istft(&spec).unwrap().len());
    }

    #[test]
    fn conv_is_linear_at_zero_bias(
        x in grid(3, 9), y in grid(3, 9),
        k in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 5),
        a in -3.0f64..3.0, b in -3.0f64..3.0,
    ) {
        let kernel = Array3::from_shape_vec((2, 3, 5), k).unwrap();
        let bias = Array1::zeros(2);
        let f = |m: &Array2<f64>| conv1d_forward(&FeatureMap::new(m.clone()).unwrap(), &kernel, &bias).unwrap().into_data();
        let lhs = f(&(&x * a + &y * b));
        let rhs = f(&x) * a + f(&y) * b;
        prop_assert!((lhs - rhs).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn gram_symmetric_psd(f in grid(4, 7), v in prop::collection::vec(-1.0f64..1.0, 4)) {
        let g = gram(&FeatureMap::new(f).unwrap());
        prop_assert!((&g - &g.t()).iter().all(|d| d.abs() < 1e-12));
        let v = Array1::from(v);
        prop_assert!(v.dot(&g.dot(&v)) >= -1e-9);
    }

    #[test]
    fn gram_time_permutation_invariant(f in grid(3, 8), perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
        let shuffled = Array2::from_shape_fn((3, 8), |(c, t)| f[(c, perm[t])]);
        let a = gram(&FeatureMap::new(f).unwrap());
        let b = gram(&FeatureMap::new(shuffled).unwrap());
        prop_assert!((a - b).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn forward_schedule_halves_time(time in 4usize..64, blocks in 1usize..3) {
        let widths = vec![3; blocks];
        let w = init_random(&conv_stack(5, &widths, 3, true), 0).unwrap();
        prop_assume!(time >> blocks >= 1);
        let trace = forward_map(&w, &FeatureMap::zeros(5, time)).unwrap();
        let mut t = time;
        for b in &trace.blocks {
            t /= 2;
            prop_assert_eq!(b.output().time(), t);
        }
    }

    #[test]
    fn softmax_and_cross_entropy(logits in prop::collection::vec(-30.0f64..30.0, 2..60), pick in any::<prop::sample::Index>()) {
        let logits = Array1::from(logits);
        let p = softmax(&logits);
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        let (loss, _) = cross_entropy(&logits, pick.index(logits.len())).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn centroid_classes_are_monotone(freqs in prop::collection::vec(100.0f64..3500.0, 16..40)) {
        let clips: Vec<_> = freqs.iter().map(|&f| LabeledClip::new(common::sine(f, 8000, 1024), 0)).collect();
        let out = assign_centroid_classes(clips, &FftConfig::default()).unwrap();
        let fft = FftConfig::default();
        let cents: Vec<f64> =
            out.iter().map(|c| spectral_centroid(&stft(&c.audio, &fft).unwrap().magnitude()).unwrap()).collect();
        let mut counts = [0usize; 16];
        for (i, a) in out.iter().enumerate() {
            counts[a.centroid_class.unwrap()] += 1;
            for (j, b) in out.iter().enumerate() {
                if cents[i] > cents[j] {
                    prop_assert!(a.centroid_class >= b.centroid_class);
                }
            }
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }
}

#[test]
fn stereo_mixdown_is_order_independent() {
    let dir = tempfile::tempdir().unwrap();
    let spec =
        hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let frames: Vec<(i16, i16)> =
        (0..200).map(|i| ((i * 97 % 2000) as i16 - 1000, (i * 31 % 3000) as i16 - 1500)).collect();
    let mut paths = Vec::new();
    for (name, swap) in [("lr.wav", false), ("rl.wav", true)] {
        let path = dir.path().join(name);
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for &(l, r) in &frames {
            let (a, b) = if swap { (r, l) } else { (l, r) };
            w.write_sample(a).unwrap();
            w.write_sample(b).unwrap();
        }
        w.finalize().unwrap();
        paths.push(path);
    }
    assert_eq!(read_wav(&paths[0]).unwrap(), read_wav(&paths[1]).unwrap());
}
