#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_style::audio_io::{write_wav, AudioBuffer};
use spectral_style::train::LabeledClip;

pub const TOY_RATE: u32 = 8000;
pub const TOY_LEN: usize = 4000;

pub fn sine(freq: f64, sr: u32, len: usize) -> AudioBuffer {
    let x = (0..len).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect();
    AudioBuffer::new(x, sr).unwrap()
}

pub fn noise(seed: u64, sr: u32, len: usize) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), sr).unwrap()
}

/// One clip of the four-class toy corpus: 0 sine, 1 square, 2 noise, 3 chirp.
pub fn toy_clip(class: usize, index: usize) -> AudioBuffer {
    let sr = TOY_RATE as f64;
    let f0 = 300.0 + 90.0 * index as f64;
    let x: Vec<f64> = match class {
        0 => (0..TOY_LEN).map(|i| 0.5 * (2.0 * PI * f0 * i as f64 / sr).sin()).collect(),
        1 => (0..TOY_LEN).map(|i| if (2.0 * PI * f0 * i as f64 / sr).sin() >= 0.0 { 0.4 } else { -0.4 }).collect(),
        2 => return noise(1000 + index as u64, TOY_RATE, TOY_LEN),
        3 => {
            let dur = TOY_LEN as f64 / sr;
            let rate = 2500.0 / dur;
            (0..TOY_LEN)
                .map(|i| {
                    let t = i as f64 / sr;
                    0.5 * (2.0 * PI * (f0 * t + 0.5 * rate * t * t)).sin()
                })
                .collect()
        }
        _ => panic!("toy corpus has four classes"),
    };
    AudioBuffer::new(x, TOY_RATE).unwrap()
}

pub fn toy_corpus(per_class: usize) -> Vec<LabeledClip> {
    (0..per_class).flat_map(|i| (0..4).map(move |c| LabeledClip::new(toy_clip(c, i), c))).collect()
}

/// Writes the toy corpus as WAV files plus a `filename,class_id` manifest.
pub fn write_toy_corpus(dir: &Path, per_class: usize) -> std::path::PathBuf {
    let mut manifest = String::from("filename,class_id\n");
    for i in 0..per_class {
        for c in 0..4 {
            let name = format!("c{c}_{i:02}.wav");
            write_wav(dir.join(&name), &toy_clip(c, i)).unwrap();
            manifest.push_str(&format!("{name},{c}\n"));
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}
