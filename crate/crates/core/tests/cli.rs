mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{noise, sine, write_toy_corpus};
use spectral_style::audio_io::write_wav;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectral-style")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn clips(dir: &Path) -> (PathBuf, PathBuf) {
    let c = dir.join("c.wav");
    let st = dir.join("s.wav");
    write_wav(&c, &sine(440.0, 8000, 6000)).unwrap();
    write_wav(&st, &noise(2, 8000, 6000)).unwrap();
    (c, st)
}

#[test]
fn transfer_writes_three_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (c, st) = clips(dir.path());
    let mut bytes = Vec::new();
    for run in ["one", "two"] {
        let out_dir = dir.path().join(run);
        std::fs::create_dir(&out_dir).unwrap();
        let out = out_dir.join("o.wav");
        let o = bin(&[
            "transfer",
            "--content",
            s(&c),
            "--style",
            s(&st),
            "--out",
            s(&out),
            "--random-seed",
            "42",
            "--iterations",
            "5",
            "--channels",
            "32,8",
            "--gl-iters",
            "5",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let files: Vec<_> =
            ["o.wav", "o.png", "loss.csv"].iter().map(|f| std::fs::read(out_dir.join(f)).unwrap()).collect();
        let csv = String::from_utf8(files[2].clone()).unwrap();
        assert!(csv.starts_with("iteration,total,content,style\n1,"));
        assert_eq!(csv.lines().count(), 6);
        bytes.push(files);
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn exclusive_weight_flags_exit_2() {
    let o = bin(&[
        "transfer",
        "--content",
        "c.wav",
        "--style",
        "s.wav",
        "--out",
        "o.wav",
        "--weights",
        "w.astw",
        "--random-seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flags_and_missing_args_exit_2() {
    assert_eq!(bin(&["spectrogram", "--in", "x.wav", "--out", "y.png", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["reconstruct", "--in", "x.wav"]).status.code(), Some(2));
    assert_eq!(
        bin(&["transfer", "--content", "c.wav", "--style", "s.wav", "--out", "o.wav", "--phase", "magic"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn mismatched_rates_exit_1_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.wav");
    let st = dir.path().join("s.wav");
    write_wav(&c, &sine(440.0, 8000, 6000)).unwrap();
    write_wav(&st, &sine(440.0, 22050, 6000)).unwrap();
    let o = bin(&["transfer", "--content", s(&c), "--style", s(&st), "--out", s(&dir.path().join("o.wav"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("8000") && err.contains("22050"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn help_lists_every_flag_with_defaults() {
    for (sub, flags) in [
        (
            "transfer",
            &[
                "--content",
                "--style",
                "--out",
                "--weights",
                "--random-seed",
                "--phase",
                "--gl-iters",
                "--alpha",
                "--beta",
                "--init",
            ][..],
        ),
        ("figure1", &["--content", "--style", "--weights", "--outdir", "--random-seed"][..]),
        ("reconstruct", &["--in", "--out", "--method", "--iters", "--trace"][..]),
        ("train", &["--data", "--manifest", "--out", "--epochs", "--batch-size", "--aux-weight"][..]),
        ("spectrogram", &["--in", "--out", "--csv", "--fft-size", "--hop"][..]),
    ] {
        let o = bin(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8(o.stdout).unwrap();
        for f in flags {
            assert!(text.contains(f), "{sub} help lacks {f}");
        }
        assert!(text.contains("[default: "), "{sub} help lists no defaults");
    }
    let text = String::from_utf8(bin(&["transfer", "--help"]).stdout).unwrap();
    for d in ["[default: spsi+gl]", "[default: 100]", "[default: 1000]", "[default: 500]", "[default: 1,2]"] {
        assert!(text.contains(d), "transfer help lacks {d}");
    }
}

#[test]
fn spectrogram_shows_a_bright_band_at_the_sine_row() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("sine.wav");
    let png_path = dir.path().join("sine.png");
    let csv_path = dir.path().join("sine.csv");
    // bin 32 center at 8 kHz / 512
    write_wav(&wav, &sine(32.0 * 8000.0 / 512.0, 8000, 8000)).unwrap();
    let o = bin(&["spectrogram", "--in", s(&wav), "--out", s(&png_path), "--csv", s(&csv_path)]);
    assert!(o.status.success());

    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&png_path).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!((info.width, info.height), (30, 257));
    let row = |r: usize| &buf[r * 30..(r + 1) * 30];
    // |X[k]| = 0.5 * 512 / 4 = 64 -> 36.1 dB -> pixel 255 after clamping
    let band = 256 - 32;
    assert!(row(band).iter().all(|&p| p == 255));
    assert!(row(band - 20).iter().all(|&p| p < 128));
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap().lines().count(), 257);
}

#[test]
fn reconstruct_prints_convergence_in_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.wav");
    write_wav(&x, &sine(440.0, 8000, 4000)).unwrap();
    let trace = dir.path().join("trace.csv");
    let o = bin(&[
        "reconstruct",
        "--in",
        s(&x),
        "--method",
        "griffinlim",
        "--iters",
        "1",
        "--out",
        s(&dir.path().join("y.wav")),
        "--trace",
        s(&trace),
    ]);
    assert!(o.status.success());
    let value: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((0.0..=1.0 + 1e-9).contains(&value));
    assert_eq!(std::fs::read_to_string(&trace).unwrap(), format!("iteration,value\n1,{value}\n"));
    assert!(spectral_style::read_wav(dir.path().join("y.wav")).is_ok());
}

#[test]
fn train_writes_loadable_weights_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_toy_corpus(dir.path(), 4);
    let out = dir.path().join("w.astw");
    let o = bin(&[
        "train",
        "--data",
        s(dir.path()),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--epochs",
        "2",
        "--channels",
        "8,4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let w = spectral_style::net::load_weights(&out).unwrap();
    assert_eq!(w.head().unwrap().main.out_features(), 4);
    let log = std::fs::read_to_string(dir.path().join("w.log.csv")).unwrap();
    assert!(log.starts_with("epoch,main_loss,aux_loss,main_acc\n1,"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn missing_input_exits_1() {
    let o = bin(&["spectrogram", "--in", "/nonexistent/x.wav", "--out", "/tmp/never.png"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("error: "));
}
