use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use beamfusion_core::pipeline::load_weights_dump;
use beamfusion_core::roomsim::{read_manifest, synthetic_speech};
use beamfusion_core::wav::{self, Audio};
use beamfusion_core::FilterBank;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamfusion"))
        .args(args)
        .env_remove("BEAMFUSION_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn no_partials(dir: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        assert!(!name.ends_with(".partial"), "left behind {name}");
    }
}

/// Identical channels are a plane wave from broadside, so a bank steered to
/// 90 degrees must pass them through unchanged.
#[test]
fn enhance_passes_broadside_plane_wave() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.bfb");
    ok(&["design", "--theta-s", "90", "--nulls", "0,180", "--out", s(&bank)]);
    assert_eq!(FilterBank::load(&bank).unwrap().len(), 2);

    let n = 24_000;
    let x: Vec<f64> = synthetic_speech(n, 16_000.0, 3)
        .iter()
        .map(|v| (*v as f32) as f64)
        .collect();
    let input = dir.path().join("in.wav");
    wav::write(
        &input,
        &Audio {
            channels: vec![x.clone(); 8],
            sample_rate: 16_000,
        },
    )
    .unwrap();

    for mode in ["fixed:0", "fixed:1", "acc"] {
        let out = dir.path().join(format!("{mode}.wav").replace(':', "_"));
        let dump = dir.path().join(format!("{mode}.bft").replace(':', "_"));
        ok(&[
            "enhance",
            "--bank",
            s(&bank),
            "--mode",
            mode,
            "--input",
            s(&input),
            "--out",
            s(&out),
            "--dump",
            s(&dump),
        ]);
        let y = &wav::read(&out).unwrap().channels[0];
        assert_eq!(y.len(), n);
        let (lo, hi) = (512, n - 512);
        let err: f64 = x[lo..hi].iter().zip(&y[lo..hi]).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = x[lo..hi].iter().map(|a| a * a).sum();
        assert!((err / norm).sqrt() < 1e-5, "{mode}: {}", (err / norm).sqrt());

        let tensors = load_weights_dump(&dump).unwrap();
        assert_eq!(tensors.len(), 1);
        assert_eq!(tensors[0].dims, vec![n.div_ceil(128), 257, 2]);
    }
    no_partials(dir.path());
}

#[test]
fn enhance_rejects_bad_requests_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.wav");
    wav::write(
        &input,
        &Audio {
            channels: vec![vec![0.1; 4000]; 3],
            sample_rate: 16_000,
        },
    )
    .unwrap();
    let out = dir.path().join("out.wav");
    let r = run(&["enhance", "--mode", "acc", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("3 channels"));

    let r = run(&["enhance", "--mode", "neural", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("weight file"));

    let r = run(&["enhance", "--mode", "fixed:9", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
    no_partials(dir.path());
}

#[test]
fn evaluate_identical_files_hits_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.wav");
    wav::write(&a, &Audio::mono(synthetic_speech(16_000, 16_000.0, 1), 16_000)).unwrap();
    let json = ok(&["evaluate", "--est", s(&a), "--reference", s(&a)]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["si_sdr_db"], 60.0);
    assert!(v.get("sir_db").is_none());
}

#[test]
fn simulate_then_evaluate_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&[
        "simulate",
        "--t60",
        "0.2",
        "--snr",
        "30",
        "--duration",
        "1.5",
        "--seed",
        "4",
        "--beams",
        "--out",
        s(&scene),
    ]);
    for f in [
        "mix.wav",
        "ref.wav",
        "target.wav",
        "interference.wav",
        "noise.wav",
        "beams.wav",
        "scenario.json",
    ] {
        assert!(scene.join(f).exists(), "{f}");
    }
    assert_eq!(wav::read(&scene.join("mix.wav")).unwrap().num_channels(), 8);
    assert_eq!(wav::read(&scene.join("beams.wav")).unwrap().num_channels(), 4);

    let r = run(&["simulate", "--duration", "1", "--out", s(&scene)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("already exists"));

    let report = dir.path().join("report.json");
    ok(&["evaluate", "--scene", s(&scene), "--mode", "acc", "--out", s(&report)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["label"], "acc");
    for key in ["delta_snr_db", "si_sdr_db", "sir_db"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
    }
}

#[test]
fn gen_dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&[
        "gen-dataset",
        "--count",
        "3",
        "--seed",
        "7",
        "--duration",
        "1.5",
        "--out",
        s(&a),
    ]);
    let out = Command::new(env!("CARGO_BIN_EXE_beamfusion"))
        .args(["gen-dataset", "--count", "3", "--duration", "1.5", "--out", s(&b)])
        .env("BEAMFUSION_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    let records = read_manifest(&a.join("manifest.jsonl")).unwrap();
    assert_eq!(records.len(), 3);
    for name in ["manifest.jsonl", "dataset.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    for r in &records {
        for f in [&r.paths.mix, &r.paths.beams, &r.paths.reference] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }
    let r = run(&["gen-dataset", "--count", "1", "--out", s(&a)]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn beampattern_and_sir_curve_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let bp = dir.path().join("bp.csv");
    ok(&["beampattern", "--freqs", "1000", "--step", "45", "--out", s(&bp)]);
    let text = fs::read_to_string(&bp).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "freq_hz,theta_deg,DMA-I,DMA-II,DMA-III,DMA-IV");
    assert_eq!(lines.len(), 6);
    // DMA-I has its null at 90 degrees and unit gain at 0.
    let at = |row: &str, col: usize| row.split(',').nth(col).unwrap().parse::<f64>().unwrap();
    assert!(at(lines[1], 2).abs() < 1e-6);
    assert!(at(lines[3], 2) < -100.0);

    let csv = dir.path().join("sir.csv");
    ok(&[
        "sir-curve",
        "--modes",
        "fixed:1,acc",
        "--anechoic",
        "--duration",
        "1",
        "--out",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mode,angle_deg,sir_db,n_trials"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().any(|r| r[0] == "fixed:1") && rows.iter().any(|r| r[0] == "acc"));
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap().is_finite()));
}
