//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any of them fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use beamfusion_cli::{cmd_gen_dataset, GenDatasetArgs};
use beamfusion_core::acc::acc_run;
use beamfusion_core::beamformer::{apply_bank, design_mwng, FilterBank};
use beamfusion_core::fusion::{fuse_all, Architecture, FusionEngine, ModelParams};
use beamfusion_core::metrics::{bss_sir, si_sdr, BSS_FILTER_LEN};
use beamfusion_core::pipeline::{beam_spectrograms, Enhancer, Mode};
use beamfusion_core::roomsim::{ism_rir, schroeder_t60, synthesize_scenario, synthetic_speech};
use beamfusion_core::stft::StftProcessor;
use beamfusion_core::{
    ArrayGeometry, Complex64, FrequencyGrid, MultichannelSpectrogram, Scenario, SourceTrajectory, Spectrogram,
    StftConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Far-field steering vector of the 8-mic ULA, written out from the geometry.
fn steering(geom: &ArrayGeometry, freq: f64, theta_deg: f64) -> Vec<Complex64> {
    let tau0 = geom.spacing / geom.sound_speed;
    let phase = -2.0 * PI * freq * tau0 * theta_deg.to_radians().cos();
    (0..geom.num_mics)
        .map(|m| Complex64::from_polar(1.0, m as f64 * phase))
        .collect()
}

fn h_dot(h: ndarray::ArrayView1<'_, Complex64>, d: &[Complex64]) -> Complex64 {
    h.iter().zip(d).map(|(a, b)| a.conj() * b).sum()
}

fn standard_bank() -> FilterBank {
    let geom = ArrayGeometry::reference();
    let grid = FrequencyGrid::new(512, geom.sample_rate).unwrap();
    FilterBank::standard(&geom, &grid, 0.0, &[90.0, 120.0, 150.0, 180.0], false).unwrap()
}

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    (err / norm).sqrt()
}

fn stft_round_trip() -> Outcome {
    let fs = 16_000;
    let x = noise(10 * fs, 1);
    let started = Instant::now();
    let proc = StftProcessor::new(StftConfig::default()).unwrap();
    let spec = proc.analyze(&x).unwrap();
    let y = proc.reconstruct(&spec, x.len()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let (lo, hi) = (512, x.len() - 512);
    let err = rel_l2(&y[lo..hi], &x[lo..hi]);
    outcome(
        err <= 1e-6 && secs < 1.0,
        format!("interior rel L2 {err:.2e}, {secs:.3} s"),
    )
}

fn dma_constraints() -> Outcome {
    let bank = standard_bank();
    let geom = *bank.geometry();
    let grid = FrequencyGrid::new(512, geom.sample_rate).unwrap();
    let mut worst_s: f64 = 0.0;
    let mut worst_n: f64 = 0.0;
    let mut degenerate = Vec::new();
    for (f, null) in bank.filters.iter().zip([90.0, 120.0, 150.0, 180.0]) {
        degenerate.push(f.fallback_bins.len());
        for k in 0..grid.num_bins() {
            if f.fallback_bins.contains(&k) {
                continue;
            }
            let freq = grid.bin_freq(k);
            let h = f.coeffs.row(k);
            worst_s = worst_s.max((h_dot(h, &steering(&geom, freq, 0.0)) - 1.0).norm());
            worst_n = worst_n.max(h_dot(h, &steering(&geom, freq, null)).norm());
        }
    }
    let mwng = design_mwng(&geom, &grid, 0.0).unwrap();
    let target = 10.0 * 8f64.log10();
    let mut worst_wng: f64 = 0.0;
    for k in 0..grid.num_bins() {
        let h = mwng.coeffs.row(k);
        let d = steering(&geom, grid.bin_freq(k), 0.0);
        let gain = h_dot(h, &d).norm_sqr() / h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        worst_wng = worst_wng.max((10.0 * gain.log10() - target).abs());
    }
    outcome(
        worst_s <= 1e-8 && worst_n <= 1e-6 && worst_wng <= 1e-9,
        format!(
            "max |h^H d_s - 1| {worst_s:.1e}, max |h^H d_null| {worst_n:.1e}, MWNG WNG err {worst_wng:.1e} dB, fallback bins {degenerate:?}"
        ),
    )
}

fn simplex_combination() -> Outcome {
    let bank = standard_bank();
    let geom = *bank.geometry();
    let grid = FrequencyGrid::new(512, geom.sample_rate).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut alpha = Array2::from_shape_fn((grid.num_bins(), bank.len()), |_| -(1.0 - rng.random::<f64>()).ln());
        for mut row in alpha.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|a| a / s);
        }
        let h = bank.combine(&alpha).unwrap();
        for k in 0..grid.num_bins() {
            let d = steering(&geom, grid.bin_freq(k), 0.0);
            worst = worst.max((h_dot(h.row(k), &d) - 1.0).norm());
        }
    }
    outcome(worst <= 1e-8, format!("100 draws, max residual {worst:.1e}"))
}

/// Exponentiated-gradient recursion for one bin, in plain scalars.
fn eg_oracle(frames: &[Vec<Complex64>], mu: f64, floor: f64) -> Vec<Vec<f64>> {
    let p = frames[0].len();
    let mut a = vec![1.0 / p as f64; p];
    let mut out = Vec::new();
    for z in frames {
        out.push(a.clone());
        let y: Complex64 = a.iter().zip(z).map(|(w, v)| v * *w).sum();
        let power: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        let mut next: Vec<f64> = a
            .iter()
            .zip(z)
            .map(|(w, v)| w * (-mu * 2.0 * (y.conj() * v).re / power).exp())
            .collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|w| *w = (*w / s).max(floor));
        let s: f64 = next.iter().sum();
        a = next.into_iter().map(|w| w / s).collect();
    }
    out
}

fn acc_scalar_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frames: Vec<Vec<Complex64>> = (0..2000)
        .map(|_| {
            (0..3)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let expected = eg_oracle(&frames, 0.1, 1e-4);
    let beams: Vec<Spectrogram> = (0..3)
        .map(|p| {
            let mut s = Spectrogram::zeros(frames.len(), StftConfig::default());
            for (t, f) in frames.iter().enumerate() {
                s.data.row_mut(t).fill(f[p]);
            }
            s
        })
        .collect();
    let (_, traj) = acc_run(&beams).unwrap();
    let mut worst: f64 = 0.0;
    for (t, e) in expected.iter().enumerate() {
        for (p, w) in e.iter().enumerate() {
            worst = worst.max((traj[[t, 100, p]] - w).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("2000 frames, 3 beams, max deviation {worst:.1e}"),
    )
}

fn acc_interferer_120() -> Outcome {
    let fs = 16_000.0;
    let n = (8.0 * fs) as usize;
    let mut scn = Scenario::reference(0.0, None, 5);
    scn.room = scn.room.anechoic();
    scn.interferers = vec![SourceTrajectory::at_azimuth(scn.array_center, 2.0, 120.0)];
    let target = synthetic_speech(n, fs, 5);
    let audio = synthesize_scenario(&scn, &target, &[noise(n, 6)]).unwrap();
    let bank = standard_bank();
    let cfg = StftConfig::default();
    let beams = beam_spectrograms(&bank, &audio.mixture, &cfg).unwrap();
    let (_, traj) = acc_run(&beams).unwrap();

    let mut simplex_err: f64 = 0.0;
    let mut min_w = f64::INFINITY;
    for lane in traj.lanes(Axis(2)) {
        simplex_err = simplex_err.max((lane.sum() - 1.0).abs());
        min_w = min_w.min(lane.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let first = (5.0 * fs / cfg.hop as f64).ceil() as usize;
    let df = fs / cfg.nfft as f64;
    let bins: Vec<usize> = (0..cfg.num_bins())
        .filter(|&k| (500.0..=4000.0).contains(&(k as f64 * df)))
        .collect();
    let tail = traj.slice(s![first.., .., ..]);
    let means: Vec<f64> = (0..bank.len())
        .map(|p| {
            let sum: f64 = bins.iter().map(|&k| tail.slice(s![.., k, p]).sum()).sum();
            sum / (bins.len() * tail.dim().0) as f64
        })
        .collect();
    let best = means
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let labels = bank.labels();
    outcome(
        best == 1 && simplex_err <= 1e-10 && min_w >= 0.0,
        format!(
            "mean weights {:?}, winner {}, simplex err {simplex_err:.1e}, min weight {min_w:.1e}",
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            labels[best]
        ),
    )
}

fn ism_direct_path() -> Outcome {
    let scn = Scenario::reference(0.3, None, 0);
    let room = scn.room.anechoic();
    let src = scn.target_position();
    let mic = scn.mic_positions()[0];
    let d = ((src[0] - mic[0]).powi(2) + (src[1] - mic[1]).powi(2) + (src[2] - mic[2]).powi(2)).sqrt();
    let delay = d / room.sound_speed * room.sample_rate;
    let amp = 1.0 / (4.0 * PI * d);
    let rir = ism_rir(&room, src, mic).unwrap();
    let peak = rir
        .taps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let area: f64 = rir.taps.iter().sum();
    let amp_err = (area - amp).abs() / amp;
    outcome(
        (peak as f64 - delay).abs() <= 1.0 && amp_err <= 0.02,
        format!(
            "peak at {peak} vs {delay:.2} samples, amplitude error {:.3}%",
            amp_err * 100.0
        ),
    )
}

fn ism_t60() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for t60 in [0.3, 0.7] {
        let scn = Scenario::reference(t60, None, 0);
        let rir = ism_rir(&scn.room, scn.target_position(), scn.mic_positions()[0]).unwrap();
        let est = schroeder_t60(&rir.taps, rir.sample_rate).unwrap();
        let ratio = est / t60;
        pass &= (0.8..=1.2).contains(&ratio);
        details.push(format!("{t60} s -> {est:.3} s ({ratio:.3}x)"));
    }
    outcome(pass, details.join(", "))
}

fn bss_sir_construction() -> Outcome {
    let n = 160_000;
    let s = noise(n, 21);
    let i = noise(n, 22);
    let est: Vec<f64> = s.iter().zip(&i).map(|(a, b)| a + 0.1 * b).collect();
    let sir = bss_sir(&est, &s, &i, BSS_FILTER_LEN).unwrap();
    outcome((sir - 20.0).abs() <= 0.5, format!("{sir:.3} dB"))
}

fn si_sdr_construction() -> Outcome {
    let s = noise(48_000, 31);
    let raw = noise(48_000, 32);
    let ss: f64 = s.iter().map(|x| x * x).sum();
    let proj: f64 = raw.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let mut e: Vec<f64> = raw.iter().zip(&s).map(|(a, b)| a - proj * b).collect();
    let ee: f64 = e.iter().map(|x| x * x).sum();
    let g = (ss / 100.0 / ee).sqrt();
    e.iter_mut().for_each(|x| *x *= g);
    let est: Vec<f64> = s.iter().zip(&e).map(|(a, b)| 0.7 * (a + b)).collect();
    let v = si_sdr(&est, &s).unwrap();
    outcome((v - 20.0).abs() <= 1e-6, format!("{v:.9} dB"))
}

fn random_beams(p: usize, frames: usize, seed: u64) -> Vec<Spectrogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p)
        .map(|_| {
            let mut s = Spectrogram::zeros(frames, StftConfig::default());
            s.data
                .mapv_inplace(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            s
        })
        .collect()
}

fn neural_inference() -> Outcome {
    let arch = Architecture::standard(4);
    let beams = random_beams(4, 40, 41);

    let zero = ModelParams::random(arch, 1).unwrap().with_zero_decoder();
    let (fused, _) = fuse_all(&zero, &beams).unwrap();
    let mut mean_err: f64 = 0.0;
    for ((t, k), v) in fused.data.indexed_iter() {
        let mean = beams.iter().map(|b| b.data[[t, k]]).sum::<Complex64>() / 4.0;
        mean_err = mean_err.max((v - mean).norm());
    }

    let model = ModelParams::random(arch, 2).unwrap();
    let (batch_spec, batch_masks) = fuse_all(&model, &beams).unwrap();
    let batch_signal = StftProcessor::new(StftConfig::default())
        .unwrap()
        .synthesize(&batch_spec)
        .unwrap();
    let mut engine = FusionEngine::new(&model).unwrap();
    let mut stream_signal = Vec::new();
    let mut masks_equal = true;
    for t in 0..40 {
        let frame = Array2::from_shape_fn((257, 4), |(k, p)| beams[p].data[[t, k]]);
        let (mask, samples) = engine.push(frame.view()).unwrap();
        masks_equal &= mask.w.t() == batch_masks.index_axis(Axis(0), t);
        stream_signal.extend(samples);
    }
    stream_signal.extend(engine.flush());
    let stream_exact = masks_equal && stream_signal == batch_signal;

    let mut altered = beams.clone();
    for (a, b) in altered.iter_mut().zip(random_beams(4, 40, 42)) {
        a.data.slice_mut(s![25.., ..]).assign(&b.data.slice(s![25.., ..]));
    }
    let (alt_spec, alt_masks) = fuse_all(&model, &altered).unwrap();
    let causal = alt_masks.slice(s![..25, .., ..]) == batch_masks.slice(s![..25, .., ..])
        && alt_spec.data.slice(s![..25, ..]) == batch_spec.data.slice(s![..25, ..])
        && alt_masks.slice(s![25.., .., ..]) != batch_masks.slice(s![25.., .., ..]);

    let bytes = model.write_to(Vec::new()).unwrap();
    let back = ModelParams::read_from(bytes.as_slice()).unwrap();
    let round_trip = back == model && back.write_to(Vec::new()).unwrap() == bytes;

    outcome(
        mean_err <= 1e-12 && stream_exact && causal && round_trip,
        format!(
            "uniform-mask err {mean_err:.1e}, stream==batch {stream_exact}, causal {causal}, BFW1 round trip {round_trip}"
        ),
    )
}

fn end_to_end_plane_wave() -> Outcome {
    let cfg = StftConfig::default();
    let fs = 16_000.0;
    let n = 3 * 16_000;
    let x = synthetic_speech(n, fs, 51);
    let proc = StftProcessor::new(cfg).unwrap();
    let src = proc.analyze(&x).unwrap();
    let bank = standard_bank();
    let geom = *bank.geometry();
    let channels: Vec<Spectrogram> = (0..geom.num_mics)
        .map(|m| {
            let mut ch = src.clone();
            for (k, mut col) in ch.data.columns_mut().into_iter().enumerate() {
                let d = steering(&geom, k as f64 * fs / cfg.nfft as f64, 0.0)[m];
                col.mapv_inplace(|z| z * d);
            }
            ch
        })
        .collect();
    let mc = MultichannelSpectrogram::new(channels).unwrap();
    let beams: Vec<Spectrogram> = apply_bank(&bank, &mc).unwrap().into_iter().map(|b| b.spec).collect();

    let arch = Architecture::standard(4);
    let mut enhancers: Vec<(String, Enhancer)> = (0..4)
        .map(|p| (format!("fixed:{p}"), Enhancer::new(Mode::Fixed(p), None).unwrap()))
        .collect();
    enhancers.push(("acc".into(), Enhancer::new(Mode::Acc, None).unwrap()));
    let uniform = ModelParams::random(arch, 3).unwrap().with_zero_decoder();
    enhancers.push((
        "neural-uniform".into(),
        Enhancer::new(Mode::Neural, Some(uniform)).unwrap(),
    ));
    let random = ModelParams::random(arch, 4).unwrap();
    enhancers.push((
        "neural-random".into(),
        Enhancer::new(Mode::Neural, Some(random)).unwrap(),
    ));

    let (lo, hi) = (512, n - 512);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, e) in &enhancers {
        let (fused, _) = e.run(&beams).unwrap();
        let y = proc.reconstruct(&fused, n).unwrap();
        let err = rel_l2(&y[lo..hi], &x[lo..hi]);
        worst = worst.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }
    outcome(worst <= 1e-4, parts.join(", "))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn dataset_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let args = |dir: &str| GenDatasetArgs {
        out: tmp.path().join(dir),
        count: 50,
        seed: 2024,
        duration: 4.0,
        t60_min: 0.2,
        t60_max: 0.8,
        snr_min: 20.0,
        snr_max: 40.0,
        source_dir: None,
        components: false,
        nulls: vec![90.0, 120.0, 150.0, 180.0],
        mwng: false,
    };
    let started = Instant::now();
    cmd_gen_dataset(&args("a")).unwrap();
    let secs = started.elapsed().as_secs_f64();
    cmd_gen_dataset(&args("b")).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let fa = files_under(&a);
    let identical = fa == files_under(&b)
        && fa
            .iter()
            .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap());
    outcome(
        identical && secs < 120.0,
        format!(
            "{} files byte-identical {identical}, 50 samples in {secs:.1} s",
            fa.len()
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: &[Check] = &[
        ("stft_round_trip", stft_round_trip),
        ("dma_constraints_and_mwng", dma_constraints),
        ("simplex_combination_distortionless", simplex_combination),
        ("acc_scalar_oracle", acc_scalar_oracle),
        ("acc_simplex_and_interferer_120", acc_interferer_120),
        ("ism_direct_path", ism_direct_path),
        ("ism_t60", ism_t60),
        ("bss_sir_20db", bss_sir_construction),
        ("si_sdr_20db", si_sdr_construction),
        ("neural_inference", neural_inference),
        ("end_to_end_plane_wave", end_to_end_plane_wave),
        ("dataset_determinism", dataset_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
