//! Command implementations behind the `beamfusion` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use beamfusion_core::array::FrequencyGrid;
use beamfusion_core::beamformer::{beampattern, FilterBank};
use beamfusion_core::fusion::load_model;
use beamfusion_core::metrics::{bss_sir, si_sdr, write_sir_csv, BSS_FILTER_LEN};
use beamfusion_core::pipeline::{
    beam_spectrograms, evaluate_audio, save_weights_dump, sir_curve, Enhancer, Mode, SirCurveConfig,
};
use beamfusion_core::roomsim::{
    gen_dataset, synthesize_scenario, synthetic_speech, DatasetConfig, Scenario, ScenarioAudio,
};
use beamfusion_core::stft::{analyze, StftConfig, StftProcessor, Window};
use beamfusion_core::wav::{self, Audio};
use beamfusion_core::{ArrayGeometry, Spectrogram};

#[derive(Debug, Parser)]
#[command(
    name = "beamfusion",
    version,
    about = "Beamformer design, room simulation, enhancement and evaluation"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design the fixed filter bank and write it to a file.
    Design(DesignArgs),
    /// Magnitude response of every filter against angle, as CSV.
    Beampattern(BeampatternArgs),
    /// Render one scenario to WAV files.
    Simulate(SimulateArgs),
    /// Generate a dataset of reverberant moving-interferer mixtures.
    GenDataset(GenDatasetArgs),
    /// Beamform and fuse a multichannel recording.
    Enhance(EnhanceArgs),
    /// Score an estimate, or a whole processing mode on a rendered scene.
    Evaluate(EvaluateArgs),
    /// SIR against interferer angle for several modes, as CSV.
    SirCurve(SirCurveArgs),
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 8)]
    pub mics: usize,
    /// Microphone spacing in meters.
    #[arg(long, default_value_t = 0.01)]
    pub spacing: f64,
    #[arg(long, default_value_t = 16_000.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 343.0)]
    pub sound_speed: f64,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, default_value_t = 512)]
    pub nfft: usize,
    /// Look direction in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta_s: f64,
    /// Null directions in degrees, one DMA per entry.
    #[arg(long, value_delimiter = ',', default_value = "90,120,150,180")]
    pub nulls: Vec<f64>,
    /// Prepend the maximum white-noise-gain filter.
    #[arg(long)]
    pub mwng: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BeampatternArgs {
    /// Filter-bank file; the default bank when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Frequencies in Hz, rounded to the nearest STFT bin.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
    pub freqs: Vec<f64>,
    /// Angle step in degrees.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; the reference moving-interferer scene when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// T60 of the reference scene.
    #[arg(long, default_value_t = 0.3)]
    pub t60: f64,
    /// SNR of the reference scene; omit for no sensor noise.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Target WAV; synthetic speech when omitted.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Interferer WAVs, one per scenario interferer.
    #[arg(long)]
    pub interferer: Vec<PathBuf>,
    /// Length of synthetic signals in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    /// Overrides the scenario seed.
    #[arg(long, env = "BEAMFUSION_SEED")]
    pub seed: Option<u64>,
    /// Also write `beams.wav` using this filter bank (or the default one).
    #[arg(long)]
    pub beams: bool,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Output directory; must not exist.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, env = "BEAMFUSION_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.2)]
    pub t60_min: f64,
    #[arg(long, default_value_t = 0.8)]
    pub t60_max: f64,
    #[arg(long, default_value_t = 20.0)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 40.0)]
    pub snr_max: f64,
    /// Directory of mono 16 kHz WAVs; synthetic speech when omitted.
    #[arg(long)]
    pub source_dir: Option<PathBuf>,
    /// Also write target, interference and noise images.
    #[arg(long)]
    pub components: bool,
    #[arg(long, value_delimiter = ',', default_value = "90,120,150,180")]
    pub nulls: Vec<f64>,
    #[arg(long)]
    pub mwng: bool,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    /// fixed:<p>, acc or neural.
    #[arg(long, default_value = "acc")]
    pub mode: Mode,
    /// BFW1 weight file, required by the neural mode.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Filter-bank file; the default bank when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Multichannel microphone WAV.
    #[arg(long)]
    pub input: PathBuf,
    /// The input already holds one channel per beam.
    #[arg(long)]
    pub beams_input: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the weight trajectory `[T, F, P]` here.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimate WAV (with --reference).
    #[arg(long, requires = "reference", conflicts_with = "scene")]
    pub est: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Interference WAV at the reference microphone, for the SIR.
    #[arg(long, requires = "est")]
    pub interference: Option<PathBuf>,
    /// Scene directory holding mix, ref, target, interference and noise WAVs.
    #[arg(long, required_unless_present = "est")]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SirCurveArgs {
    #[arg(long, value_delimiter = ',', default_value = "fixed:0,fixed:1,fixed:2,fixed:3,acc")]
    pub modes: Vec<Mode>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.24)]
    pub t60: f64,
    /// Direct path only.
    #[arg(long)]
    pub anechoic: bool,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, env = "BEAMFUSION_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        ensure!(jobs > 0, "--jobs must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Design(a) => cmd_design(&a),
        Command::Beampattern(a) => cmd_beampattern(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::GenDataset(a) => cmd_gen_dataset(&a),
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::SirCurve(a) => cmd_sir_curve(&a),
    }
}

fn partial_path(dest: &Path) -> PathBuf {
    let name = dest
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    dest.with_file_name(format!(".{name}.partial"))
}

fn remove_any(path: &Path) {
    if path.is_dir() {
        let _ = fs::remove_dir_all(path);
    } else {
        let _ = fs::remove_file(path);
    }
}

/// Builds the output at a hidden sibling path and moves it into place only
/// when `write` succeeds, so a failed run leaves nothing behind.
fn commit<T>(dest: &Path, write: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = partial_path(dest);
    remove_any(&tmp);
    match write(&tmp) {
        Ok(v) => {
            fs::rename(&tmp, dest).with_context(|| format!("moving output to {}", dest.display()))?;
            Ok(v)
        }
        Err(e) => {
            remove_any(&tmp);
            Err(e)
        }
    }
}

fn fresh_dir(dest: &Path) -> Result<()> {
    if dest.exists() {
        bail!("{} already exists; refusing to overwrite", dest.display());
    }
    Ok(())
}

fn default_bank() -> Result<FilterBank> {
    let geom = ArrayGeometry::reference();
    let grid = FrequencyGrid::new(512, geom.sample_rate)?;
    Ok(FilterBank::standard(
        &geom,
        &grid,
        0.0,
        &[90.0, 120.0, 150.0, 180.0],
        false,
    )?)
}

fn load_bank(path: Option<&Path>) -> Result<FilterBank> {
    match path {
        Some(p) => FilterBank::load(p).with_context(|| format!("loading filter bank {}", p.display())),
        None => default_bank(),
    }
}

/// STFT matching the bank's FFT size with 75% overlap.
fn stft_for(bank: &FilterBank) -> StftConfig {
    let n = bank.nfft();
    StftConfig {
        nfft: n,
        window_len: n,
        hop: n / 4,
        window: Window::SqrtHann,
    }
}

fn build_enhancer(args: &ModeArgs, bank: &FilterBank, stft: &StftConfig) -> Result<Enhancer> {
    let params = match (&args.weights, args.mode) {
        (Some(path), Mode::Neural) => {
            let p = load_model(path).with_context(|| format!("loading weights {}", path.display()))?;
            ensure!(
                p.arch.beams == bank.len(),
                "model fuses {} beams but the filter bank has {}",
                p.arch.beams,
                bank.len()
            );
            ensure!(
                p.arch.stft == *stft,
                "model STFT settings differ from the filter bank's"
            );
            Some(p)
        }
        _ => None,
    };
    if let Mode::Fixed(p) = args.mode {
        ensure!(p < bank.len(), "beam {p} requested, bank has {} filters", bank.len());
    }
    Ok(Enhancer::new(args.mode, params)?)
}

fn read_wav(path: &Path) -> Result<Audio> {
    wav::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_mono(path: &Path) -> Result<Vec<f64>> {
    let a = read_wav(path)?;
    ensure!(a.num_channels() == 1, "{}: expected a mono file", path.display());
    Ok(a.channels.into_iter().next().unwrap_or_default())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn cmd_design(a: &DesignArgs) -> Result<()> {
    let g = &a.geometry;
    let geom = ArrayGeometry::new(g.mics, g.spacing, g.sound_speed, g.fs)?;
    let grid = FrequencyGrid::new(a.nfft, g.fs)?;
    let bank = FilterBank::standard(&geom, &grid, a.theta_s, &a.nulls, a.mwng)?;
    commit(&a.out, |tmp| Ok(bank.save(tmp)?))?;
    for f in &bank.filters {
        let null = f
            .theta_null
            .map_or("-".to_string(), |t| format!("{:.1}", t.to_degrees()));
        println!("{}\tnull {}\tfallback bins {:?}", f.label, null, f.fallback_bins);
    }
    Ok(())
}

pub fn cmd_beampattern(a: &BeampatternArgs) -> Result<()> {
    ensure!(a.step > 0.0 && a.step <= 180.0, "--step must lie in (0, 180]");
    let bank = load_bank(a.bank.as_deref())?;
    let grid = FrequencyGrid::new(bank.nfft(), bank.geometry().sample_rate)?;
    let df = grid.bin_freq(1);
    let thetas: Vec<f64> = (0..=(180.0 / a.step).floor() as usize)
        .map(|i| (i as f64 * a.step).to_radians())
        .collect();
    let mut csv = String::from("freq_hz,theta_deg");
    for l in bank.labels() {
        csv.push(',');
        csv.push_str(&l);
    }
    csv.push('\n');
    for &f in &a.freqs {
        ensure!(
            f >= 0.0 && f <= grid.bin_freq(grid.num_bins() - 1),
            "frequency {f} Hz is outside [0, fs/2]"
        );
        let freq = grid.bin_freq((f / df).round() as usize);
        let patterns = bank
            .filters
            .iter()
            .map(|flt| beampattern(flt, freq, &thetas))
            .collect::<beamfusion_core::Result<Vec<_>>>()?;
        for (i, th) in thetas.iter().enumerate() {
            csv.push_str(&format!("{freq},{}", th.to_degrees()));
            for p in &patterns {
                csv.push_str(&format!(",{:.6}", p[i].magnitude_db));
            }
            csv.push('\n');
        }
    }
    commit(&a.out, |tmp| Ok(fs::write(tmp, csv)?))
}

fn write_scene(dir: &Path, audio: &ScenarioAudio, rate: u32) -> Result<()> {
    let put = |name: &str, channels: Vec<Vec<f64>>| -> Result<()> {
        wav::write(
            &dir.join(name),
            &Audio {
                channels,
                sample_rate: rate,
            },
        )?;
        Ok(())
    };
    put("mix.wav", audio.mixture.clone())?;
    put("ref.wav", vec![audio.reference.clone()])?;
    put("target.wav", audio.target.clone())?;
    put("interference.wav", audio.interference.clone())?;
    put("noise.wav", audio.noise.clone())
}

fn read_scene(dir: &Path) -> Result<(ScenarioAudio, u32)> {
    let mix = read_wav(&dir.join("mix.wav"))?;
    let parts = ["target.wav", "interference.wav", "noise.wav"]
        .iter()
        .map(|n| {
            let a = read_wav(&dir.join(n))?;
            ensure!(
                a.num_channels() == mix.num_channels() && a.len() == mix.len(),
                "{n} does not match mix.wav in shape"
            );
            Ok(a.channels)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = read_mono(&dir.join("ref.wav"))?;
    ensure!(reference.len() == mix.len(), "ref.wav and mix.wav differ in length");
    let [target, interference, noise]: [Vec<Vec<f64>>; 3] =
        parts.try_into().map_err(|_| anyhow::anyhow!("scene is incomplete"))?;
    Ok((
        ScenarioAudio {
            mixture: mix.channels,
            reference,
            target,
            interference,
            noise,
        },
        mix.sample_rate,
    ))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    fresh_dir(&a.out)?;
    let mut scn = match &a.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<Scenario>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Scenario::reference(a.t60, a.snr, 0),
    };
    if let Some(seed) = a.seed {
        scn.seed = seed;
    }
    scn.validate()?;
    let fs_hz = scn.room.sample_rate;
    let n = (a.duration * fs_hz).round() as usize;
    ensure!(n > 0, "--duration must be positive");
    let target = match &a.target {
        Some(p) => read_mono(p)?,
        None => synthetic_speech(n, fs_hz, scn.seed),
    };
    let interferers: Vec<Vec<f64>> = if a.interferer.is_empty() {
        (0..scn.interferers.len())
            .map(|i| synthetic_speech(n, fs_hz, scn.seed.wrapping_add(1 + i as u64)))
            .collect()
    } else {
        a.interferer.iter().map(|p| read_mono(p)).collect::<Result<_>>()?
    };
    let audio = synthesize_scenario(&scn, &target, &interferers)?;
    let bank = if a.beams {
        Some(load_bank(a.bank.as_deref())?)
    } else {
        None
    };
    commit(&a.out, |tmp| {
        fs::create_dir_all(tmp)?;
        let rate = fs_hz as u32;
        write_scene(tmp, &audio, rate)?;
        if let Some(bank) = &bank {
            let stft = stft_for(bank);
            let beams = beamfusion_core::beamformer::beamform_signals(bank, &audio.mixture, &stft)?;
            wav::write(
                &tmp.join("beams.wav"),
                &Audio {
                    channels: beams,
                    sample_rate: rate,
                },
            )?;
        }
        write_json(&tmp.join("scenario.json"), &scn)
    })
}

pub fn cmd_gen_dataset(a: &GenDatasetArgs) -> Result<()> {
    fresh_dir(&a.out)?;
    let cfg = DatasetConfig {
        count: a.count,
        seed: a.seed,
        duration: a.duration,
        t60_range: [a.t60_min, a.t60_max],
        snr_range: [a.snr_min, a.snr_max],
        source_dir: a.source_dir.clone(),
        components: a.components,
        nulls_deg: a.nulls.clone(),
        include_mwng: a.mwng,
        stft: StftConfig::default(),
    };
    let records = commit(&a.out, |tmp| Ok(gen_dataset(&cfg, tmp)?))?;
    println!("wrote {} samples to {}", records.len(), a.out.display());
    Ok(())
}

fn beams_from_channels(channels: &[Vec<f64>], stft: &StftConfig) -> Result<Vec<Spectrogram>> {
    channels.iter().map(|c| analyze(c, stft).map_err(Into::into)).collect()
}

pub fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let bank = load_bank(a.mode.bank.as_deref())?;
    let stft = stft_for(&bank);
    let enhancer = build_enhancer(&a.mode, &bank, &stft)?;
    let input = read_wav(&a.input)?;
    ensure!(
        f64::from(input.sample_rate) == bank.geometry().sample_rate,
        "{} is sampled at {} Hz, the filter bank expects {}",
        a.input.display(),
        input.sample_rate,
        bank.geometry().sample_rate
    );
    let beams = if a.beams_input {
        ensure!(
            input.num_channels() == bank.len(),
            "{} has {} channels, expected one per beam ({})",
            a.input.display(),
            input.num_channels(),
            bank.len()
        );
        beams_from_channels(&input.channels, &stft)?
    } else {
        ensure!(
            input.num_channels() == bank.geometry().num_mics,
            "{} has {} channels, the array has {} microphones",
            a.input.display(),
            input.num_channels(),
            bank.geometry().num_mics
        );
        beam_spectrograms(&bank, &input.channels, &stft)?
    };
    let (fused, weights) = enhancer.run(&beams)?;
    let out = StftProcessor::new(stft)?.reconstruct(&fused, input.len())?;
    commit(&a.out, |tmp| Ok(wav::write(tmp, &Audio::mono(out, input.sample_rate))?))?;
    if let Some(dump) = &a.dump {
        let name = match enhancer.mode() {
            Mode::Neural => "fusion/mask",
            Mode::Acc => "acc/alpha",
            Mode::Fixed(_) => "fixed/alpha",
        };
        commit(dump, |tmp| Ok(save_weights_dump(tmp, name, &weights)?))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PairReport {
    si_sdr_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sir_db: Option<f64>,
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => commit(p, |tmp| write_json(tmp, value)),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    if let (Some(est), Some(reference)) = (&a.est, &a.reference) {
        let e = read_mono(est)?;
        let r = read_mono(reference)?;
        let sir_db = match &a.interference {
            Some(p) => Some(bss_sir(&e, &r, &read_mono(p)?, BSS_FILTER_LEN)?),
            None => None,
        };
        let report = PairReport {
            si_sdr_db: si_sdr(&e, &r)?,
            sir_db,
        };
        return emit_json(a.out.as_deref(), &report);
    }
    let scene = a
        .scene
        .as_deref()
        .context("either --est/--reference or --scene is required")?;
    let bank = load_bank(a.mode.bank.as_deref())?;
    let stft = stft_for(&bank);
    let enhancer = build_enhancer(&a.mode, &bank, &stft)?;
    let (audio, rate) = read_scene(scene)?;
    ensure!(
        f64::from(rate) == bank.geometry().sample_rate,
        "scene sample rate {rate} differs from the filter bank's"
    );
    let mut report = evaluate_audio(&a.mode.mode.to_string(), &bank, &enhancer, &audio, &stft)?;
    report.meta.insert("scene".into(), scene.display().to_string().into());
    emit_json(a.out.as_deref(), &report)
}

pub fn cmd_sir_curve(a: &SirCurveArgs) -> Result<()> {
    ensure!(!a.modes.is_empty(), "no modes given");
    let bank = load_bank(a.bank.as_deref())?;
    let stft = stft_for(&bank);
    let enhancers = a
        .modes
        .iter()
        .map(|&mode| {
            build_enhancer(
                &ModeArgs {
                    mode,
                    weights: a.weights.clone(),
                    bank: None,
                },
                &bank,
                &stft,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = SirCurveConfig {
        angles: beamfusion_core::metrics::default_sir_angles(),
        trials: a.trials,
        t60: a.t60,
        anechoic: a.anechoic,
        snr_db: a.snr,
        duration: a.duration,
        seed: a.seed,
    };
    let curves = sir_curve(&bank, &enhancers, &cfg, &stft)?;
    let labelled: Vec<(String, _)> = a.modes.iter().map(ToString::to_string).zip(curves).collect();
    commit(&a.out, |tmp| {
        let mut buf = Vec::new();
        write_sir_csv(&mut buf, &labelled)?;
        Ok(fs::write(tmp, buf)?)
    })
}
