//! Glue between beamforming, the two fusion back ends, and evaluation.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acc::acc_run;
use crate::beamformer::{apply_bank, FilterBank};
use crate::fusion::{fuse_all, ModelParams};
use crate::metrics::{bss_sir, shadow_process, sir_vs_angle, EvalSignals, MetricReport, SirPoint, BSS_FILTER_LEN};
use crate::roomsim::{synthesize_scenario, synthetic_speech, Scenario, ScenarioAudio, SourceTrajectory};
use crate::stft::{analyze_multichannel, Spectrogram, StftConfig, StftProcessor};
use crate::tensorfile::{self, Tensor};
use crate::{Error, Result};

/// How beam outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// A single beam, by index into the filter bank.
    Fixed(usize),
    Acc,
    Neural,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" => Ok(Mode::Acc),
            "neural" => Ok(Mode::Neural),
            _ => {
                let p = s
                    .strip_prefix("fixed:")
                    .ok_or_else(|| Error::invalid(format!("unknown mode {s:?}; use fixed:<p>, acc or neural")))?;
                p.parse()
                    .map(Mode::Fixed)
                    .map_err(|_| Error::invalid(format!("bad beam index in {s:?}")))
            }
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Fixed(p) => write!(f, "fixed:{p}"),
            Mode::Acc => f.write_str("acc"),
            Mode::Neural => f.write_str("neural"),
        }
    }
}

/// A mode together with whatever it needs to run.
#[derive(Debug, Clone)]
pub enum Enhancer {
    Fixed(usize),
    Acc,
    Neural(Box<ModelParams>),
}

impl Enhancer {
    pub fn new(mode: Mode, params: Option<ModelParams>) -> Result<Self> {
        match (mode, params) {
            (Mode::Fixed(p), _) => Ok(Enhancer::Fixed(p)),
            (Mode::Acc, _) => Ok(Enhancer::Acc),
            (Mode::Neural, Some(p)) => Ok(Enhancer::Neural(Box::new(p))),
            (Mode::Neural, None) => Err(Error::invalid("neural mode needs a weight file")),
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Enhancer::Fixed(p) => Mode::Fixed(*p),
            Enhancer::Acc => Mode::Acc,
            Enhancer::Neural(_) => Mode::Neural,
        }
    }

    /// Fused spectrogram and the per-frame weights `[T, F, P]` that made it.
    pub fn run(&self, beams: &[Spectrogram]) -> Result<(Spectrogram, Array3<f64>)> {
        match self {
            Enhancer::Fixed(p) => {
                let beam = beams
                    .get(*p)
                    .ok_or_else(|| Error::invalid(format!("beam {p} requested, bank has {}", beams.len())))?;
                let (t, f) = beam.data.dim();
                let mut w = Array3::zeros((t, f, beams.len()));
                w.index_axis_mut(Axis(2), *p).fill(1.0);
                Ok((beam.clone(), w))
            }
            Enhancer::Acc => acc_run(beams),
            Enhancer::Neural(params) => fuse_all(params, beams),
        }
    }
}

/// Beam spectrograms of multichannel time signals.
pub fn beam_spectrograms(bank: &FilterBank, signals: &[Vec<f64>], cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
    let mc = analyze_multichannel(signals, cfg)?;
    Ok(apply_bank(bank, &mc)?.into_iter().map(|b| b.spec).collect())
}

/// Enhanced time signal (same length as the input) plus the weights used.
pub fn enhance_signals(
    bank: &FilterBank,
    enhancer: &Enhancer,
    signals: &[Vec<f64>],
    cfg: &StftConfig,
) -> Result<(Vec<f64>, Array3<f64>)> {
    let len = signals.first().map_or(0, Vec::len);
    let beams = beam_spectrograms(bank, signals, cfg)?;
    let (fused, w) = enhancer.run(&beams)?;
    Ok((StftProcessor::new(*cfg)?.reconstruct(&fused, len)?, w))
}

/// Enhances the mixture, replays the same weights on the target and on the
/// interference-plus-noise images, and scores the result.
pub fn evaluate_audio(
    label: &str,
    bank: &FilterBank,
    enhancer: &Enhancer,
    audio: &ScenarioAudio,
    cfg: &StftConfig,
) -> Result<MetricReport> {
    let n = audio.reference.len();
    let residual: Vec<Vec<f64>> = audio
        .interference
        .iter()
        .zip(&audio.noise)
        .map(|(i, v)| i.iter().zip(v).map(|(a, b)| a + b).collect())
        .collect();
    let mix_beams = beam_spectrograms(bank, &audio.mixture, cfg)?;
    let (fused, w) = enhancer.run(&mix_beams)?;
    let shadows = shadow_process(
        &w,
        &[
            beam_spectrograms(bank, &audio.target, cfg)?,
            beam_spectrograms(bank, &residual, cfg)?,
        ],
    )?;
    let proc = StftProcessor::new(*cfg)?;
    let estimate = proc.reconstruct(&fused, n)?;
    let target_out = proc.reconstruct(&shadows[0], n)?;
    let residual_out = proc.reconstruct(&shadows[1], n)?;
    MetricReport::compute(
        label,
        &EvalSignals {
            reference: &audio.reference,
            target_in: &audio.target[0],
            interference_in: &audio.interference[0],
            noise_in: &audio.noise[0],
            estimate: &estimate,
            target_out: &target_out,
            residual_out: &residual_out,
        },
    )
}

pub const DUMP_MAGIC: &[u8; 4] = b"BFT1";
pub const DUMP_VERSION: u32 = 1;

/// Writes a weight trajectory `[T, F, P]` as a one-tensor container.
pub fn save_weights_dump(path: &Path, name: &str, w: &Array3<f64>) -> Result<()> {
    let (t, f, p) = w.dim();
    let data = w.iter().map(|&v| v as f32).collect();
    let tensor = Tensor::new(name, vec![t, f, p], data)?;
    let file = BufWriter::new(File::create(path)?);
    tensorfile::Writer::new(file, DUMP_MAGIC, DUMP_VERSION)?.tensors(&[tensor])?;
    Ok(())
}

pub fn load_weights_dump(path: &Path) -> Result<Vec<Tensor>> {
    let file = BufReader::new(File::open(path)?);
    tensorfile::Reader::open(file, DUMP_MAGIC, DUMP_VERSION)?.tensors()
}

/// Settings of the interference-angle sweep.
#[derive(Debug, Clone)]
pub struct SirCurveConfig {
    pub angles: Vec<f64>,
    pub trials: usize,
    pub t60: f64,
    /// Direct path only.
    pub anechoic: bool,
    pub snr_db: Option<f64>,
    pub duration: f64,
    pub seed: u64,
}

/// Static interferer at each angle, 2 m from the array; SIR of every
/// enhancer averaged over trials. Trials use independent synthetic talkers,
/// and every enhancer sees the same rendered scenes.
pub fn sir_curve(
    bank: &FilterBank,
    enhancers: &[Enhancer],
    cfg: &SirCurveConfig,
    stft: &StftConfig,
) -> Result<Vec<Vec<SirPoint>>> {
    let jobs: Vec<(usize, usize)> = (0..cfg.angles.len())
        .flat_map(|a| (0..cfg.trials).map(move |t| (a, t)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(a, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let seed: u64 = rng.random();
            let mut scn = Scenario::reference(cfg.t60, cfg.snr_db, seed);
            if cfg.anechoic {
                scn.room = scn.room.anechoic();
            }
            scn.interferers = vec![SourceTrajectory::at_azimuth(scn.array_center, 2.0, cfg.angles[a])];
            let n = (cfg.duration * scn.room.sample_rate).round() as usize;
            let target = synthetic_speech(n, scn.room.sample_rate, seed);
            let interferer = synthetic_speech(n, scn.room.sample_rate, seed.wrapping_add(1));
            let audio = synthesize_scenario(&scn, &target, &[interferer])?;
            let beams = beam_spectrograms(bank, &audio.mixture, stft)?;
            let proc = StftProcessor::new(*stft)?;
            enhancers
                .iter()
                .map(|e| {
                    let (fused, _) = e.run(&beams)?;
                    let est = proc.reconstruct(&fused, n)?;
                    bss_sir(&est, &audio.reference, &audio.interference[0], BSS_FILTER_LEN)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    (0..enhancers.len())
        .map(|e| {
            sir_vs_angle(&cfg.angles, cfg.trials, |angle, trial| {
                let a = cfg
                    .angles
                    .iter()
                    .position(|&x| x == angle)
                    .expect("angle comes from the same list");
                Ok(scores[a * cfg.trials + trial][e])
            })
        })
        .collect()
}
