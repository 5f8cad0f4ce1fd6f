//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames are causal: the signal is prefixed with `window_len - hop` zeros so
//! frame `t` ends exactly at original sample `(t + 1) * hop`. Analysis and
//! synthesis both use a periodic square-root Hann window, so the squared
//! window overlap-adds to a constant at 75 % overlap.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// `sin(pi n / N)`, the square root of the periodic Hann window.
    SqrtHann,
}

impl Window {
    pub fn code(self) -> u32 {
        match self {
            Window::SqrtHann => 0,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Window::SqrtHann),
            other => Err(Error::format(format!("unknown window code {other}"))),
        }
    }

    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len).map(|n| (PI * n as f64 / len as f64).sin()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub nfft: usize,
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            nfft: 512,
            window_len: 512,
            hop: 128,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfft < 4 || !self.nfft.is_multiple_of(2) {
            return Err(Error::invalid(format!("nfft must be even, got {}", self.nfft)));
        }
        if self.window_len != self.nfft {
            return Err(Error::invalid("window length must equal nfft"));
        }
        if self.hop == 0 || !self.window_len.is_multiple_of(self.hop) {
            return Err(Error::invalid(format!(
                "hop {} must divide window length {}",
                self.hop, self.window_len
            )));
        }
        let (_, ripple) = ola_gain(&self.window.samples(self.window_len), self.hop);
        if ripple > 1e-10 {
            return Err(Error::invalid(format!(
                "window/hop pair violates constant overlap-add (ripple {ripple:e})"
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Leading zero padding, which is also the algorithmic latency in samples.
    pub fn pad(&self) -> usize {
        self.window_len - self.hop
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }
}

/// Overlap-added squared window: mean level and max deviation from it.
fn ola_gain(window: &[f64], hop: usize) -> (f64, f64) {
    let sums: Vec<f64> = (0..hop)
        .map(|n| window.iter().skip(n).step_by(hop).map(|w| w * w).sum())
        .collect();
    let mean = sums.iter().sum::<f64>() / hop as f64;
    let ripple = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max) / mean;
    (mean, ripple)
}

/// One-sided complex STFT, `T x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        Spectrogram {
            data: Array2::zeros((frames, config.num_bins())),
            config,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, Complex64> {
        self.data.row(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram {
    pub channels: Vec<Spectrogram>,
}

impl MultichannelSpectrogram {
    pub fn new(channels: Vec<Spectrogram>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::shape("multichannel spectrogram needs at least one channel"))?;
        let dims = first.data.dim();
        if channels
            .iter()
            .any(|c| c.data.dim() != dims || c.config != first.config)
        {
            return Err(Error::shape("channels disagree on frames, bins or config"));
        }
        Ok(MultichannelSpectrogram { channels })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_frames(&self) -> usize {
        self.channels[0].num_frames()
    }

    pub fn num_bins(&self) -> usize {
        self.channels[0].num_bins()
    }

    pub fn config(&self) -> StftConfig {
        self.channels[0].config
    }
}

/// Reusable FFT plans and window for one configuration.
#[derive(Clone)]
pub struct StftProcessor {
    config: StftConfig,
    window: Vec<f64>,
    ola_norm: f64,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for StftProcessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftProcessor").field("config", &self.config).finish()
    }
}

impl StftProcessor {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let window = config.window.samples(config.window_len);
        let (ola_norm, _) = ola_gain(&window, config.hop);
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(StftProcessor {
            config,
            window,
            ola_norm,
            forward: planner.plan_fft_forward(config.nfft),
            inverse: planner.plan_fft_inverse(config.nfft),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Windowed spectrum of one `window_len` block of samples.
    pub fn frame_spectrum(&self, block: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(block.len(), self.config.window_len);
        let mut buf: Vec<f64> = block.iter().zip(&self.window).map(|(x, w)| x * w).collect();
        self.forward
            .process(&mut buf, out)
            .expect("buffer sizes fixed by config");
    }

    /// Windowed, OLA-normalized time block for one spectrum frame.
    pub fn frame_waveform(&self, frame: ArrayView1<'_, Complex64>, out: &mut [f64]) {
        let mut spec: Vec<Complex64> = frame.to_vec();
        let last = spec.len() - 1;
        spec[0].im = 0.0;
        spec[last].im = 0.0;
        self.inverse
            .process(&mut spec, out)
            .expect("buffer sizes fixed by config");
        let scale = 1.0 / (self.config.nfft as f64 * self.ola_norm);
        for (x, w) in out.iter_mut().zip(&self.window) {
            *x *= w * scale;
        }
    }

    pub fn analyze(&self, signal: &[f64]) -> Result<Spectrogram> {
        let cfg = self.config;
        if signal.is_empty() {
            return Err(Error::invalid("cannot analyze an empty signal"));
        }
        if signal.len() < cfg.window_len {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than the {}-sample window",
                signal.len(),
                cfg.window_len
            )));
        }
        if signal.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("stft input"));
        }
        let frames = cfg.num_frames(signal.len());
        let pad = cfg.pad();
        let mut padded = vec![0.0; pad + frames * cfg.hop];
        padded[pad..pad + signal.len()].copy_from_slice(signal);

        let mut spec = Spectrogram::zeros(frames, cfg);
        for (t, mut row) in spec.data.rows_mut().into_iter().enumerate() {
            let start = t * cfg.hop;
            self.frame_spectrum(
                &padded[start..start + cfg.window_len],
                row.as_slice_mut().expect("standard layout"),
            );
        }
        Ok(spec)
    }

    /// Raw overlap-add output of length `T * hop + window_len - hop`, in
    /// padded coordinates (original sample `n` sits at index `n + pad`).
    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let cfg = self.config;
        if spec.config != cfg || spec.num_bins() != cfg.num_bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, config expects {}",
                spec.num_bins(),
                cfg.num_bins()
            )));
        }
        let frames = spec.num_frames();
        let mut out = vec![0.0; frames * cfg.hop + cfg.pad()];
        let mut block = vec![0.0; cfg.window_len];
        for t in 0..frames {
            self.frame_waveform(spec.frame(t), &mut block);
            let start = t * cfg.hop;
            for (o, b) in out[start..start + cfg.window_len].iter_mut().zip(&block) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Synthesis aligned back to the original time axis and cut to `len`.
    pub fn reconstruct(&self, spec: &Spectrogram, len: usize) -> Result<Vec<f64>> {
        let raw = self.synthesize(spec)?;
        let pad = self.config.pad();
        let mut out: Vec<f64> = raw[pad..].to_vec();
        out.resize(len, 0.0);
        Ok(out)
    }
}

pub fn analyze(signal: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    StftProcessor::new(*cfg)?.analyze(signal)
}

pub fn synthesize(spec: &Spectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    StftProcessor::new(*cfg)?.synthesize(spec)
}

pub fn analyze_multichannel(signals: &[Vec<f64>], cfg: &StftConfig) -> Result<MultichannelSpectrogram> {
    let first = signals
        .first()
        .ok_or_else(|| Error::invalid("no channels to analyze"))?;
    if signals.iter().any(|s| s.len() != first.len()) {
        return Err(Error::shape("channels have different lengths"));
    }
    let proc = StftProcessor::new(*cfg)?;
    let channels = signals
        .par_iter()
        .map(|s| proc.analyze(s))
        .collect::<Result<Vec<_>>>()?;
    MultichannelSpectrogram::new(channels)
}

/// Frame-at-a-time analyzer; produces bit-identical frames to
/// [`StftProcessor::analyze`] on the same signal.
#[derive(Debug, Clone)]
pub struct StreamingAnalyzer {
    proc: StftProcessor,
    buf: Vec<f64>,
}

impl StreamingAnalyzer {
    pub fn new(config: StftConfig) -> Result<Self> {
        Ok(StreamingAnalyzer {
            proc: StftProcessor::new(config)?,
            buf: vec![0.0; config.window_len],
        })
    }

    /// Feed exactly `hop` new samples and get the frame ending at them.
    pub fn push(&mut self, hop_samples: &[f64]) -> Result<Vec<Complex64>> {
        let hop = self.proc.config.hop;
        if hop_samples.len() != hop {
            return Err(Error::shape(format!(
                "expected {hop} samples, got {}",
                hop_samples.len()
            )));
        }
        if hop_samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("stft input"));
        }
        self.buf.copy_within(hop.., 0);
        let n = self.buf.len();
        self.buf[n - hop..].copy_from_slice(hop_samples);
        let mut frame = vec![Complex64::default(); self.proc.config.num_bins()];
        self.proc.frame_spectrum(&self.buf, &mut frame);
        Ok(frame)
    }

    pub fn reset(&mut self) {
        self.buf.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Frame-at-a-time overlap-add; each pushed frame releases `hop` finished
/// samples in padded coordinates.
#[derive(Debug, Clone)]
pub struct StreamingSynthesizer {
    proc: StftProcessor,
    acc: Vec<f64>,
    block: Vec<f64>,
}

impl StreamingSynthesizer {
    pub fn new(config: StftConfig) -> Result<Self> {
        Ok(StreamingSynthesizer {
            proc: StftProcessor::new(config)?,
            acc: vec![0.0; config.window_len],
            block: vec![0.0; config.window_len],
        })
    }

    pub fn push(&mut self, frame: ArrayView1<'_, Complex64>) -> Result<Vec<f64>> {
        let cfg = self.proc.config;
        if frame.len() != cfg.num_bins() {
            return Err(Error::shape("frame length does not match config"));
        }
        self.proc.frame_waveform(frame, &mut self.block);
        for (a, b) in self.acc.iter_mut().zip(&self.block) {
            *a += b;
        }
        let ready = self.acc[..cfg.hop].to_vec();
        self.acc.copy_within(cfg.hop.., 0);
        let n = self.acc.len();
        self.acc[n - cfg.hop..].iter_mut().for_each(|x| *x = 0.0);
        Ok(ready)
    }

    /// Remaining `window_len - hop` samples still in the overlap buffer.
    pub fn flush(&mut self) -> Vec<f64> {
        let pad = self.proc.config.pad();
        let out = self.acc[..pad].to_vec();
        self.acc.iter_mut().for_each(|x| *x = 0.0);
        out
    }
}
