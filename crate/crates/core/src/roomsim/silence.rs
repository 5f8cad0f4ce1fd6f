use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Energy-gated silence shortening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceTrim {
    /// Longest silent run kept, in seconds.
    pub max_gap: f64,
    /// Gating frame length in seconds.
    pub frame: f64,
    /// Frames below the loudest frame's energy by more than this are silent.
    pub threshold_db: f64,
}

impl Default for SilenceTrim {
    fn default() -> Self {
        SilenceTrim {
            max_gap: 0.1,
            frame: 0.01,
            threshold_db: -40.0,
        }
    }
}

impl SilenceTrim {
    /// Cuts every silent run longer than `max_gap` down to its first
    /// `max_gap` seconds. Non-silent frames are copied unchanged.
    pub fn apply(&self, wav: &[f64], fs: f64) -> Result<Vec<f64>> {
        if !(self.max_gap >= 0.0 && self.frame > 0.0 && fs > 0.0) {
            return Err(Error::invalid("silence trim needs max_gap >= 0, frame > 0 and fs > 0"));
        }
        if wav.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("silence trim input"));
        }
        let flen = ((self.frame * fs).round() as usize).max(1);
        let energies: Vec<f64> = wav
            .chunks(flen)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
            .collect();
        let peak = energies.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::invalid("input is entirely silent"));
        }
        let gate = peak * 10f64.powf(self.threshold_db / 10.0);
        let keep = (self.max_gap * fs).round() as usize;

        let mut out = Vec::with_capacity(wav.len());
        let mut run = 0usize;
        for (chunk, &e) in wav.chunks(flen).zip(&energies) {
            if e < gate {
                let room = keep.saturating_sub(run);
                out.extend_from_slice(&chunk[..room.min(chunk.len())]);
                run += chunk.len();
            } else {
                out.extend_from_slice(chunk);
                run = 0;
            }
        }
        Ok(out)
    }
}

/// [`SilenceTrim::apply`] with 0.1 s gaps, 10 ms frames and a -40 dB gate.
pub fn silence_trim(wav: &[f64], fs: f64) -> Result<Vec<f64>> {
    SilenceTrim::default().apply(wav, fs)
}
