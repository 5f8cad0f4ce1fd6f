//! Uniform linear array geometry, the discrete frequency grid and far-field
//! steering vectors.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_SOUND_SPEED: f64 = 343.0;
pub const DEFAULT_SAMPLE_RATE: f64 = 16_000.0;

/// A uniform linear array of `num_mics` omnidirectional sensors.
///
/// Microphone 0 is the phase reference. The array axis points from the last
/// microphone towards microphone 0, so a source at azimuth 0 (endfire)
/// reaches microphone 0 first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_mics: usize,
    /// Inter-element spacing in meters.
    pub spacing: f64,
    /// Speed of sound in m/s.
    pub sound_speed: f64,
    /// Sample rate in Hz.
    pub sample_rate: f64,
}

impl ArrayGeometry {
    pub fn new(num_mics: usize, spacing: f64, sound_speed: f64, sample_rate: f64) -> Result<Self> {
        let geom = ArrayGeometry {
            num_mics,
            spacing,
            sound_speed,
            sample_rate,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// The 8-element, 1 cm ULA at 16 kHz.
    pub fn reference() -> Self {
        ArrayGeometry {
            num_mics: 8,
            spacing: 0.01,
            sound_speed: DEFAULT_SOUND_SPEED,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_mics < 2 {
            return Err(Error::invalid(format!(
                "array needs at least 2 microphones, got {}",
                self.num_mics
            )));
        }
        for (name, v) in [
            ("spacing", self.spacing),
            ("sound speed", self.sound_speed),
            ("sample rate", self.sample_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Endfire inter-element delay in seconds.
    pub fn tau0(&self) -> f64 {
        self.spacing / self.sound_speed
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// Microphone offsets from the array center along the array axis.
    pub fn axial_offsets(&self) -> Vec<f64> {
        let mid = (self.num_mics as f64 - 1.0) / 2.0;
        (0..self.num_mics).map(|m| (mid - m as f64) * self.spacing).collect()
    }

    /// Microphone positions for an array centered at `center` whose axis is
    /// parallel to the room x-axis (microphone 0 on the +x side).
    pub fn positions(&self, center: [f64; 3]) -> Vec<[f64; 3]> {
        self.axial_offsets()
            .into_iter()
            .map(|dx| [center[0] + dx, center[1], center[2]])
            .collect()
    }
}

/// One-sided DFT frequency grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub nfft: usize,
    pub sample_rate: f64,
}

impl FrequencyGrid {
    pub fn new(nfft: usize, sample_rate: f64) -> Result<Self> {
        if nfft < 2 || !nfft.is_multiple_of(2) {
            return Err(Error::invalid(format!("nfft must be even and >= 2, got {nfft}")));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid(format!("bad sample rate {sample_rate}")));
        }
        Ok(FrequencyGrid { nfft, sample_rate })
    }

    pub fn num_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.nfft as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.num_bins()).map(|k| self.bin_freq(k)).collect()
    }

    /// Index of the bin at exactly `freq`, if it lies on the grid.
    pub fn bin_of(&self, freq: f64) -> Option<usize> {
        let k = freq * self.nfft as f64 / self.sample_rate;
        let r = k.round();
        if (k - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < self.num_bins() {
            Some(r as usize)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: Vec<Complex64>,
    /// Azimuth in radians.
    pub theta: f64,
    pub freq: f64,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Far-field phase-delay vector `[1, e^{-jωτ0 cosθ}, …, e^{-j(M-1)ωτ0 cosθ}]`.
pub fn steering_vector(geom: &ArrayGeometry, freq: f64, theta: f64) -> Result<SteeringVector> {
    if !theta.is_finite() {
        return Err(Error::invalid("steering angle must be finite"));
    }
    if !freq.is_finite() || freq < 0.0 || freq > geom.nyquist() * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "frequency {freq} Hz outside [0, {}]",
            geom.nyquist()
        )));
    }
    Ok(SteeringVector {
        entries: steering_entries(geom.num_mics, 2.0 * PI * freq * geom.tau0(), theta),
        theta,
        freq,
    })
}

fn steering_entries(num_mics: usize, omega_tau0: f64, theta: f64) -> Vec<Complex64> {
    let phase = -omega_tau0 * theta.cos();
    (0..num_mics)
        .map(|m| {
            if m == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, m as f64 * phase)
            }
        })
        .collect()
}

/// Steering vectors for every bin of `grid`, shape `[F, M]`.
pub fn steering_matrix(geom: &ArrayGeometry, grid: &FrequencyGrid, theta: f64) -> Result<Array2<Complex64>> {
    if (grid.sample_rate - geom.sample_rate).abs() > 1e-9 {
        return Err(Error::invalid("grid and geometry sample rates differ"));
    }
    let mut out = Array2::zeros((grid.num_bins(), geom.num_mics));
    for k in 0..grid.num_bins() {
        let sv = steering_vector(geom, grid.bin_freq(k), theta)?;
        for (dst, src) in out.row_mut(k).iter_mut().zip(sv.entries) {
            *dst = src;
        }
    }
    Ok(out)
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg.to_radians()
}
