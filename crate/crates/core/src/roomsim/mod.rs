//! Shoebox room simulation and dataset generation.
//!
//! Impulse responses come from the image-source method with uniform wall
//! absorption derived from the requested reverberation time. Moving sources
//! are rendered piecewise-stationary: one impulse response per hop position,
//! with convolution tails carried across segment boundaries.

mod dataset;
mod ism;
mod render;
mod scenario;
mod silence;
mod speech;

pub use dataset::{
    gen_dataset, read_manifest, DatasetConfig, ManifestRecord, SamplePaths, DATASET_META_FILE, MANIFEST_FILE,
};
pub use ism::{decay_matched_absorption, ism_rir, max_image_order, sabine_absorption, schroeder_t60, MIN_ABSORPTION};
pub use render::{convolve, convolve_direct, render_moving, render_static};
pub use scenario::{synthesize_scenario, ScenarioAudio};
pub use silence::{silence_trim, SilenceTrim};
pub use speech::synthetic_speech;

use serde::{Deserialize, Serialize};

use crate::array::ArrayGeometry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    /// Room size in meters along x, y, z.
    pub dims: [f64; 3],
    /// Reverberation time in seconds; 0 means anechoic.
    pub t60: f64,
    pub sample_rate: f64,
    pub sound_speed: f64,
    /// Overrides the derived image order (0 keeps only the direct path).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
}

impl RoomConfig {
    pub fn new(dims: [f64; 3], t60: f64) -> Self {
        RoomConfig {
            dims,
            t60,
            sample_rate: crate::array::DEFAULT_SAMPLE_RATE,
            sound_speed: crate::array::DEFAULT_SOUND_SPEED,
            max_order: None,
        }
    }

    /// Direct path only, regardless of `t60`.
    pub fn anechoic(mut self) -> Self {
        self.max_order = Some(0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid(format!(
                "room dimensions must be positive: {:?}",
                self.dims
            )));
        }
        if !(self.t60.is_finite() && self.t60 >= 0.0) {
            return Err(Error::invalid(format!("T60 must be non-negative, got {}", self.t60)));
        }
        if !(self.sample_rate > 0.0 && self.sound_speed > 0.0) {
            return Err(Error::invalid("sample rate and sound speed must be positive"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(&c, &d)| c > 0.0 && c < d)
    }

    /// Image order actually used: the override if present, otherwise
    /// `ceil(c T60 / (2 min dim)) + 1` (0 when anechoic).
    pub fn image_order(&self) -> usize {
        self.max_order.unwrap_or_else(|| max_image_order(self))
    }

    /// `ceil(T60 fs) + 1024` samples.
    pub fn rir_len(&self) -> usize {
        (self.t60 * self.sample_rate).ceil() as usize + 1024
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceTrajectory {
    Static {
        position: [f64; 3],
    },
    /// Jumps `step` degrees counterclockwise around `center` every
    /// `interval` seconds, from `start_az` until `stop_az`, then stays.
    CircularHop {
        center: [f64; 3],
        radius: f64,
        start_az: f64,
        stop_az: f64,
        step: f64,
        interval: f64,
    },
}

impl SourceTrajectory {
    /// Source at `azimuth_deg` and `distance` from `center` in the horizontal plane.
    pub fn at_azimuth(center: [f64; 3], distance: f64, azimuth_deg: f64) -> Self {
        SourceTrajectory::Static {
            position: polar(center, distance, azimuth_deg),
        }
    }

    /// The moving-interferer path: 2 m radius, 90 to 180 degrees, 10 degrees per second.
    pub fn sweep(center: [f64; 3]) -> Self {
        SourceTrajectory::CircularHop {
            center,
            radius: 2.0,
            start_az: 90.0,
            stop_az: 180.0,
            step: 10.0,
            interval: 1.0,
        }
    }

    pub fn validate(&self, room: &RoomConfig) -> Result<()> {
        if let SourceTrajectory::CircularHop {
            radius, step, interval, ..
        } = self
        {
            if !(*radius > 0.0 && *interval > 0.0 && step.is_finite() && *step != 0.0) {
                return Err(Error::invalid(
                    "circular trajectory needs radius, step and interval > 0",
                ));
            }
        }
        for p in self.positions() {
            if !room.contains(p) {
                return Err(Error::invalid(format!("trajectory point {p:?} lies outside the room")));
            }
        }
        Ok(())
    }

    /// Every distinct position along the trajectory.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        match *self {
            SourceTrajectory::Static { position } => vec![position],
            SourceTrajectory::CircularHop {
                center,
                radius,
                start_az,
                stop_az,
                step,
                ..
            } => {
                let hops = ((stop_az - start_az) / step).floor().max(0.0) as usize;
                (0..=hops)
                    .map(|k| polar(center, radius, start_az + k as f64 * step))
                    .collect()
            }
        }
    }

    /// Segment length in samples (`None` for static sources).
    pub fn interval_samples(&self, fs: f64) -> Option<usize> {
        match *self {
            SourceTrajectory::Static { .. } => None,
            SourceTrajectory::CircularHop { interval, .. } => Some((interval * fs).round() as usize),
        }
    }
}

pub fn polar(center: [f64; 3], distance: f64, azimuth_deg: f64) -> [f64; 3] {
    let a = azimuth_deg.to_radians();
    [
        center[0] + distance * a.cos(),
        center[1] + distance * a.sin(),
        center[2],
    ]
}

fn default_target_distance() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: RoomConfig,
    pub array_center: [f64; 3],
    pub geometry: ArrayGeometry,
    /// Target azimuth in degrees.
    pub target_az: f64,
    #[serde(default = "default_target_distance")]
    pub target_distance: f64,
    pub interferers: Vec<SourceTrajectory>,
    /// Mic-1 target-to-noise ratio; `None` disables sensor noise.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Scenario {
    /// 8 x 6 x 3 m room, array at (4, 2, 1), target at 0 degrees and 2 m, one
    /// interferer sweeping from 90 to 180 degrees.
    pub fn reference(t60: f64, snr_db: Option<f64>, seed: u64) -> Self {
        let center = [4.0, 2.0, 1.0];
        Scenario {
            room: RoomConfig::new([8.0, 6.0, 3.0], t60),
            array_center: center,
            geometry: ArrayGeometry::reference(),
            target_az: 0.0,
            target_distance: 2.0,
            interferers: vec![SourceTrajectory::sweep(center)],
            snr_db,
            seed,
        }
    }

    pub fn target_position(&self) -> [f64; 3] {
        polar(self.array_center, self.target_distance, self.target_az)
    }

    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        self.geometry.positions(self.array_center)
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.geometry.validate()?;
        if (self.geometry.sample_rate - self.room.sample_rate).abs() > 1e-9 {
            return Err(Error::invalid("array and room sample rates differ"));
        }
        for p in self.mic_positions() {
            if !self.room.contains(p) {
                return Err(Error::invalid(format!("microphone at {p:?} lies outside the room")));
            }
        }
        if !self.room.contains(self.target_position()) {
            return Err(Error::invalid("target lies outside the room"));
        }
        for t in &self.interferers {
            t.validate(&self.room)?;
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::invalid("SNR must be finite (use null for no noise)"));
            }
        }
        Ok(())
    }
}

/// Impulse response from one source position to one microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: f64,
}
