//! Microphone-array speech enhancement workbench.
//!
//! The crate covers the whole chain from room simulation to evaluation:
//!
//! * [`array`]: uniform linear array geometry and far-field steering vectors.
//! * [`stft`]: square-root-Hann analysis/synthesis with a streaming analyzer.
//! * [`beamformer`]: distortionless fixed beamformers (MWNG and null-steering
//!   first-order DMAs) and the filter bank built from them.
//! * [`acc`]: exponentiated-gradient adaptive convex combination of beams.
//! * [`fusion`]: frame-online neural fusion producing simplex weights per bin.
//! * [`roomsim`]: image-source room simulation, moving interferers, dataset
//!   generation.
//! * [`metrics`]: shadow filtering, delta-SNR, SI-SDR and BSS-eval SIR.
//! * [`pipeline`]: enhancement modes and end-to-end evaluation.
//! * [`tensorfile`] and [`wav`]: on-disk formats.

pub mod acc;
pub mod array;
pub mod beamformer;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod roomsim;
pub mod stft;
pub mod tensorfile;
pub mod wav;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub use acc::{AccState, CombinationWeights};
pub use array::{ArrayGeometry, FrequencyGrid, SteeringVector};
pub use beamformer::{BeamOutput, FilterBank, FixedFilter};
pub use fusion::{ErbBank, FusionState, ModelParams, WeightMask};
pub use metrics::MetricReport;
pub use pipeline::{Enhancer, Mode};
pub use roomsim::{Rir, RoomConfig, Scenario, SourceTrajectory};
pub use stft::{MultichannelSpectrogram, Spectrogram, StftConfig};
