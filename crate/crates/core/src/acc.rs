//! Adaptive convex combination of fixed beam outputs.
//!
//! Per bin, the fused output is `Σ_p α_p Ẑ_p` with `α` on the probability
//! simplex. After each frame the weights take one exponentiated-gradient step
//! on the instantaneous output power `|Ẑ_opt|²`, with the gradient divided by
//! the total beam power in that bin so the step size is scale free.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;

use crate::stft::Spectrogram;
use crate::{Error, Result};

pub const DEFAULT_STEP_SIZE: f64 = 0.1;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-4;
const GRADIENT_EPS: f64 = 1e-12;

/// Per-bin simplex weights, `[F, P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationWeights {
    pub alpha: Array2<f64>,
}

impl CombinationWeights {
    pub fn uniform(num_bins: usize, num_beams: usize) -> Self {
        CombinationWeights {
            alpha: Array2::from_elem((num_bins, num_beams), 1.0 / num_beams as f64),
        }
    }

    /// Largest deviation of any bin's weight sum from one.
    pub fn simplex_residual(&self) -> f64 {
        self.alpha
            .sum_axis(Axis(1))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct AccState {
    pub weights: CombinationWeights,
    pub step_size: f64,
    pub weight_floor: f64,
}

pub fn acc_init(num_beams: usize, num_bins: usize, step_size: f64, weight_floor: f64) -> Result<AccState> {
    if num_beams < 2 {
        return Err(Error::invalid(format!("need at least 2 beams, got {num_beams}")));
    }
    if num_bins == 0 {
        return Err(Error::invalid("need at least one frequency bin"));
    }
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {step_size}")));
    }
    if !(weight_floor > 0.0 && weight_floor < 1.0 / num_beams as f64) {
        return Err(Error::invalid(format!(
            "weight floor must lie in (0, 1/{num_beams}), got {weight_floor}"
        )));
    }
    Ok(AccState {
        weights: CombinationWeights::uniform(num_bins, num_beams),
        step_size,
        weight_floor,
    })
}

impl AccState {
    pub fn num_beams(&self) -> usize {
        self.weights.alpha.ncols()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.alpha.nrows()
    }

    /// Fuses one frame (`[F, P]` beam values) with the current weights, then
    /// adapts. Returns the fused frame and the weights that produced it.
    pub fn step(&mut self, beam_frame: ArrayView2<'_, Complex64>) -> Result<(Array1<Complex64>, Array2<f64>)> {
        if beam_frame.dim() != self.weights.alpha.dim() {
            return Err(Error::shape(format!(
                "beam frame is {:?}, state expects {:?}",
                beam_frame.dim(),
                self.weights.alpha.dim()
            )));
        }
        if beam_frame.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("beam frame"));
        }
        let used = self.weights.alpha.clone();
        let mut fused = Array1::zeros(self.num_bins());
        let p_count = self.num_beams();
        let mut grad = vec![0.0; p_count];

        for ((z, mut alpha), out) in beam_frame
            .outer_iter()
            .zip(self.weights.alpha.outer_iter_mut())
            .zip(fused.iter_mut())
        {
            let mut zopt = Complex64::default();
            for (a, zp) in alpha.iter().zip(z.iter()) {
                zopt += zp * *a;
            }
            *out = zopt;

            let scale: f64 = z.iter().map(|v| v.norm_sqr()).sum::<f64>() + GRADIENT_EPS;
            for (g, zp) in grad.iter_mut().zip(z.iter()) {
                *g = 2.0 * (zopt.conj() * zp).re;
            }
            // Shift by the smallest gradient before exponentiating; a common
            // factor cancels in the normalization.
            let gmin = grad.iter().copied().fold(f64::INFINITY, f64::min);
            for (a, g) in alpha.iter_mut().zip(&grad) {
                *a *= (-self.step_size * (g - gmin) / scale).exp();
            }
            let total: f64 = alpha.sum();
            alpha.mapv_inplace(|a| (a / total).max(self.weight_floor));
            let total: f64 = alpha.sum();
            alpha.mapv_inplace(|a| a / total);
        }
        Ok((fused, used))
    }
}

pub fn acc_step(
    state: &mut AccState,
    beam_frame: ArrayView2<'_, Complex64>,
) -> Result<(Array1<Complex64>, Array2<f64>)> {
    state.step(beam_frame)
}

/// Stacks `P` beam spectrograms into one `[T, F, P]` array.
pub fn stack_beams(beams: &[Spectrogram]) -> Result<Array3<Complex64>> {
    let first = beams.first().ok_or_else(|| Error::shape("no beam outputs"))?;
    let (t, f) = first.data.dim();
    if beams.iter().any(|b| b.data.dim() != (t, f) || b.config != first.config) {
        return Err(Error::shape("beam outputs disagree on shape or config"));
    }
    let mut out = Array3::zeros((t, f, beams.len()));
    for (p, b) in beams.iter().enumerate() {
        out.index_axis_mut(Axis(2), p).assign(&b.data);
    }
    Ok(out)
}

/// Runs ACC causally over whole beam spectrograms with default parameters.
pub fn acc_run(beams: &[Spectrogram]) -> Result<(Spectrogram, Array3<f64>)> {
    let first = beams.first().ok_or_else(|| Error::shape("no beam outputs"))?;
    let mut state = acc_init(beams.len(), first.num_bins(), DEFAULT_STEP_SIZE, DEFAULT_WEIGHT_FLOOR)?;
    acc_run_with(&mut state, beams)
}

pub fn acc_run_with(state: &mut AccState, beams: &[Spectrogram]) -> Result<(Spectrogram, Array3<f64>)> {
    let stacked = stack_beams(beams)?;
    let (t_count, f_count, p_count) = stacked.dim();
    let mut fused = Spectrogram::zeros(t_count, beams[0].config);
    let mut trajectory = Array3::zeros((t_count, f_count, p_count));
    for t in 0..t_count {
        let (frame, used) = state.step(stacked.index_axis(Axis(0), t))?;
        fused.data.row_mut(t).assign(&frame);
        trajectory.index_axis_mut(Axis(0), t).assign(&used);
    }
    Ok((fused, trajectory))
}
