//! Frame-online neural fusion of beam outputs.
//!
//! Per frame the network sees only the current beam spectra and its own
//! recurrent state, and emits a softmax weight per beam and bin:
//!
//! 1. encoder: per band, `tanh(W_enc x + b_enc)` mapping `3P -> D`;
//! 2. intra-frame recurrence: a gated recurrent cell swept from the lowest to
//!    the highest band of the frame, starting from zeros; its hidden state is
//!    projected by `intra/proj` and added to the band embedding;
//! 3. inter-frame recurrence: one gated recurrent cell per band carried across
//!    frames in [`FusionState`], its new hidden state added to the embedding;
//! 4. decoder: per band affine map `D -> P` giving logits;
//! 5. each bin takes the logits of the band it belongs to;
//! 6. softmax over beams.
//!
//! The recurrent cell, with `σ` the logistic function and `[a; b]`
//! concatenation:
//!
//! ```text
//! z  = σ(Wz [x; h] + bz)
//! r  = σ(Wr [x; h] + br)
//! h~ = tanh(Wh [x; r ⊙ h] + bh)
//! h' = (1 - z) ⊙ h + z ⊙ h~
//! ```

mod erb;
mod model;

pub use erb::{erb_bank, erb_bank_with_knee, erb_rate, ErbBank, DEFAULT_BANDS, DEFAULT_KNEE};
pub use model::{load_model, save_model, Architecture, GruWeights, ModelParams, MAGIC, VERSION};

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use num_complex::Complex64;

use crate::acc::stack_beams;
use crate::stft::{Spectrogram, StreamingSynthesizer};
use crate::{Error, Result};

/// Softmax weights for one frame, `[P, F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    pub w: Array2<f64>,
}

impl WeightMask {
    pub fn uniform(beams: usize, bins: usize) -> Self {
        WeightMask {
            w: Array2::from_elem((beams, bins), 1.0 / beams as f64),
        }
    }

    pub fn one_hot(beams: usize, bins: usize, beam: usize) -> Self {
        let mut w = Array2::zeros((beams, bins));
        w.row_mut(beam).fill(1.0);
        WeightMask { w }
    }
}

/// Inter-frame recurrent state, one hidden vector per band.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub hidden: Array2<f64>,
    pub frames: u64,
}

impl FusionState {
    pub fn new(params: &ModelParams) -> Self {
        FusionState {
            hidden: Array2::zeros((params.arch.bands, params.arch.hidden)),
            frames: 0,
        }
    }

    pub fn reset(&mut self) {
        self.hidden.fill(0.0);
        self.frames = 0;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W [a; b] + bias` without materializing the concatenation.
fn affine_concat(w: &Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, bias: &Array1<f64>) -> Array1<f64> {
    let d = a.len();
    w.slice(s![.., ..d]).dot(&a) + w.slice(s![.., d..]).dot(&b) + bias
}

/// One recurrent-cell update; returns the new hidden state.
pub fn gru_step(g: &GruWeights, x: ArrayView1<'_, f64>, h: ArrayView1<'_, f64>) -> Array1<f64> {
    let z = affine_concat(&g.wz, x, h, &g.bz).mapv(sigmoid);
    let r = affine_concat(&g.wr, x, h, &g.br).mapv(sigmoid);
    let rh = &r * &h;
    let cand = affine_concat(&g.wh, x, rh.view(), &g.bh).mapv(f64::tanh);
    let mut out = Array1::zeros(h.len());
    for i in 0..h.len() {
        out[i] = (1.0 - z[i]) * h[i] + z[i] * cand[i];
    }
    out
}

/// Real, imaginary and magnitude channels of one `[F, P]` beam frame,
/// compressed to bands: `[3P, F']`, ordered re(0..P), im(0..P), mag(0..P).
pub fn extract_features(beam_frame: ArrayView2<'_, Complex64>, bank: &ErbBank) -> Result<Array2<f64>> {
    let (f, p) = beam_frame.dim();
    if f != bank.num_bins() {
        return Err(Error::shape(format!(
            "beam frame has {f} bins, band bank expects {}",
            bank.num_bins()
        )));
    }
    if beam_frame.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("beam frame"));
    }
    let mut raw = Array2::zeros((3 * p, f));
    for ((k, q), z) in beam_frame.indexed_iter() {
        raw[[q, k]] = z.re;
        raw[[p + q, k]] = z.im;
        raw[[2 * p + q, k]] = z.norm();
    }
    Ok(raw.dot(&bank.analysis.t()))
}

/// Runs the network on one feature frame (`[3P, F']`) and advances `state`.
pub fn infer_frame(
    params: &ModelParams,
    bank: &ErbBank,
    state: &mut FusionState,
    features: ArrayView2<'_, f64>,
) -> Result<WeightMask> {
    let a = &params.arch;
    if features.dim() != (a.features(), a.bands) {
        return Err(Error::shape(format!(
            "features are {:?}, model expects ({}, {})",
            features.dim(),
            a.features(),
            a.bands
        )));
    }
    if state.hidden.dim() != (a.bands, a.hidden) {
        return Err(Error::shape("fusion state does not belong to this model"));
    }
    if bank.num_bands() != a.bands || bank.num_bins() != a.bins {
        return Err(Error::shape("band bank does not match the model"));
    }

    // 1. encoder
    let mut emb = Array2::zeros((a.bands, a.hidden));
    for (b, mut row) in emb.outer_iter_mut().enumerate() {
        let e = params.enc_w.dot(&features.column(b)) + &params.enc_b;
        row.assign(&e.mapv(f64::tanh));
    }

    // 2. intra-frame sweep, low to high bands
    let mut h = Array1::zeros(a.hidden);
    for mut row in emb.outer_iter_mut() {
        h = gru_step(&params.intra, row.view(), h.view());
        add_assign(&mut row, &params.intra_proj.dot(&h));
    }

    // 3. inter-frame recurrence per band
    for (mut row, mut hb) in emb.outer_iter_mut().zip(state.hidden.outer_iter_mut()) {
        let next = gru_step(&params.inter, row.view(), hb.view());
        add_assign(&mut row, &next);
        hb.assign(&next);
    }
    state.frames += 1;

    // 4. decoder logits per band, 5. expansion to bins, 6. softmax over beams
    let logits = emb.dot(&params.dec_w.t()) + &params.dec_b; // [F', P]
    let mut w = Array2::zeros((a.beams, a.bins));
    for (k, &band) in bank.band_of_bin.iter().enumerate() {
        let l = logits.row(band);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (p, &v) in l.iter().enumerate() {
            let e = (v - max).exp();
            w[[p, k]] = e;
            total += e;
        }
        for p in 0..a.beams {
            w[[p, k]] /= total;
        }
    }
    Ok(WeightMask { w })
}

fn add_assign(dst: &mut ArrayViewMut1<'_, f64>, src: &Array1<f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `Ŝ(f) = Σ_p W_p(f) Z^(p)(f)` for one `[F, P]` beam frame.
pub fn fuse_frame(mask: &WeightMask, beam_frame: ArrayView2<'_, Complex64>) -> Result<Array1<Complex64>> {
    let (f, p) = beam_frame.dim();
    if mask.w.dim() != (p, f) {
        return Err(Error::shape(format!(
            "mask is {:?}, beam frame needs ({p}, {f})",
            mask.w.dim()
        )));
    }
    let mut out = Array1::zeros(f);
    for k in 0..f {
        let mut acc = Complex64::default();
        for q in 0..p {
            acc += beam_frame[[k, q]] * mask.w[[q, k]];
        }
        out[k] = acc;
    }
    Ok(out)
}

/// Streaming enhancer: beam frames in, `hop` time samples out per frame.
#[derive(Debug, Clone)]
pub struct FusionEngine<'a> {
    params: &'a ModelParams,
    bank: ErbBank,
    state: FusionState,
    synth: StreamingSynthesizer,
}

impl<'a> FusionEngine<'a> {
    pub fn new(params: &'a ModelParams) -> Result<Self> {
        let a = &params.arch;
        a.validate()?;
        Ok(FusionEngine {
            params,
            bank: erb_bank_with_knee(a.bins, a.bands, a.knee, a.sample_rate as f64)?,
            state: FusionState::new(params),
            synth: StreamingSynthesizer::new(a.stft)?,
        })
    }

    pub fn bank(&self) -> &ErbBank {
        &self.bank
    }

    /// Mask and fused spectrum for one frame, without synthesis.
    pub fn process_frame(&mut self, beam_frame: ArrayView2<'_, Complex64>) -> Result<(WeightMask, Array1<Complex64>)> {
        let feats = extract_features(beam_frame, &self.bank)?;
        let mask = infer_frame(self.params, &self.bank, &mut self.state, feats.view())?;
        let fused = fuse_frame(&mask, beam_frame)?;
        Ok((mask, fused))
    }

    /// Processes one frame and returns the `hop` output samples it completes.
    pub fn push(&mut self, beam_frame: ArrayView2<'_, Complex64>) -> Result<(WeightMask, Vec<f64>)> {
        let (mask, fused) = self.process_frame(beam_frame)?;
        let samples = self.synth.push(fused.view())?;
        Ok((mask, samples))
    }

    pub fn flush(&mut self) -> Vec<f64> {
        self.synth.flush()
    }

    pub fn reset(&mut self) {
        self.state.reset();
        let _ = self.synth.flush();
    }
}

fn check_beams(params: &ModelParams, beams: &[Spectrogram]) -> Result<()> {
    let a = &params.arch;
    if beams.len() != a.beams {
        return Err(Error::shape(format!(
            "model fuses {} beams, got {}",
            a.beams,
            beams.len()
        )));
    }
    if beams.iter().any(|b| b.config != a.stft) {
        return Err(Error::shape("beam STFT config differs from the model's"));
    }
    Ok(())
}

/// Offline application: masks `[T, F, P]` and fused spectrogram.
pub fn fuse_all(params: &ModelParams, beams: &[Spectrogram]) -> Result<(Spectrogram, Array3<f64>)> {
    check_beams(params, beams)?;
    let stacked = stack_beams(beams)?;
    let (t_count, f_count, p_count) = stacked.dim();
    let mut engine = FusionEngine::new(params)?;
    let mut fused = Spectrogram::zeros(t_count, params.arch.stft);
    let mut masks = Array3::zeros((t_count, f_count, p_count));
    for t in 0..t_count {
        let (mask, frame) = engine.process_frame(stacked.index_axis(Axis(0), t))?;
        fused.data.row_mut(t).assign(&frame);
        masks.index_axis_mut(Axis(0), t).assign(&mask.w.t());
    }
    Ok((fused, masks))
}

/// Frame-by-frame enhancement. Returns the time signal on the original time
/// axis (length `T * hop`) and the mask trajectory `[T, F, P]`.
pub fn enhance_stream(params: &ModelParams, beams: &[Spectrogram]) -> Result<(Vec<f64>, Array3<f64>)> {
    check_beams(params, beams)?;
    let stacked = stack_beams(beams)?;
    let (t_count, f_count, p_count) = stacked.dim();
    let mut engine = FusionEngine::new(params)?;
    let mut out = Vec::with_capacity(t_count * params.arch.stft.hop + params.arch.stft.pad());
    let mut masks = Array3::zeros((t_count, f_count, p_count));
    for t in 0..t_count {
        let (mask, samples) = engine.push(stacked.index_axis(Axis(0), t))?;
        masks.index_axis_mut(Axis(0), t).assign(&mask.w.t());
        out.extend(samples);
    }
    out.extend(engine.flush());
    let pad = params.arch.stft.pad();
    out.drain(..pad.min(out.len()));
    out.truncate(t_count * params.arch.stft.hop);
    Ok((out, masks))
}
