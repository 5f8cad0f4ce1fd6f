//! Fixed distortionless beamformers and the filter bank they form.
//!
//! Two designs are provided. The maximum white-noise-gain filter is the
//! normalized steering vector. The null-steering first-order DMA is the
//! minimum-norm filter with unit response towards the look direction and
//! zero response towards a chosen null.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::array::{steering_vector, ArrayGeometry, FrequencyGrid};
use crate::stft::{analyze_multichannel, MultichannelSpectrogram, Spectrogram, StftConfig, StftProcessor};
use crate::tensorfile::{self, Tensor};
use crate::{Error, Result};

/// Reciprocal condition below which a bin falls back to the MWNG filter.
pub const RCOND_FLOOR: f64 = 1e-12;
/// Tikhonov load relative to `trace(C^H C) / 2`.
pub const TIKHONOV: f64 = 1e-8;

pub const FILTER_BANK_MAGIC: &[u8; 4] = b"BFB1";
pub const FILTER_BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedFilter {
    /// `[F, M]`, one `h(ω)` per bin.
    pub coeffs: Array2<Complex64>,
    pub label: String,
    pub theta_s: f64,
    pub theta_null: Option<f64>,
    pub geometry: ArrayGeometry,
    pub nfft: usize,
    /// Bins where the null constraint could not be honored and the
    /// distortionless MWNG filter was used instead. Always includes DC for
    /// null-steering designs.
    pub fallback_bins: Vec<usize>,
}

impl FixedFilter {
    pub fn grid(&self) -> FrequencyGrid {
        FrequencyGrid {
            nfft: self.nfft,
            sample_rate: self.geometry.sample_rate,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_degenerate(&self, bin: usize) -> bool {
        self.fallback_bins.binary_search(&bin).is_ok()
    }

    /// `h(ω)^H d_θ(ω)` at one bin.
    pub fn response(&self, bin: usize, theta: f64) -> Result<Complex64> {
        let d = steering_vector(&self.geometry, self.grid().bin_freq(bin), theta)?;
        Ok(hermitian_dot(self.coeffs.row(bin), &d.entries))
    }
}

/// `a^H b`.
pub fn hermitian_dot(a: ArrayView1<'_, Complex64>, b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// White-noise gain `|h^H d|^2 / (h^H h)`.
pub fn white_noise_gain(h: ArrayView1<'_, Complex64>, d: &[Complex64]) -> f64 {
    let num = hermitian_dot(h, d).norm_sqr();
    let den: f64 = h.iter().map(|c| c.norm_sqr()).sum();
    num / den
}

fn check(geom: &ArrayGeometry, grid: &FrequencyGrid) -> Result<()> {
    geom.validate()?;
    if (grid.sample_rate - geom.sample_rate).abs() > 1e-9 {
        return Err(Error::invalid("grid and geometry sample rates differ"));
    }
    Ok(())
}

pub fn design_mwng(geom: &ArrayGeometry, grid: &FrequencyGrid, theta_s: f64) -> Result<FixedFilter> {
    check(geom, grid)?;
    let m = geom.num_mics as f64;
    let mut coeffs = Array2::zeros((grid.num_bins(), geom.num_mics));
    for k in 0..grid.num_bins() {
        let d = steering_vector(geom, grid.bin_freq(k), theta_s)?;
        for (c, e) in coeffs.row_mut(k).iter_mut().zip(d.entries) {
            *c = e / m;
        }
    }
    Ok(FixedFilter {
        coeffs,
        label: "MWNG".into(),
        theta_s,
        theta_null: None,
        geometry: *geom,
        nfft: grid.nfft,
        fallback_bins: Vec::new(),
    })
}

/// Outcome of the two-constraint solve at one frequency.
#[derive(Debug, Clone)]
pub struct NullSolve {
    pub h: Vec<Complex64>,
    /// Reciprocal condition of the loaded Gram matrix.
    pub rcond: f64,
    pub fallback: bool,
}

/// Minimum-norm `h` with `h^H d_s = 1` and `h^H d_n = 0` at `freq`.
///
/// Solves the loaded system `(C^H C + εI) x = e1` and refines against the
/// unloaded Gram matrix, so the constraints hold to rounding error wherever
/// the system is usable.
pub fn solve_null_constraint(geom: &ArrayGeometry, freq: f64, theta_s: f64, theta_null: f64) -> Result<NullSolve> {
    let ds = steering_vector(geom, freq, theta_s)?.entries;
    let m = geom.num_mics as f64;
    let fallback = |rcond| NullSolve {
        h: ds.iter().map(|e| e / m).collect(),
        rcond,
        fallback: true,
    };
    if freq == 0.0 {
        return Ok(fallback(0.0));
    }
    let dn = steering_vector(geom, freq, theta_null)?.entries;

    // Gram matrix [[a, b], [conj(b), c]].
    let a: f64 = ds.iter().map(|x| x.norm_sqr()).sum();
    let c: f64 = dn.iter().map(|x| x.norm_sqr()).sum();
    let b: Complex64 = ds.iter().zip(&dn).map(|(x, y)| x.conj() * y).sum();
    let eps = TIKHONOV * (a + c) / 2.0;
    let (la, lc) = (a + eps, c + eps);
    let half_gap = ((la - lc) / 2.0).hypot(b.norm());
    let mid = (la + lc) / 2.0;
    let rcond = (mid - half_gap) / (mid + half_gap);
    if rcond.is_nan() || rcond < RCOND_FLOOR {
        return Ok(fallback(rcond));
    }
    let det = la * lc - b.norm_sqr();
    let solve_loaded = |r0: Complex64, r1: Complex64| ((lc * r0 - b * r1) / det, (-b.conj() * r0 + la * r1) / det);
    let (mut x0, mut x1) = solve_loaded(Complex64::new(1.0, 0.0), Complex64::default());
    for _ in 0..8 {
        let r0 = Complex64::new(1.0, 0.0) - (a * x0 + b * x1);
        let r1 = -(b.conj() * x0 + c * x1);
        if r0.norm() + r1.norm() < 1e-15 {
            break;
        }
        let (d0, d1) = solve_loaded(r0, r1);
        x0 += d0;
        x1 += d1;
    }
    let h = ds.iter().zip(&dn).map(|(s, n)| s * x0 + n * x1).collect();
    Ok(NullSolve {
        h,
        rcond,
        fallback: false,
    })
}

pub fn design_null_dma(
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    theta_s: f64,
    theta_null: f64,
) -> Result<FixedFilter> {
    check(geom, grid)?;
    if !theta_null.is_finite() || (theta_s.cos() - theta_null.cos()).abs() < 1e-9 {
        return Err(Error::invalid(
            "null direction must differ from the look direction (as seen by a linear array)",
        ));
    }
    let solves = (0..grid.num_bins())
        .into_par_iter()
        .map(|k| solve_null_constraint(geom, grid.bin_freq(k), theta_s, theta_null))
        .collect::<Result<Vec<_>>>()?;
    let mut coeffs = Array2::zeros((grid.num_bins(), geom.num_mics));
    let mut fallback_bins = Vec::new();
    for (k, s) in solves.into_iter().enumerate() {
        if s.fallback {
            fallback_bins.push(k);
        }
        for (c, e) in coeffs.row_mut(k).iter_mut().zip(s.h) {
            *c = e;
        }
    }
    Ok(FixedFilter {
        coeffs,
        label: format!("DMA@{:.0}", theta_null.to_degrees()),
        theta_s,
        theta_null: Some(theta_null),
        geometry: *geom,
        nfft: grid.nfft,
        fallback_bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternPoint {
    pub theta: f64,
    pub magnitude: f64,
    pub magnitude_db: f64,
}

pub fn beampattern(filter: &FixedFilter, freq: f64, thetas: &[f64]) -> Result<Vec<PatternPoint>> {
    let bin = filter
        .grid()
        .bin_of(freq)
        .ok_or_else(|| Error::invalid(format!("{freq} Hz is not on the filter's frequency grid")))?;
    thetas
        .iter()
        .map(|&theta| {
            let magnitude = filter.response(bin, theta)?.norm();
            Ok(PatternPoint {
                theta,
                magnitude,
                magnitude_db: 20.0 * magnitude.max(1e-300).log10(),
            })
        })
        .collect()
}

/// Beam output `Ẑ(ω, ℓ)` of one fixed filter.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub label: String,
    pub spec: Spectrogram,
}

pub fn apply(filter: &FixedFilter, mc: &MultichannelSpectrogram) -> Result<BeamOutput> {
    if mc.num_channels() != filter.geometry.num_mics {
        return Err(Error::shape(format!(
            "filter expects {} channels, got {}",
            filter.geometry.num_mics,
            mc.num_channels()
        )));
    }
    if mc.num_bins() != filter.num_bins() || mc.config().nfft != filter.nfft {
        return Err(Error::shape(format!(
            "filter has {} bins, spectrogram has {}",
            filter.num_bins(),
            mc.num_bins()
        )));
    }
    let mut out = Spectrogram::zeros(mc.num_frames(), mc.config());
    for (m, ch) in mc.channels.iter().enumerate() {
        let hm = filter.coeffs.column(m);
        Zip::from(out.data.rows_mut()).and(ch.data.rows()).for_each(|mut o, y| {
            Zip::from(&mut o)
                .and(&y)
                .and(&hm)
                .for_each(|o, y, h| *o += h.conj() * y);
        });
    }
    Ok(BeamOutput {
        label: filter.label.clone(),
        spec: out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub filters: Vec<FixedFilter>,
}

impl FilterBank {
    pub fn new(filters: Vec<FixedFilter>) -> Result<Self> {
        if filters.len() < 2 {
            return Err(Error::invalid("a filter bank needs at least two filters"));
        }
        let first = &filters[0];
        for f in &filters[1..] {
            if f.geometry != first.geometry || f.nfft != first.nfft || f.coeffs.dim() != first.coeffs.dim() {
                return Err(Error::shape(format!(
                    "filter {} disagrees on geometry or grid",
                    f.label
                )));
            }
            if (f.theta_s - first.theta_s).abs() > 1e-12 {
                return Err(Error::invalid("all filters must share the look direction"));
            }
        }
        Ok(FilterBank { filters })
    }

    /// DMAs with nulls at `nulls_deg` (labelled DMA-I, DMA-II, ...), with the
    /// MWNG filter prepended when `include_mwng` is set.
    pub fn standard(
        geom: &ArrayGeometry,
        grid: &FrequencyGrid,
        theta_s_deg: f64,
        nulls_deg: &[f64],
        include_mwng: bool,
    ) -> Result<Self> {
        let theta_s = theta_s_deg.to_radians();
        let mut filters = Vec::new();
        if include_mwng {
            filters.push(design_mwng(geom, grid, theta_s)?);
        }
        for (i, &null) in nulls_deg.iter().enumerate() {
            let mut f = design_null_dma(geom, grid, theta_s, null.to_radians())?;
            f.label = format!("DMA-{}", roman(i + 1));
            filters.push(f);
        }
        FilterBank::new(filters)
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.filters[0].geometry
    }

    pub fn theta_s(&self) -> f64 {
        self.filters[0].theta_s
    }

    pub fn nfft(&self) -> usize {
        self.filters[0].nfft
    }

    pub fn labels(&self) -> Vec<String> {
        self.filters.iter().map(|f| f.label.clone()).collect()
    }

    /// Bins where every filter honors its constraints.
    pub fn regular_bins(&self) -> Vec<usize> {
        (0..self.filters[0].num_bins())
            .filter(|&k| self.filters.iter().all(|f| !f.is_degenerate(k)))
            .collect()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.filters.iter().position(|f| f.label.eq_ignore_ascii_case(label))
    }

    /// Combined filter `H(ω) α` for per-bin weights `alpha` of shape `[F, P]`.
    pub fn combine(&self, alpha: &Array2<f64>) -> Result<Array2<Complex64>> {
        let (f, p) = alpha.dim();
        if p != self.len() || f != self.filters[0].num_bins() {
            return Err(Error::shape("combination weights must be [F, P]"));
        }
        let mut out = Array2::zeros(self.filters[0].coeffs.dim());
        for (i, filt) in self.filters.iter().enumerate() {
            Zip::from(out.rows_mut())
                .and(filt.coeffs.rows())
                .and(alpha.column(i))
                .for_each(|mut o, h, &a| o.scaled_add(Complex64::new(a, 0.0), &h));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let g = self.geometry();
        let mut w = tensorfile::Writer::new(file, FILTER_BANK_MAGIC, FILTER_BANK_VERSION)?;
        w.u32(g.num_mics as u32)?;
        w.f64(g.spacing)?;
        w.f64(g.sound_speed)?;
        w.f64(g.sample_rate)?;
        w.u32(self.nfft() as u32)?;
        w.f64(self.theta_s().to_degrees())?;
        let mut tensors = Vec::new();
        for f in &self.filters {
            let (nb, nm) = f.coeffs.dim();
            let data = f.coeffs.iter().flat_map(|c| [c.re as f32, c.im as f32]).collect();
            tensors.push(Tensor::new(
                format!("filter/{}/coeffs", f.label),
                vec![nb, nm, 2],
                data,
            )?);
            let null = f.theta_null.map_or(f32::NAN, |t| t.to_degrees() as f32);
            tensors.push(Tensor::new(
                format!("filter/{}/null_deg", f.label),
                vec![1],
                vec![null],
            )?);
            let fb = f.fallback_bins.iter().map(|&k| k as f32).collect::<Vec<_>>();
            tensors.push(Tensor::new(
                format!("filter/{}/fallback_bins", f.label),
                vec![fb.len()],
                fb,
            )?);
        }
        w.tensors(&tensors)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let mut r = tensorfile::Reader::open(file, FILTER_BANK_MAGIC, FILTER_BANK_VERSION)?;
        let num_mics = r.u32()? as usize;
        let spacing = r.f64()?;
        let sound_speed = r.f64()?;
        let sample_rate = r.f64()?;
        let nfft = r.u32()? as usize;
        let theta_s = r.f64()?.to_radians();
        let geometry = ArrayGeometry::new(num_mics, spacing, sound_speed, sample_rate)?;
        let grid = FrequencyGrid::new(nfft, sample_rate)?;
        let tensors = r.tensors()?;

        let mut filters = Vec::new();
        for t in tensors.iter().filter(|t| t.name.ends_with("/coeffs")) {
            let label = t
                .name
                .strip_prefix("filter/")
                .and_then(|s| s.strip_suffix("/coeffs"))
                .ok_or_else(|| Error::format(format!("unexpected tensor {}", t.name)))?
                .to_string();
            if t.dims != [grid.num_bins(), num_mics, 2] {
                return Err(Error::format(format!(
                    "{} has shape {:?}, header implies [{}, {num_mics}, 2]",
                    t.name,
                    t.dims,
                    grid.num_bins()
                )));
            }
            let vals: Vec<Complex64> = t
                .data
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0] as f64, c[1] as f64))
                .collect();
            let coeffs =
                Array2::from_shape_vec((grid.num_bins(), num_mics), vals).map_err(|e| Error::format(e.to_string()))?;
            let find = |suffix: &str| tensors.iter().find(|x| x.name == format!("filter/{label}/{suffix}"));
            let theta_null = find("null_deg")
                .and_then(|x| x.data.first().copied())
                .filter(|v| v.is_finite())
                .map(|v| (v as f64).to_radians());
            let fallback_bins = find("fallback_bins")
                .map(|x| x.data.iter().map(|&v| v as usize).collect())
                .unwrap_or_default();
            filters.push(FixedFilter {
                coeffs,
                label,
                theta_s,
                theta_null,
                geometry,
                nfft,
                fallback_bins,
            });
        }
        FilterBank::new(filters)
    }
}

pub fn apply_bank(bank: &FilterBank, mc: &MultichannelSpectrogram) -> Result<Vec<BeamOutput>> {
    bank.filters.par_iter().map(|f| apply(f, mc)).collect()
}

/// Time-domain beams: analyze every channel, apply each filter, and
/// resynthesize on the input's time axis. One output per filter.
pub fn beamform_signals(bank: &FilterBank, signals: &[Vec<f64>], cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    let len = signals.first().map_or(0, Vec::len);
    let mc = analyze_multichannel(signals, cfg)?;
    let proc = StftProcessor::new(*cfg)?;
    apply_bank(bank, &mc)?
        .iter()
        .map(|b| proc.reconstruct(&b.spec, len))
        .collect()
}

fn roman(n: usize) -> &'static str {
    const NUMERALS: [&str; 10] = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"];
    NUMERALS.get(n - 1).copied().unwrap_or("N")
}

/// Full circle of angles in radians, `step_deg` apart, for pattern plots.
pub fn angle_sweep(step_deg: f64) -> Vec<f64> {
    let n = (360.0 / step_deg).round() as usize;
    (0..=n).map(|i| (i as f64 * step_deg).min(360.0) * PI / 180.0).collect()
}
