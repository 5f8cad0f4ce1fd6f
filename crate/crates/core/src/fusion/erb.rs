//! Band compression: identity below a knee bin, triangular ERB-spaced
//! filters above it.

use ndarray::{Array2, ArrayView1};

use crate::{Error, Result};

pub const DEFAULT_BANDS: usize = 64;
pub const DEFAULT_KNEE: usize = 32;

/// ERB-rate (Glasberg & Moore) of a frequency in Hz.
pub fn erb_rate(freq: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * freq).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErbBank {
    /// `[F', F]`, non-negative, rows sum to one.
    pub analysis: Array2<f64>,
    /// Band that dominates each bin; monotone non-decreasing.
    pub band_of_bin: Vec<usize>,
    pub knee: usize,
}

impl ErbBank {
    pub fn num_bins(&self) -> usize {
        self.analysis.ncols()
    }

    pub fn num_bands(&self) -> usize {
        self.analysis.nrows()
    }

    /// Applies the analysis matrix to one per-bin vector.
    pub fn compress(&self, per_bin: ArrayView1<'_, f64>) -> ndarray::Array1<f64> {
        self.analysis.dot(&per_bin)
    }
}

pub fn erb_bank(num_bins: usize, num_bands: usize, sample_rate: f64) -> Result<ErbBank> {
    erb_bank_with_knee(num_bins, num_bands, DEFAULT_KNEE, sample_rate)
}

pub fn erb_bank_with_knee(num_bins: usize, num_bands: usize, knee: usize, sample_rate: f64) -> Result<ErbBank> {
    if num_bins < 2 || num_bands >= num_bins {
        return Err(Error::invalid(format!(
            "need fewer bands ({num_bands}) than bins ({num_bins})"
        )));
    }
    if knee >= num_bands {
        return Err(Error::invalid(format!(
            "{num_bands} bands cannot cover a {knee}-bin identity knee plus compressed bands"
        )));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let nyquist = sample_rate / 2.0;
    let bin_freq = |k: usize| k as f64 * nyquist / (num_bins - 1) as f64;
    let upper = num_bands - knee;

    let lo = if knee == 0 { 0.0 } else { erb_rate(bin_freq(knee - 1)) };
    let hi = erb_rate(nyquist);
    let step = (hi - lo) / upper as f64;
    // centers[j] for compressed band j; centers[-1] = lo, last center at Nyquist.
    let center = |j: isize| lo + (j + 1) as f64 * step;

    let mut analysis = Array2::zeros((num_bands, num_bins));
    for k in 0..knee {
        analysis[[k, k]] = 1.0;
    }
    for k in knee..num_bins {
        let e = erb_rate(bin_freq(k));
        for j in 0..upper {
            let c = center(j as isize);
            let left = center(j as isize - 1);
            let w = if e <= c {
                (e - left) / (c - left)
            } else if j + 1 < upper {
                (center(j as isize + 1) - e) / step
            } else {
                1.0
            };
            if w > 0.0 {
                analysis[[knee + j, k]] = w.min(1.0);
            }
        }
    }

    for (b, mut row) in analysis.outer_iter_mut().enumerate() {
        let total: f64 = row.sum();
        if total <= 0.0 {
            return Err(Error::invalid(format!(
                "band {b} covers no bins; use fewer bands or a finer frequency grid"
            )));
        }
        row.mapv_inplace(|w| w / total);
    }

    let band_of_bin: Vec<usize> = (0..num_bins)
        .map(|k| {
            let col = analysis.column(k);
            let mut best = 0;
            for b in 0..num_bands {
                if col[b] > col[best] {
                    best = b;
                }
            }
            best
        })
        .collect();
    debug_assert!(band_of_bin.windows(2).all(|w| w[0] <= w[1]));

    Ok(ErbBank {
        analysis,
        band_of_bin,
        knee,
    })
}
