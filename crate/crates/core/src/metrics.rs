//! Objective measures: shadow filtering, delta-SNR, SI-SDR and a BSS-eval
//! style SIR. Every decibel value is clamped to `±DB_CAP`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::linalg::solve_spd_loaded;
use crate::roomsim::convolve;
use crate::stft::Spectrogram;
use crate::{Error, Result};

pub const DB_CAP: f64 = 60.0;
pub const BSS_FILTER_LEN: usize = 512;
/// Diagonal load of the projection Gram system relative to its trace.
pub const BSS_TIKHONOV: f64 = 1e-8;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10 log10(num / den)` clamped to `±DB_CAP`, with the flag set when the
/// clamp was hit. A zero numerator maps to the lower cap.
pub fn ratio_db(num: f64, den: f64) -> (f64, bool) {
    if num <= 0.0 {
        return (-DB_CAP, true);
    }
    if den <= 0.0 {
        return (DB_CAP, true);
    }
    let db = 10.0 * (num / den).log10();
    if db > DB_CAP {
        (DB_CAP, true)
    } else if db < -DB_CAP {
        (-DB_CAP, true)
    } else {
        (db, false)
    }
}

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{what}: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid(format!("{what}: empty signals")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input"));
    }
    Ok(())
}

/// Applies one weight trajectory `[T, F, P]` to several sets of beams.
///
/// `components[c][p]` is beam `p` of component `c`; the result holds one
/// fused spectrogram per component. Because the fusion is linear in the
/// beams, the processed components add up to the processed mixture.
pub fn shadow_process(weights: &Array3<f64>, components: &[Vec<Spectrogram>]) -> Result<Vec<Spectrogram>> {
    let (t, f, p) = weights.dim();
    components
        .iter()
        .map(|beams| {
            if beams.len() != p {
                return Err(Error::shape(format!(
                    "weights cover {p} beams, component has {}",
                    beams.len()
                )));
            }
            let mut out = Spectrogram::zeros(t, beams[0].config);
            for (q, b) in beams.iter().enumerate() {
                if b.data.dim() != (t, f) {
                    return Err(Error::shape(format!(
                        "beam spectrogram {:?} does not match weights ({t}, {f})",
                        b.data.dim()
                    )));
                }
                let w = weights.index_axis(ndarray::Axis(2), q);
                Zip::from(&mut out.data)
                    .and(&b.data)
                    .and(&w)
                    .for_each(|o, z, &a| *o += z * a);
            }
            Ok(out)
        })
        .collect()
}

/// Output SNR minus input SNR, from separately processed target `s` and
/// residual `v` (interference plus noise).
pub fn delta_snr(s_in: &[f64], v_in: &[f64], s_out: &[f64], v_out: &[f64]) -> Result<f64> {
    check_pair(s_in, v_in, "delta_snr input")?;
    check_pair(s_out, v_out, "delta_snr output")?;
    let (a, _) = ratio_db(energy(s_out), energy(v_out));
    let (b, _) = ratio_db(energy(s_in), energy(v_in));
    Ok(a - b)
}

/// Scale-invariant SDR of `est` against `reference`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference, "si_sdr")?;
    let rr = energy(reference);
    if rr <= 0.0 {
        return Err(Error::invalid("si_sdr: reference is silent"));
    }
    let scale = dot(est, reference) / rr;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (&e, &r) in est.iter().zip(reference) {
        let s = scale * r;
        target += s * s;
        resid += (e - s) * (e - s);
    }
    Ok(ratio_db(target, resid).0)
}

/// `r[k + max_lag] = sum_n a[n] b[n - k]` for `|k| <= max_lag`.
fn xcorr(a: &[f64], b: &[f64], max_lag: usize) -> Vec<f64> {
    let rev: Vec<f64> = b.iter().rev().copied().collect();
    let full = convolve(a, &rev);
    let zero = b.len() as i64 - 1;
    (-(max_lag as i64)..=max_lag as i64)
        .map(|k| {
            let i = zero + k;
            if i >= 0 && (i as usize) < full.len() {
                full[i as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Signal-to-interference ratio after least-squares alignment.
///
/// The estimate is projected onto `filter_len` delayed copies of the target
/// reference, and jointly onto delayed copies of target and interference.
/// The target projection is the target part; what the joint projection adds
/// on top of it is the interference part.
pub fn bss_sir(est: &[f64], ref_target: &[f64], ref_interf: &[f64], filter_len: usize) -> Result<f64> {
    check_pair(est, ref_target, "bss_sir")?;
    check_pair(est, ref_interf, "bss_sir")?;
    if filter_len == 0 {
        return Err(Error::invalid("bss_sir: filter length must be positive"));
    }
    if energy(ref_target) <= 0.0 || energy(ref_interf) <= 0.0 {
        return Err(Error::invalid("bss_sir: references must not be silent"));
    }
    let l = filter_len;
    let lag = l - 1;
    let r_ss = xcorr(ref_target, ref_target, lag);
    let r_ii = xcorr(ref_interf, ref_interf, lag);
    let r_is = xcorr(ref_interf, ref_target, lag);
    let r_es = xcorr(est, ref_target, lag);
    let r_ei = xcorr(est, ref_interf, lag);

    // Shifted copies s_i[n] = s[n - i] on the zero-padded axis, so every
    // Gram entry is a correlation at lag i - j.
    let mut g = DMatrix::<f64>::zeros(2 * l, 2 * l);
    for i in 0..l {
        for j in 0..l {
            let d = i as i64 - j as i64;
            let at = |r: &[f64]| r[(d + lag as i64) as usize];
            g[(i, j)] = at(&r_ss);
            g[(l + i, l + j)] = at(&r_ii);
            // sum_n s[n - i] x[n - j] = r_xs[i - j]
            g[(i, l + j)] = at(&r_is);
            g[(l + j, i)] = g[(i, l + j)];
        }
    }
    let mut b = DVector::<f64>::zeros(2 * l);
    for i in 0..l {
        b[i] = r_es[lag + i];
        b[l + i] = r_ei[lag + i];
    }

    let g_ss = g.view((0, 0), (l, l)).into_owned();
    let b_s = b.rows(0, l).into_owned();
    let (c_s, _) = solve_spd_loaded(&g_ss, &b_s, BSS_TIKHONOV * l as f64)?;
    let (c_j, _) = solve_spd_loaded(&g, &b, BSS_TIKHONOV * 2.0 * l as f64)?;

    let s_energy = c_s.dot(&(&g_ss * &c_s));
    let mut diff = c_j;
    for i in 0..l {
        diff[i] -= c_s[i];
    }
    let e_energy = diff.dot(&(&g * &diff)).max(0.0);
    Ok(ratio_db(s_energy, e_energy).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirPoint {
    pub angle_deg: f64,
    pub sir_db: f64,
    pub n_trials: usize,
}

/// Interferer angles 90, 100, ..., 180 degrees.
pub fn default_sir_angles() -> Vec<f64> {
    (0..10).map(|i| 90.0 + 10.0 * i as f64).collect()
}

/// Mean of `run(angle, trial)` over `trials` runs for every angle.
pub fn sir_vs_angle<F>(angles: &[f64], trials: usize, run: F) -> Result<Vec<SirPoint>>
where
    F: Fn(f64, usize) -> Result<f64>,
{
    if trials == 0 {
        return Err(Error::invalid("sir_vs_angle needs at least one trial"));
    }
    angles
        .iter()
        .map(|&a| {
            let mut total = 0.0;
            for t in 0..trials {
                total += run(a, t)?;
            }
            Ok(SirPoint {
                angle_deg: a,
                sir_db: total / trials as f64,
                n_trials: trials,
            })
        })
        .collect()
}

/// Long-format CSV: one row per (curve, angle).
pub fn write_sir_csv<W: Write>(mut w: W, curves: &[(String, Vec<SirPoint>)]) -> Result<()> {
    writeln!(w, "mode,angle_deg,sir_db,n_trials")?;
    for (label, points) in curves {
        for p in points {
            writeln!(w, "{label},{},{},{}", p.angle_deg, p.sir_db, p.n_trials)?;
        }
    }
    Ok(())
}

/// Time-domain signals needed for one evaluation, all of equal length.
/// Input-side signals are taken at the first microphone.
#[derive(Debug, Clone, Copy)]
pub struct EvalSignals<'a> {
    /// Direct-path target.
    pub reference: &'a [f64],
    pub target_in: &'a [f64],
    pub interference_in: &'a [f64],
    pub noise_in: &'a [f64],
    /// Processed mixture.
    pub estimate: &'a [f64],
    /// Target alone through the same processing.
    pub target_out: &'a [f64],
    /// Interference plus noise through the same processing.
    pub residual_out: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub delta_snr_db: f64,
    pub si_sdr_db: f64,
    /// SI-SDR of the unprocessed first-microphone mixture.
    pub si_sdr_in_db: f64,
    pub delta_si_sdr_db: f64,
    pub sir_db: f64,
    /// Set when any underlying ratio hit the cap.
    pub capped: bool,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl MetricReport {
    pub fn compute(label: impl Into<String>, sig: &EvalSignals<'_>) -> Result<Self> {
        let n = sig.reference.len();
        for (name, s) in [
            ("target_in", sig.target_in),
            ("interference_in", sig.interference_in),
            ("noise_in", sig.noise_in),
            ("estimate", sig.estimate),
            ("target_out", sig.target_out),
            ("residual_out", sig.residual_out),
        ] {
            if s.len() != n {
                return Err(Error::shape(format!(
                    "{name} has {} samples, reference has {n}",
                    s.len()
                )));
            }
        }
        let v_in: Vec<f64> = sig
            .interference_in
            .iter()
            .zip(sig.noise_in)
            .map(|(a, b)| a + b)
            .collect();
        let mix: Vec<f64> = sig.target_in.iter().zip(&v_in).map(|(a, b)| a + b).collect();

        let (snr_out, c1) = ratio_db(energy(sig.target_out), energy(sig.residual_out));
        let (snr_in, c2) = ratio_db(energy(sig.target_in), energy(&v_in));
        let si_sdr_db = si_sdr(sig.estimate, sig.reference)?;
        let si_sdr_in_db = si_sdr(&mix, sig.reference)?;
        let sir_db = bss_sir(sig.estimate, sig.reference, sig.interference_in, BSS_FILTER_LEN)?;
        let capped = c1 || c2 || [si_sdr_db, si_sdr_in_db, sir_db].iter().any(|v| v.abs() >= DB_CAP);
        Ok(MetricReport {
            label: label.into(),
            delta_snr_db: snr_out - snr_in,
            si_sdr_db,
            si_sdr_in_db,
            delta_si_sdr_db: si_sdr_db - si_sdr_in_db,
            sir_db,
            capped,
            meta: serde_json::Map::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn si_sdr_cases() {
        let x = white(4000, 1);
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(si_sdr(&twice, &x).unwrap(), DB_CAP);
        assert_eq!(si_sdr(&neg, &x).unwrap(), DB_CAP);

        // Gram-Schmidt: remove the x component, then scale to 1% of x's energy.
        let mut n = white(4000, 2);
        let c = dot(&n, &x) / energy(&x);
        n.iter_mut().zip(&x).for_each(|(a, b)| *a -= c * b);
        let k = (energy(&x) / 100.0 / energy(&n)).sqrt();
        let est: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + k * b).collect();
        assert!((si_sdr(&est, &x).unwrap() - 20.0).abs() < 1e-6);

        assert!(si_sdr(&x, &vec![0.0; 4000]).is_err());
        assert!(si_sdr(&x[..10], &x).is_err());
    }

    #[test]
    fn delta_snr_cases() {
        let s = white(1000, 3);
        let v = white(1000, 4);
        assert_eq!(delta_snr(&s, &v, &s, &v).unwrap(), 0.0);
        let half: Vec<f64> = v.iter().map(|x| x / 2f64.sqrt()).collect();
        assert!((delta_snr(&s, &v, &s, &half).unwrap() - 3.010_299_956_639_812).abs() < 1e-9);
        let fwd = delta_snr(&s, &v, &s, &half).unwrap();
        let back = delta_snr(&s, &half, &s, &v).unwrap();
        assert!((fwd + back).abs() < 1e-12);
    }

    #[test]
    fn bss_sir_constructed_cases() {
        let n = 160_000;
        let s = white(n, 5);
        let i = white(n, 6);
        let est: Vec<f64> = s.iter().zip(&i).map(|(a, b)| a + 0.1 * b).collect();
        let sir = bss_sir(&est, &s, &i, BSS_FILTER_LEN).unwrap();
        assert!((sir - 20.0).abs() < 0.5, "{sir}");
        assert!(bss_sir(&i, &s, &i, BSS_FILTER_LEN).unwrap() <= -20.0);
        assert_eq!(bss_sir(&s, &s, &i, BSS_FILTER_LEN).unwrap(), DB_CAP);
    }

    #[test]
    fn bss_sir_sees_through_short_filters() {
        let n = 40_000;
        let s = white(n, 7);
        let i = white(n, 8);
        let h = [0.5, -0.3, 0.2];
        let mut est = convolve(&s, &h);
        est.truncate(n);
        est.iter_mut().zip(&i).for_each(|(e, v)| *e += 0.1 * v);
        let sir = bss_sir(&est, &s, &i, 64).unwrap();
        let expected = 10.0 * (h.iter().map(|x| x * x).sum::<f64>() / 0.01).log10();
        assert!((sir - expected).abs() < 0.5, "{sir} vs {expected}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn si_sdr_is_scale_invariant(a in 0.01f64..100.0, seed in 0u64..1000) {
            let x = white(512, seed);
            let e: Vec<f64> = white(512, seed + 1).iter().zip(&x).map(|(n, s)| s + 0.3 * n).collect();
            let scaled: Vec<f64> = e.iter().map(|v| a * v).collect();
            prop_assert!((si_sdr(&scaled, &x).unwrap() - si_sdr(&e, &x).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn bss_sir_falls_with_interference_gain(g in 0.05f64..1.0, seed in 0u64..1000) {
            let s = white(4000, seed);
            let i = white(4000, seed + 7);
            let mk = |k: f64| -> Vec<f64> { s.iter().zip(&i).map(|(a, b)| a + k * b).collect() };
            let lo = bss_sir(&mk(g), &s, &i, 16).unwrap();
            let hi = bss_sir(&mk(g * 1.5), &s, &i, 16).unwrap();
            prop_assert!(hi < lo);
        }
    }

    fn beams(p: usize, t: usize, seed: u64) -> Vec<Spectrogram> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p)
            .map(|_| Spectrogram {
                data: Array2::from_shape_fn((t, 257), |_| {
                    crate::Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                }),
                config: StftConfig::default(),
            })
            .collect()
    }

    #[test]
    fn shadow_processing_is_linear() {
        let (t, p) = (12, 4);
        let target = beams(p, t, 1);
        let noise = beams(p, t, 2);
        let mixture: Vec<Spectrogram> = target
            .iter()
            .zip(&noise)
            .map(|(a, b)| Spectrogram {
                data: &a.data + &b.data,
                config: a.config,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = Array3::from_shape_fn((t, 257, p), |_| rng.random_range(0.0..1.0));
        for mut lane in w.lanes_mut(ndarray::Axis(2)) {
            let s = lane.sum();
            lane.mapv_inplace(|v| v / s);
        }
        let out = shadow_process(&w, &[target.clone(), noise, mixture]).unwrap();
        let sum = &out[0].data + &out[1].data;
        let err = (&sum - &out[2].data).mapv(|z| z.norm()).sum();
        let norm = out[2].data.mapv(|z| z.norm()).sum();
        assert!(err / norm < 1e-8);

        let mut one_hot = Array3::zeros((t, 257, p));
        one_hot.index_axis_mut(ndarray::Axis(2), 2).fill(1.0);
        assert_eq!(
            shadow_process(&one_hot, std::slice::from_ref(&target)).unwrap()[0].data,
            target[2].data
        );

        let uniform = Array3::from_elem((t, 257, p), 0.25);
        let avg = shadow_process(&uniform, std::slice::from_ref(&target)).unwrap();
        let mean = target
            .iter()
            .fold(Array2::<crate::Complex64>::zeros((t, 257)), |acc, b| acc + &b.data)
            / 4.0;
        assert!((&avg[0].data - &mean).iter().all(|z| z.norm() < 1e-12));

        assert!(shadow_process(&uniform, &[target[..3].to_vec()]).is_err());
    }

    #[test]
    fn sir_curve_shape_and_csv() {
        let pts = sir_vs_angle(&default_sir_angles(), 1, |a, _| Ok(a / 10.0)).unwrap();
        assert_eq!(pts.len(), 10);
        assert_eq!(pts[3].sir_db, 12.0);
        let avg = sir_vs_angle(&[90.0], 4, |_, t| Ok(t as f64)).unwrap();
        assert_eq!(avg[0].sir_db, 1.5);
        let mut csv = Vec::new();
        write_sir_csv(&mut csv, &[("acc".to_string(), pts[..2].to_vec())]).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "mode,angle_deg,sir_db,n_trials\nacc,90,9,1\nacc,100,10,1\n"
        );
        assert!(sir_vs_angle(&[90.0], 0, |_, _| Ok(0.0)).is_err());
    }
}
