use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{Rir, RoomConfig};
use crate::{Error, Result};

/// Lower clamp on wall absorption for very long reverberation times.
pub const MIN_ABSORPTION: f64 = 1e-4;
const SINC_TAPS: usize = 8;

/// Uniform wall absorption reaching `t60` by Sabine's formula.
pub fn sabine_absorption(room: &RoomConfig, t60: f64) -> Result<f64> {
    if !(t60.is_finite() && t60 > 0.0) {
        return Err(Error::invalid(format!("T60 must be positive, got {t60}")));
    }
    let alpha = 0.161 * room.volume() / (room.surface() * t60);
    Ok(alpha.clamp(MIN_ABSORPTION, 1.0))
}

/// Uniform absorption at which a specular shoebox actually decays with the
/// room's `t60`.
///
/// With per-reflection energy factor `1 - α`, sound travelling in direction
/// `u` loses energy at rate `κ c Σ|u_i|/L_i` with `κ = -ln(1 - α)`. Averaging
/// over directions gives the position-free decay curve
/// `EDC(t) = ∫ exp(-κ c g(u) t) / (κ c g(u)) dΩ`, whose T30 estimate is
/// `C / κ` for a constant `C` fixed by the room shape. Sabine's formula
/// assumes a diffuse field and overestimates the decay time of elongated
/// rooms, where near-axial paths hit few walls.
pub fn decay_matched_absorption(room: &RoomConfig) -> Result<f64> {
    room.validate()?;
    if room.t60 <= 0.0 {
        return Err(Error::invalid(format!("T60 must be positive, got {}", room.t60)));
    }
    let kappa = unit_decay_t60(room) / room.t60;
    Ok((1.0 - (-kappa).exp()).clamp(MIN_ABSORPTION, 1.0))
}

/// T30 of the direction-averaged decay curve at `κ = 1`.
fn unit_decay_t60(room: &RoomConfig) -> f64 {
    const N: usize = 48;
    let c = room.sound_speed;
    // Midpoint rule over one octant; the others are mirror images.
    let mut rates = Vec::with_capacity(N * N);
    for i in 0..N {
        let th = (i as f64 + 0.5) / N as f64 * PI / 2.0;
        for j in 0..N {
            let ph = (j as f64 + 0.5) / N as f64 * PI / 2.0;
            let u = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            let g: f64 = u.iter().zip(&room.dims).map(|(a, l)| a / l).sum();
            rates.push((th.sin(), c * g));
        }
    }
    let edc = |t: f64| -> f64 { rates.iter().map(|&(w, a)| w * (-a * t).exp() / a).sum() };
    let e0 = edc(0.0);
    let fastest = rates.iter().map(|r| r.1).fold(0.0, f64::max);
    let dt = 0.1 / fastest;
    let mut pts = Vec::new();
    let mut t = 0.0;
    loop {
        let db = 10.0 * (edc(t) / e0).log10();
        if db < -35.0 {
            break;
        }
        if db <= -5.0 {
            pts.push((t, db));
        }
        t += dt;
    }
    -60.0 / fit_slope(&pts)
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    cov / var
}

pub fn max_image_order(room: &RoomConfig) -> usize {
    if room.t60 <= 0.0 {
        return 0;
    }
    let min_dim = room.dims.iter().copied().fold(f64::INFINITY, f64::min);
    (room.sound_speed * room.t60 / (2.0 * min_dim)).ceil() as usize + 1
}

/// Image offsets `(distance component, reflection count)` along one axis.
fn axis_images(dim: f64, src: f64, mic: f64, order: i64, reach: f64) -> Vec<(f64, i32)> {
    let mut out = Vec::new();
    for n in -order..=order {
        for q in 0..=1i64 {
            if (n - q).abs() > order {
                continue;
            }
            let u = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * dim - mic;
            if u.abs() <= reach {
                out.push((u, ((n - q).abs() + n.abs()) as i32));
            }
        }
    }
    out
}

/// Normalized 8-tap Hann-windowed sinc for a delay of `frac` in [0, 1)
/// samples past tap 3.
fn fractional_kernel(frac: f64) -> [f64; SINC_TAPS] {
    let half = (SINC_TAPS / 2) as f64;
    let mut kernel = [0.0; SINC_TAPS];
    for (i, k) in kernel.iter_mut().enumerate() {
        let x = i as f64 - (half - 1.0) - frac;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        *k = sinc * 0.5 * (1.0 + (PI * x / half).cos());
    }
    let total: f64 = kernel.iter().sum();
    kernel.map(|k| k / total)
}

const KERNEL_STEPS: usize = 256;

/// Kernels at `KERNEL_STEPS + 1` evenly spaced fractions, for linear
/// interpolation in the image loop.
fn kernel_table() -> &'static [[f64; SINC_TAPS]] {
    static TABLE: OnceLock<Vec<[f64; SINC_TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=KERNEL_STEPS)
            .map(|j| fractional_kernel(j as f64 / KERNEL_STEPS as f64))
            .collect()
    })
}

/// Adds a band-limited impulse of area `gain` at fractional sample `delay`.
fn add_fractional_impulse(taps: &mut [f64], table: &[[f64; SINC_TAPS]], delay: f64, gain: f64) {
    let base = delay.floor();
    let pos = (delay - base) * KERNEL_STEPS as f64;
    let j = (pos as usize).min(KERNEL_STEPS - 1);
    let w = pos - j as f64;
    let (k0, k1) = (&table[j], &table[j + 1]);
    let first = base as i64 - (SINC_TAPS / 2) as i64 + 1;
    for i in 0..SINC_TAPS {
        let n = first + i as i64;
        if n >= 0 && (n as usize) < taps.len() {
            taps[n as usize] += gain * (k0[i] + w * (k1[i] - k0[i]));
        }
    }
}

/// Image-source impulse response from `src` to `mic`.
///
/// Each image contributes `β^r / (4π d)` with `β = sqrt(1 - α)`, `α` from
/// [`decay_matched_absorption`] and `r` the image's reflection count, delayed by `d fs / c` through an 8-tap windowed sinc.
/// Images whose delay falls beyond the response length are skipped.
pub fn ism_rir(room: &RoomConfig, src: [f64; 3], mic: [f64; 3]) -> Result<Rir> {
    room.validate()?;
    if !room.contains(src) {
        return Err(Error::invalid(format!(
            "source {src:?} is not strictly inside the room"
        )));
    }
    if !room.contains(mic) {
        return Err(Error::invalid(format!(
            "microphone {mic:?} is not strictly inside the room"
        )));
    }
    let direct = dist(src, mic);
    if direct < 1e-9 {
        return Err(Error::invalid("source and microphone coincide"));
    }
    let fs = room.sample_rate;
    let c = room.sound_speed;
    let order = room.image_order() as i64;
    let alpha = if room.t60 > 0.0 {
        decay_matched_absorption(room)?
    } else {
        1.0
    };
    let beta = (1.0 - alpha).max(0.0).sqrt();

    let direct_delay = direct * fs / c;
    let len = room.rir_len().max(direct_delay.ceil() as usize + SINC_TAPS);
    let mut taps = vec![0.0; len];
    let reach = (len - SINC_TAPS / 2 - 1) as f64 * c / fs;

    let xs = axis_images(room.dims[0], src[0], mic[0], order, reach);
    let ys = axis_images(room.dims[1], src[1], mic[1], order, reach);
    let mut zs = axis_images(room.dims[2], src[2], mic[2], order, reach);
    zs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_refl = 6 * order as usize + 2;
    let pow: Vec<f64> = (0..=max_refl).map(|r| beta.powi(r as i32)).collect();
    let reach2 = reach * reach;
    let table = kernel_table();
    let per_meter = fs / c;

    for &(ux, rx) in &xs {
        for &(uy, ry) in &ys {
            let dxy = ux * ux + uy * uy;
            if dxy > reach2 {
                continue;
            }
            let zmax = (reach2 - dxy).sqrt();
            let lo = zs.partition_point(|z| z.0 < -zmax);
            let hi = zs.partition_point(|z| z.0 <= zmax);
            let rxy = (rx + ry) as usize;
            for &(uz, rz) in &zs[lo..hi] {
                let gain = pow[rxy + rz as usize];
                if gain == 0.0 {
                    continue;
                }
                let d = (dxy + uz * uz).sqrt();
                add_fractional_impulse(&mut taps, table, d * per_meter, gain / (4.0 * PI * d));
            }
        }
    }
    Ok(Rir { taps, sample_rate: fs })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Reverberation time from Schroeder backward integration, extrapolated
/// from a straight-line fit of the decay between -5 and -35 dB.
pub fn schroeder_t60(taps: &[f64], fs: f64) -> Result<f64> {
    let total: f64 = taps.iter().map(|x| x * x).sum();
    if total <= 0.0 {
        return Err(Error::invalid("impulse response has no energy"));
    }
    let mut edc = vec![0.0; taps.len()];
    let mut acc = 0.0;
    for (i, x) in taps.iter().enumerate().rev() {
        acc += x * x;
        edc[i] = 10.0 * (acc / total).log10();
    }
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &e)| (-35.0..=-5.0).contains(&e))
        .map(|(i, &e)| (i as f64 / fs, e))
        .collect();
    if pts.len() < 2 || edc.last().copied().unwrap_or(0.0) > -35.0 {
        return Err(Error::Numerical("decay does not span -5 to -35 dB".into()));
    }
    let slope = fit_slope(&pts);
    if slope >= 0.0 {
        return Err(Error::Numerical("energy decay curve does not decay".into()));
    }
    Ok(-60.0 / slope)
}
