use rayon::prelude::*;
use realfft::RealFftPlanner;

use super::{ism_rir, RoomConfig, SourceTrajectory};
use crate::{Complex64, Error, Result};

/// Full linear convolution (`x.len() + h.len() - 1` samples) via real FFTs.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut buf = vec![0.0; n];
    buf[..x.len()].copy_from_slice(x);
    let mut xf = fwd.make_output_vec();
    fwd.process(&mut buf, &mut xf).expect("fft length is fixed by the plan");

    buf.iter_mut().for_each(|v| *v = 0.0);
    buf[..h.len()].copy_from_slice(h);
    let mut hf = fwd.make_output_vec();
    fwd.process(&mut buf, &mut hf).expect("fft length is fixed by the plan");

    for (a, b) in xf.iter_mut().zip(&hf) {
        *a *= b;
    }
    xf[0].im = 0.0;
    if let Some(last) = xf.last_mut() {
        *last = Complex64::new(last.re, 0.0);
    }
    inv.process(&mut xf, &mut buf).expect("fft length is fixed by the plan");
    let scale = 1.0 / n as f64;
    buf.truncate(out_len);
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Time-domain reference implementation of [`convolve`].
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (j, &hv) in h.iter().enumerate() {
            y[i + j] += xv * hv;
        }
    }
    y
}

fn check_signal(signal: &[f64]) -> Result<()> {
    if signal.is_empty() {
        return Err(Error::invalid("empty source signal"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("source signal"));
    }
    Ok(())
}

/// Fixed source seen by every microphone; each channel keeps the first
/// `signal.len()` samples of the convolution.
pub fn render_static(signal: &[f64], src: [f64; 3], mics: &[[f64; 3]], room: &RoomConfig) -> Result<Vec<Vec<f64>>> {
    check_signal(signal)?;
    mics.par_iter()
        .map(|&mic| {
            let rir = ism_rir(room, src, mic)?;
            let mut y = convolve(signal, &rir.taps);
            y.truncate(signal.len());
            Ok(y)
        })
        .collect()
}

/// Piecewise-stationary rendering: segment `k` of the signal is convolved
/// with the responses of the `k`-th trajectory position and its full tail is
/// added into the output, so tails ring over into later segments. After the
/// last hop the source stays put for the rest of the signal.
pub fn render_moving(
    signal: &[f64],
    traj: &SourceTrajectory,
    mics: &[[f64; 3]],
    room: &RoomConfig,
) -> Result<Vec<Vec<f64>>> {
    check_signal(signal)?;
    traj.validate(room)?;
    let positions = traj.positions();
    let interval = match traj.interval_samples(room.sample_rate) {
        None => return render_static(signal, positions[0], mics, room),
        Some(n) => n,
    };
    if interval == 0 || signal.len() < interval {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one trajectory interval ({interval})",
            signal.len()
        )));
    }
    let mut bounds = Vec::new();
    let mut start = 0;
    for k in 0..positions.len() {
        if start >= signal.len() {
            break;
        }
        let end = if k + 1 == positions.len() {
            signal.len()
        } else {
            (start + interval).min(signal.len())
        };
        bounds.push((start, end, positions[k]));
        start = end;
    }

    mics.par_iter()
        .map(|&mic| {
            let mut y = vec![0.0; signal.len()];
            for &(start, end, pos) in &bounds {
                let rir = ism_rir(room, pos, mic)?;
                let seg = convolve(&signal[start..end], &rir.taps);
                for (o, v) in y[start..].iter_mut().zip(seg) {
                    *o += v;
                }
            }
            Ok(y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fft_convolution_matches_direct() {
        for (n, m) in [(1, 1), (7, 3), (100, 513), (1000, 64)] {
            let x = noise(n, n as u64);
            let h = noise(m, m as u64 + 100);
            let a = convolve(&x, &h);
            let b = convolve_direct(&x, &h);
            assert_eq!(a.len(), n + m - 1);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-10);
            }
        }
        assert!(convolve(&[], &[1.0]).is_empty());
    }

    fn small_room() -> RoomConfig {
        let mut r = RoomConfig::new([5.0, 4.0, 3.0], 0.15);
        r.sample_rate = 8000.0;
        r
    }

    #[test]
    fn static_trajectory_is_plain_convolution() {
        let room = small_room();
        let mics = [[2.0, 2.0, 1.0], [2.1, 2.0, 1.0]];
        let x = noise(3000, 1);
        let traj = SourceTrajectory::Static {
            position: [3.5, 1.0, 1.5],
        };
        let y = render_moving(&x, &traj, &mics, &room).unwrap();
        for (ch, &mic) in y.iter().zip(&mics) {
            let rir = ism_rir(&room, [3.5, 1.0, 1.5], mic).unwrap();
            let full = convolve(&x, &rir.taps);
            assert_eq!(ch.as_slice(), &full[..x.len()]);
        }
    }

    #[test]
    fn moving_matches_time_varying_oracle() {
        let room = small_room();
        let mic = [2.5, 2.0, 1.0];
        let traj = SourceTrajectory::CircularHop {
            center: [2.5, 2.0, 1.0],
            radius: 1.0,
            start_az: 0.0,
            stop_az: 40.0,
            step: 20.0,
            interval: 0.1,
        };
        let x = noise(2800, 3);
        let y = render_moving(&x, &traj, &[mic], &room).unwrap();
        let rirs: Vec<Vec<f64>> = traj
            .positions()
            .iter()
            .map(|&p| ism_rir(&room, p, mic).unwrap().taps)
            .collect();
        // y[n] = sum_k h_{seg(k)}[n - k] x[k]
        let mut oracle = vec![0.0; x.len()];
        for (k, &xv) in x.iter().enumerate() {
            let h = &rirs[(k / 800).min(rirs.len() - 1)];
            for (j, &hv) in h.iter().enumerate() {
                if k + j >= x.len() {
                    break;
                }
                oracle[k + j] += xv * hv;
            }
        }
        let err: f64 = y[0].iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = oracle.iter().map(|v| v * v).sum();
        assert!((err / norm).sqrt() < 1e-10);

        let zero = render_moving(&vec![0.0; 2800], &traj, &[mic], &room).unwrap();
        assert!(zero[0].iter().all(|&v| v.abs() < 1e-300));
        assert!(render_moving(&x[..500], &traj, &[mic], &room).is_err());
    }

    #[test]
    fn trajectory_outside_room_is_rejected() {
        let room = small_room();
        let traj = SourceTrajectory::CircularHop {
            center: [2.5, 2.0, 1.0],
            radius: 3.0,
            start_az: 0.0,
            stop_az: 90.0,
            step: 10.0,
            interval: 0.1,
        };
        assert!(render_moving(&noise(2000, 1), &traj, &[[2.5, 2.0, 1.0]], &room).is_err());
    }
}
