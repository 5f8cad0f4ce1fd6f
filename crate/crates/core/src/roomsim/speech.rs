use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// (F1, F2, F3) in Hz for a handful of vowels.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 160.0];

struct Resonator {
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bw: f64, fs: f64) {
        let r = (-PI * bw / fs).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        self.a2 = -r * r;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = x * (1.0 - self.a1 - self.a2) + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Deterministic speech-like test signal: a glottal pulse train with
/// wandering pitch plus breath noise, shaped by three formant resonators
/// whose targets change every syllable, under a syllabic amplitude envelope.
/// Peak-normalized to 0.5.
pub fn synthetic_speech(len: usize, fs: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res: Vec<Resonator> = (0..3)
        .map(|_| Resonator {
            a1: 0.0,
            a2: 0.0,
            y1: 0.0,
            y2: 0.0,
        })
        .collect();
    let base_f0 = rng.random_range(95.0..210.0);
    let mut out = Vec::with_capacity(len);
    let mut phase = 0.0;
    let mut syl_left = 0usize;
    let mut syl_len = 1usize;
    let mut formants = VOWELS[0];
    let mut target = VOWELS[0];
    let mut voiced = true;
    for n in 0..len {
        if syl_left == 0 {
            syl_len = (rng.random_range(0.12..0.3) * fs) as usize + 1;
            syl_left = syl_len;
            target = VOWELS[rng.random_range(0..VOWELS.len())];
            voiced = rng.random_bool(0.8);
        }
        syl_left -= 1;
        for (f, t) in formants.iter_mut().zip(&target) {
            *f += (t - *f) * 0.002;
        }
        if n % 32 == 0 {
            for ((r, &f), &bw) in res.iter_mut().zip(&formants).zip(&BANDWIDTHS) {
                r.tune(f, bw, fs);
            }
        }
        let t = n as f64 / fs;
        let f0 = base_f0 * (1.0 + 0.08 * (2.0 * PI * 0.7 * t).sin());
        phase += f0 / fs;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut excitation = 0.03 * noise;
        if phase >= 1.0 {
            phase -= 1.0;
            if voiced {
                excitation += 1.0;
            }
        }
        if !voiced {
            excitation *= 6.0;
        }
        let y = res.iter_mut().fold(0.0, |acc, r| acc + r.step(excitation));
        let pos = 1.0 - syl_left as f64 / syl_len as f64;
        let env = 0.15 + 0.85 * (PI * pos).sin().powi(2);
        out.push(y * env);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}
