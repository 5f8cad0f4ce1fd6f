use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{render_moving, render_static, Scenario};
use crate::{Error, Result};

/// Rendered scenario. Multichannel fields are `[mic][sample]`, all of the
/// target signal's length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioAudio {
    pub mixture: Vec<Vec<f64>>,
    /// Direct-path-only target at the first microphone.
    pub reference: Vec<f64>,
    pub target: Vec<Vec<f64>>,
    pub interference: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Renders the target from its fixed position and each interferer along its
/// trajectory, then adds white sensor noise scaled to hit `snr_db` at the
/// first microphone. Interferer signals are cut or zero-padded to the target
/// length.
pub fn synthesize_scenario(scn: &Scenario, target: &[f64], interferers: &[Vec<f64>]) -> Result<ScenarioAudio> {
    scn.validate()?;
    if target.is_empty() {
        return Err(Error::invalid("empty target signal"));
    }
    if interferers.len() != scn.interferers.len() {
        return Err(Error::invalid(format!(
            "scenario has {} interferers but {} signals were given",
            scn.interferers.len(),
            interferers.len()
        )));
    }
    let n = target.len();
    let mics = scn.mic_positions();
    let m = mics.len();

    let target_m = render_static(target, scn.target_position(), &mics, &scn.room)?;

    let mut interference = vec![vec![0.0; n]; m];
    for (traj, sig) in scn.interferers.iter().zip(interferers) {
        if sig.is_empty() {
            return Err(Error::invalid("empty interferer signal"));
        }
        let mut s = sig.clone();
        s.resize(n, 0.0);
        let rendered = render_moving(&s, traj, &mics, &scn.room)?;
        for (acc, r) in interference.iter_mut().zip(rendered) {
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
    }

    let direct_room = scn.room.anechoic();
    let reference = render_static(target, scn.target_position(), &mics[..1], &direct_room)?
        .pop()
        .expect("one microphone requested");

    let noise = match scn.snr_db {
        None => vec![vec![0.0; n]; m],
        Some(snr) => {
            let e_target = energy(&target_m[0]);
            if e_target <= 0.0 {
                return Err(Error::invalid(
                    "target is silent at the first microphone; SNR is undefined",
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
            let mut raw: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let scale = (e_target / (energy(&raw[0]) * 10f64.powf(snr / 10.0))).sqrt();
            raw.iter_mut().flatten().for_each(|v| *v *= scale);
            raw
        }
    };

    let mixture = (0..m)
        .map(|c| {
            (0..n)
                .map(|i| target_m[c][i] + interference[c][i] + noise[c][i])
                .collect()
        })
        .collect();
    Ok(ScenarioAudio {
        mixture,
        reference,
        target: target_m,
        interference,
        noise,
    })
}
