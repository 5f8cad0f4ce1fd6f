use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{silence_trim, synthesize_scenario, synthetic_speech, Scenario, SourceTrajectory};
use crate::array::FrequencyGrid;
use crate::beamformer::{beamform_signals, FilterBank};
use crate::stft::StftConfig;
use crate::wav::{self, Audio};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_META_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    /// Clip length in seconds.
    pub duration: f64,
    pub t60_range: [f64; 2],
    pub snr_range: [f64; 2],
    /// Directory of mono WAVs at the array sample rate; synthetic speech
    /// when absent.
    #[serde(default)]
    pub source_dir: Option<PathBuf>,
    /// Also write the separate target, interference and noise images.
    #[serde(default)]
    pub components: bool,
    pub nulls_deg: Vec<f64>,
    #[serde(default)]
    pub include_mwng: bool,
    pub stft: StftConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 50,
            seed: 0,
            duration: 4.0,
            t60_range: [0.2, 0.8],
            snr_range: [20.0, 40.0],
            source_dir: None,
            components: false,
            nulls_deg: vec![90.0, 120.0, 150.0, 180.0],
            include_mwng: false,
            stft: StftConfig::default(),
        }
    }
}

/// File names relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePaths {
    pub mix: String,
    pub beams: String,
    #[serde(rename = "ref")]
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
}

/// One line of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub paths: SamplePaths,
    pub t60_s: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub trajectory: SourceTrajectory,
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    config: &'a DatasetConfig,
    beam_labels: Vec<String>,
    sample_rate: f64,
    num_mics: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !(ordered(self.t60_range) && self.t60_range[0] > 0.0) {
            return Err(Error::invalid(format!("bad T60 range {:?}", self.t60_range)));
        }
        if !ordered(self.snr_range) {
            return Err(Error::invalid(format!("bad SNR range {:?}", self.snr_range)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid("clip duration must be positive"));
        }
        self.stft.validate()
    }
}

fn corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no WAV files in {}", dir.display())));
    }
    Ok(files)
}

/// Loads a random clip, trims long silences, then loops or crops it to `len`.
fn corpus_clip(files: &[PathBuf], len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let path = &files[rng.random_range(0..files.len())];
    let audio = wav::read(path)?;
    if audio.num_channels() != 1 {
        return Err(Error::format(format!("{}: expected mono audio", path.display())));
    }
    if f64::from(audio.sample_rate) != fs {
        return Err(Error::format(format!(
            "{}: sample rate {} does not match {fs}",
            path.display(),
            audio.sample_rate
        )));
    }
    let clip = silence_trim(&audio.channels[0], fs).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let start = if clip.len() > len {
        rng.random_range(0..=clip.len() - len)
    } else {
        0
    };
    Ok(clip.iter().cycle().skip(start).take(len).copied().collect())
}

fn write_json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.push(b'\n');
    Ok(())
}

/// Generates `cfg.count` reverberant moving-interferer samples under `root`.
///
/// Sample `i` draws everything from its own ChaCha stream `(seed, i)`, so the
/// output does not depend on scheduling. Each sample directory holds
/// `mix.wav` (M channels), `beams.wav` (one channel per filter), `ref.wav`
/// and `meta.json`; the manifest lists them in index order.
pub fn gen_dataset(cfg: &DatasetConfig, root: &Path) -> Result<Vec<ManifestRecord>> {
    cfg.validate()?;
    fs::create_dir_all(root)?;
    if cfg.count == 0 {
        fs::write(root.join(MANIFEST_FILE), b"")?;
        return Ok(Vec::new());
    }
    let files = cfg.source_dir.as_deref().map(corpus).transpose()?;
    let base = Scenario::reference(cfg.t60_range[0], None, 0);
    let grid = FrequencyGrid::new(cfg.stft.nfft, base.geometry.sample_rate)?;
    let bank = FilterBank::standard(&base.geometry, &grid, base.target_az, &cfg.nulls_deg, cfg.include_mwng)?;
    let fs_hz = base.room.sample_rate;
    let len = (cfg.duration * fs_hz).round() as usize;

    let records = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let t60 = rng.random_range(cfg.t60_range[0]..=cfg.t60_range[1]);
            let snr = rng.random_range(cfg.snr_range[0]..=cfg.snr_range[1]);
            let seed: u64 = rng.random();
            let (target, interferer) = match &files {
                None => (
                    synthetic_speech(len, fs_hz, seed),
                    synthetic_speech(len, fs_hz, seed ^ 0x9e37_79b9_7f4a_7c15),
                ),
                Some(files) => (
                    corpus_clip(files, len, fs_hz, &mut rng)?,
                    corpus_clip(files, len, fs_hz, &mut rng)?,
                ),
            };
            let scn = Scenario::reference(t60, Some(snr), seed);
            let audio = synthesize_scenario(&scn, &target, &[interferer])?;
            let beams = beamform_signals(&bank, &audio.mixture, &cfg.stft)?;

            let id = format!("sample_{i:05}");
            let dir = root.join(&id);
            fs::create_dir_all(&dir)?;
            let rate = fs_hz as u32;
            let put = |name: &str, channels: Vec<Vec<f64>>| -> Result<String> {
                wav::write(
                    &dir.join(name),
                    &Audio {
                        channels,
                        sample_rate: rate,
                    },
                )?;
                Ok(format!("{id}/{name}"))
            };
            let mut paths = SamplePaths {
                mix: put("mix.wav", audio.mixture)?,
                beams: put("beams.wav", beams)?,
                reference: put("ref.wav", vec![audio.reference])?,
                target: None,
                interference: None,
                noise: None,
            };
            if cfg.components {
                paths.target = Some(put("target.wav", audio.target)?);
                paths.interference = Some(put("interference.wav", audio.interference)?);
                paths.noise = Some(put("noise.wav", audio.noise)?);
            }
            let record = ManifestRecord {
                id,
                paths,
                t60_s: t60,
                snr_db: snr,
                seed,
                trajectory: scn.interferers[0].clone(),
            };
            let mut meta = serde_json::to_vec_pretty(&record)?;
            meta.push(b'\n');
            fs::write(dir.join("meta.json"), meta)?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = Vec::new();
    for r in &records {
        write_json_line(&mut manifest, r)?;
    }
    fs::File::create(root.join(MANIFEST_FILE))?.write_all(&manifest)?;
    let meta = DatasetMeta {
        config: cfg,
        beam_labels: bank.labels(),
        sample_rate: fs_hz,
        num_mics: base.geometry.num_mics,
    };
    let mut bytes = serde_json::to_vec_pretty(&meta)?;
    bytes.push(b'\n');
    fs::write(root.join(DATASET_META_FILE), bytes)?;
    Ok(records)
}

/// Reads a manifest written by [`gen_dataset`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            count,
            seed,
            duration: 1.5,
            t60_range: [0.2, 0.3],
            components: true,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn zero_count_writes_only_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(gen_dataset(&small(0, 1), dir.path()).unwrap().is_empty());
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), b"");
    }

    #[test]
    fn records_respect_ranges_and_files_exist() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            t60_range: [0.2, 0.8],
            ..small(2, 3)
        };
        let recs = gen_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(recs, read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap());
        for r in &recs {
            assert!((0.2..=0.8).contains(&r.t60_s));
            assert!((20.0..=40.0).contains(&r.snr_db));
            let beams = wav::read(&dir.path().join(&r.paths.beams)).unwrap();
            assert_eq!(beams.num_channels(), 4);
            assert_eq!(wav::read(&dir.path().join(&r.paths.mix)).unwrap().num_channels(), 8);
            assert!(dir.path().join(r.paths.noise.as_ref().unwrap()).exists());
        }
    }

    #[test]
    fn corpus_directory_is_used_and_validated() {
        let corpus_dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            source_dir: Some(corpus_dir.path().to_path_buf()),
            ..small(1, 4)
        };
        assert!(gen_dataset(&cfg, out.path()).is_err());
        let clip = synthetic_speech(8000, 16_000.0, 9);
        wav::write(&corpus_dir.path().join("a.wav"), &Audio::mono(clip, 16_000)).unwrap();
        let recs = gen_dataset(&cfg, out.path()).unwrap();
        assert_eq!(recs.len(), 1);
        wav::write(&corpus_dir.path().join("b.wav"), &Audio::mono(vec![0.1; 100], 8000)).unwrap();
        let many = DatasetConfig { count: 6, ..cfg };
        let err = gen_dataset(&many, out.path()).unwrap_err();
        assert!(err.to_string().contains("b.wav"), "{err}");
    }
}
