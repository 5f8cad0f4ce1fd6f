//! 32-bit float RIFF/WAV reading and writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    /// One vector per channel.
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        Audio {
            channels: vec![samples],
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn write(path: &Path, audio: &Audio) -> Result<()> {
    let n = audio.num_channels();
    if n == 0 || n > u16::MAX as usize {
        return Err(Error::invalid(format!("cannot write {n} channels")));
    }
    if audio.channels.iter().any(|c| c.len() != audio.len()) {
        return Err(Error::shape("channels have different lengths"));
    }
    let spec = WavSpec {
        channels: n as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            w.write_sample(ch[i] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads float or integer PCM, scaling integers to [-1, 1).
pub fn read(path: &Path) -> Result<Audio> {
    let reader = WavReader::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n.max(1)); n];
    for frame in interleaved.chunks_exact(n) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    Ok(Audio {
        channels,
        sample_rate: spec.sample_rate,
    })
}
