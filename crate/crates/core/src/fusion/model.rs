//! Network parameters and the `BFW1` weight file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stft::{StftConfig, Window};
use crate::tensorfile::{self, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BFW1";
pub const VERSION: u32 = 1;

/// Shape header of a fusion network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub beams: usize,
    pub bins: usize,
    pub bands: usize,
    pub hidden: usize,
    pub knee: usize,
    pub stft: StftConfig,
    pub sample_rate: u32,
}

impl Architecture {
    /// P beams over the default 512-point STFT, 64 bands, width 32.
    pub fn standard(beams: usize) -> Self {
        let stft = StftConfig::default();
        Architecture {
            beams,
            bins: stft.num_bins(),
            bands: super::erb::DEFAULT_BANDS,
            hidden: 32,
            knee: super::erb::DEFAULT_KNEE,
            stft,
            sample_rate: 16_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beams < 2 || self.hidden == 0 {
            return Err(Error::invalid("architecture needs P >= 2 and D >= 1"));
        }
        self.stft.validate()?;
        if self.bins != self.stft.num_bins() {
            return Err(Error::invalid(format!(
                "F = {} does not match nfft {}",
                self.bins, self.stft.nfft
            )));
        }
        if self.bands >= self.bins || self.knee >= self.bands {
            return Err(Error::invalid("need K < F' < F"));
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        3 * self.beams
    }
}

/// Weights of a three-gate recurrent cell acting on `[input; hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub wz: Array2<f64>,
    pub wr: Array2<f64>,
    pub wh: Array2<f64>,
    pub bz: Array1<f64>,
    pub br: Array1<f64>,
    pub bh: Array1<f64>,
}

impl GruWeights {
    fn zeros(d: usize) -> Self {
        GruWeights {
            wz: Array2::zeros((d, 2 * d)),
            wr: Array2::zeros((d, 2 * d)),
            wh: Array2::zeros((d, 2 * d)),
            bz: Array1::zeros(d),
            br: Array1::zeros(d),
            bh: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    /// `[D, 3P]`
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub intra: GruWeights,
    /// `[D, D]`
    pub intra_proj: Array2<f64>,
    pub inter: GruWeights,
    /// `[P, D]`
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
}

/// Values are stored as `f32` on disk; keep them exactly representable.
fn f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let d = arch.hidden;
        Ok(ModelParams {
            arch,
            enc_w: Array2::zeros((d, arch.features())),
            enc_b: Array1::zeros(d),
            intra: GruWeights::zeros(d),
            intra_proj: Array2::zeros((d, d)),
            inter: GruWeights::zeros(d),
            dec_w: Array2::zeros((arch.beams, d)),
            dec_b: Array1::zeros(arch.beams),
        })
    }

    /// Uniform Glorot-style initialization, deterministic in `seed`.
    pub fn random(arch: Architecture, seed: u64) -> Result<Self> {
        let mut p = ModelParams::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.for_each_tensor_mut(|_, t| {
            let (fan_out, fan_in) = match t.shape() {
                [o, i] => (*o, *i),
                [o] => (*o, *o),
                _ => (1, 1),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let is_bias = t.ndim() == 1;
            for v in t.iter_mut() {
                let raw = rng.random_range(-bound..bound);
                *v = f32_exact(if is_bias { raw * 0.1 } else { raw });
            }
        });
        Ok(p)
    }

    /// Zeroes decoder weights and bias, which forces a uniform mask.
    pub fn with_zero_decoder(mut self) -> Self {
        self.dec_w.fill(0.0);
        self.dec_b.fill(0.0);
        self
    }

    fn tensor_specs(&self) -> Vec<(&'static str, Vec<usize>)> {
        let d = self.arch.hidden;
        let p = self.arch.beams;
        vec![
            ("enc/W", vec![d, 3 * p]),
            ("enc/b", vec![d]),
            ("intra/Wz", vec![d, 2 * d]),
            ("intra/Wr", vec![d, 2 * d]),
            ("intra/Wh", vec![d, 2 * d]),
            ("intra/bz", vec![d]),
            ("intra/br", vec![d]),
            ("intra/bh", vec![d]),
            ("intra/proj", vec![d, d]),
            ("inter/Wz", vec![d, 2 * d]),
            ("inter/Wr", vec![d, 2 * d]),
            ("inter/Wh", vec![d, 2 * d]),
            ("inter/bz", vec![d]),
            ("inter/br", vec![d]),
            ("inter/bh", vec![d]),
            ("dec/W", vec![p, d]),
            ("dec/b", vec![p]),
        ]
    }

    fn tensor_mut(&mut self, name: &str) -> Option<ndarray::ArrayViewMutD<'_, f64>> {
        let v = match name {
            "enc/W" => self.enc_w.view_mut().into_dyn(),
            "enc/b" => self.enc_b.view_mut().into_dyn(),
            "intra/proj" => self.intra_proj.view_mut().into_dyn(),
            "dec/W" => self.dec_w.view_mut().into_dyn(),
            "dec/b" => self.dec_b.view_mut().into_dyn(),
            other => {
                let (prefix, field) = other.split_once('/')?;
                let g = match prefix {
                    "intra" => &mut self.intra,
                    "inter" => &mut self.inter,
                    _ => return None,
                };
                match field {
                    "Wz" => g.wz.view_mut().into_dyn(),
                    "Wr" => g.wr.view_mut().into_dyn(),
                    "Wh" => g.wh.view_mut().into_dyn(),
                    "bz" => g.bz.view_mut().into_dyn(),
                    "br" => g.br.view_mut().into_dyn(),
                    "bh" => g.bh.view_mut().into_dyn(),
                    _ => return None,
                }
            }
        };
        Some(v)
    }

    fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut ndarray::ArrayViewMutD<'_, f64>)) {
        for (name, _) in self.tensor_specs() {
            let mut t = self.tensor_mut(name).expect("spec names are valid");
            f(name, &mut t);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensor_specs()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }

    pub fn to_tensors(&self) -> Result<Vec<Tensor>> {
        let mut clone = self.clone();
        let mut out = Vec::new();
        for (name, dims) in self.tensor_specs() {
            let t = clone.tensor_mut(name).expect("spec names are valid");
            let data = t.iter().map(|&v| v as f32).collect();
            out.push(Tensor::new(name, dims, data)?);
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<W> {
        let a = &self.arch;
        let mut tw = tensorfile::Writer::new(w, MAGIC, VERSION)?;
        for v in [
            a.beams,
            a.bins,
            a.bands,
            a.hidden,
            a.knee,
            a.stft.nfft,
            a.stft.window_len,
            a.stft.hop,
        ] {
            tw.u32(u32::try_from(v).map_err(|_| Error::format("header field exceeds u32"))?)?;
        }
        tw.u32(a.stft.window.code())?;
        tw.u32(a.sample_rate)?;
        tw.tensors(&self.to_tensors()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut tr = tensorfile::Reader::open(r, MAGIC, VERSION)?;
        let mut h = [0usize; 8];
        for v in h.iter_mut() {
            *v = tr.u32()? as usize;
        }
        let window = Window::from_code(tr.u32()?)?;
        let sample_rate = tr.u32()?;
        let arch = Architecture {
            beams: h[0],
            bins: h[1],
            bands: h[2],
            hidden: h[3],
            knee: h[4],
            stft: StftConfig {
                nfft: h[5],
                window_len: h[6],
                hop: h[7],
                window,
            },
            sample_rate,
        };
        arch.validate().map_err(|e| Error::format(format!("bad header: {e}")))?;
        let tensors = tr.tensors()?;
        let mut params = ModelParams::zeros(arch)?;
        let specs = params.tensor_specs();
        if tensors.len() != specs.len() {
            return Err(Error::format(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (name, dims) in specs {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::format(format!("missing tensor {name}")))?;
            if t.dims != dims {
                return Err(Error::format(format!(
                    "tensor {name} has shape {:?}, header implies {dims:?}",
                    t.dims
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(format!("tensor {name} holds non-finite values")));
            }
            let mut dst = params.tensor_mut(name).expect("spec names are valid");
            for (d, s) in dst.iter_mut().zip(&t.data) {
                *d = *s as f64;
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = self.write_to(BufWriter::new(File::create(path)?))?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelParams::read_from(BufReader::new(File::open(path)?))
    }
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    ModelParams::load(path)
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    params.save(path)
}
