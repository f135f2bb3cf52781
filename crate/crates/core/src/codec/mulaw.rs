use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued mono waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some((i, x)) = samples
            .iter()
            .enumerate()
            .find(|(_, x)| !(-1.0..=1.0).contains(*x))
        {
            return Err(Error::OutOfRange {
                what: "sample",
                detail: format!("sample {i} = {x} not in [-1, 1]"),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Waveform in class-index form, each class in `[0, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWaveform {
    pub classes: Vec<u16>,
    pub sample_rate: u32,
    pub q: u16,
}

impl QuantizedWaveform {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn as_indices(&self) -> Vec<usize> {
        self.classes.iter().map(|&c| c as usize).collect()
    }
}

/// Mu-law companding followed by uniform binning of the companded value.
///
/// Bins are half-open `[lo, hi)` over `[-1, 1]`, the top bin also taking
/// `y = 1`. A sample of exactly zero therefore lands in class `q / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuLaw {
    pub mu: f64,
    pub q: u16,
}

impl Default for MuLaw {
    fn default() -> Self {
        Self { mu: 255.0, q: 256 }
    }
}

impl MuLaw {
    pub fn new(mu: f64, q: u16) -> Result<Self> {
        if mu.is_nan() || mu <= 0.0 || q < 2 {
            return Err(Error::Config(format!("invalid mu-law parameters mu={mu}, q={q}")));
        }
        Ok(Self { mu, q })
    }

    pub fn compand(&self, x: f64) -> f64 {
        x.signum() * (self.mu * x.abs()).ln_1p() / self.mu.ln_1p()
    }

    pub fn expand(&self, y: f64) -> f64 {
        y.signum() * ((self.mu.ln_1p() * y.abs()).exp() - 1.0) / self.mu
    }

    pub fn encode_sample(&self, x: f64) -> Result<u16> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange {
                what: "sample",
                detail: format!("{x} not in [-1, 1]"),
            });
        }
        let q = self.q as f64;
        let y = if x == 0.0 { 0.0 } else { self.compand(x) };
        let bin = ((y + 1.0) / 2.0 * q).floor() as i64;
        Ok(bin.clamp(0, self.q as i64 - 1) as u16)
    }

    /// Companded-domain center of a class.
    pub fn class_center(&self, c: u16) -> f64 {
        -1.0 + (c as f64 + 0.5) * 2.0 / self.q as f64
    }

    pub fn decode_class(&self, c: u16) -> Result<f64> {
        if c >= self.q {
            return Err(Error::OutOfRange {
                what: "class",
                detail: format!("{c} not in [0, {})", self.q),
            });
        }
        Ok(self.expand(self.class_center(c)))
    }

    pub fn encode(&self, w: &Waveform) -> Result<QuantizedWaveform> {
        let classes = w
            .samples
            .iter()
            .map(|&x| self.encode_sample(x))
            .collect::<Result<_>>()?;
        Ok(QuantizedWaveform {
            classes,
            sample_rate: w.sample_rate,
            q: self.q,
        })
    }

    pub fn decode(&self, qw: &QuantizedWaveform) -> Result<Waveform> {
        if qw.q != self.q {
            return Err(Error::Config(format!(
                "waveform quantized to {} classes, codec has {}",
                qw.q, self.q
            )));
        }
        let samples = qw
            .classes
            .iter()
            .map(|&c| self.decode_class(c))
            .collect::<Result<_>>()?;
        Waveform::new(samples, qw.sample_rate)
    }
}
