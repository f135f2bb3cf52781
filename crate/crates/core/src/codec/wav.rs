//! 16-bit PCM mono WAV and a lossless raw `f64` waveform format.
//!
//! Raw layout (little-endian): magic `SEAR`, version `u32`, sample rate
//! `u32`, sample count `u64`, then one `f64` per sample.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"SEAR";
const RAW_VERSION: u32 = 1;
const PCM_SCALE: f64 = 32767.0;

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        crate::fsutil::create_dir(parent)?;
    }
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in &w.samples {
        let s = (x.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        writer.write_sample(s).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(path, "expected 16-bit PCM mono"));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| (v as f64 / PCM_SCALE).clamp(-1.0, 1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn encode_raw(w: &Waveform) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * w.samples.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.samples.len() as u64).to_le_bytes());
    for x in &w.samples {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Waveform> {
    let bad = |d: &str| Error::format(path, d.to_string());
    if bytes.len() < 20 || &bytes[..4] != RAW_MAGIC {
        return Err(bad("missing SEAR header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != RAW_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rate = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() != n * 8 {
        return Err(bad(&format!("expected {n} samples, found {} bytes", body.len())));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Waveform::new(samples, rate)
}

pub fn write_raw(path: &Path, w: &Waveform) -> Result<()> {
    fs::write(path, encode_raw(w)).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}
