//! Frame-level feature files stored next to each utterance's WAV.
//!
//! Layout (little-endian): `SEAF`, version u32, frames u32, P u32, then
//! `frames` u16 phoneme codes, `frames` f64 raw f0 values in Hz and `frames`
//! u8 voicing flags.

use std::path::Path;

use super::utterance::PHONEME_CLASSES;
use crate::error::Result;
use crate::fsutil::{self, Reader};

const MAGIC: &[u8; 4] = b"SEAF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub phoneme_codes: Vec<u16>,
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

pub fn encode_features(f: &FrameFeatures) -> Vec<u8> {
    let n = f.phoneme_codes.len();
    let mut out = Vec::with_capacity(16 + 11 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(PHONEME_CLASSES as u32).to_le_bytes());
    for c in &f.phoneme_codes {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for x in &f.f0_hz {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend(f.voiced.iter().map(|&v| v as u8));
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FrameFeatures> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.format_error(format!("unsupported version {version}")));
    }
    let frames = r.u32()? as usize;
    let p = r.u32()?;
    if p as usize != PHONEME_CLASSES {
        return Err(r.format_error(format!("phoneme inventory {p}, expected {PHONEME_CLASSES}")));
    }
    let phoneme_codes = (0..frames).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    if let Some(bad) = phoneme_codes.iter().find(|&&c| c as u32 >= p) {
        return Err(r.format_error(format!("phoneme code {bad} out of range")));
    }
    let f0_hz = (0..frames).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let voiced = (0..frames)
        .map(|_| match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(r.format_error(format!("voicing flag {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(FrameFeatures {
        phoneme_codes,
        f0_hz,
        voiced,
    })
}

pub fn write_features(path: &Path, f: &FrameFeatures) -> Result<()> {
    fsutil::write(path, &encode_features(f))
}

pub fn read_features(path: &Path) -> Result<FrameFeatures> {
    decode_features(&fsutil::read(path)?, path)
}
