//! Score, curve and d-vector exports.
//!
//! d-vector files (little-endian): `SEAD`, version u32, count u32, dim u32,
//! then per record a u32 id length, the UTF-8 id, the speaker id u32, a
//! source tag u8 (0 real, 1 generated) and `dim` f64 values.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Trial;
use crate::error::Result;
use crate::fsutil::{self, Reader};

const MAGIC: &[u8; 4] = b"SEAD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Generated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DVectorRecord {
    pub id: String,
    pub speaker_id: u32,
    pub source: Source,
    pub values: Vec<f64>,
}

pub fn encode_dvectors(records: &[DVectorRecord]) -> Vec<u8> {
    let dim = records.first().map_or(0, |r| r.values.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        assert_eq!(r.values.len(), dim, "d-vectors of one file share a dimension");
        out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        out.extend_from_slice(&r.speaker_id.to_le_bytes());
        out.push(match r.source {
            Source::Real => 0,
            Source::Generated => 1,
        });
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dvectors(bytes: &[u8], path: &Path) -> Result<Vec<DVectorRecord>> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.format_error(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.format_error("id is not UTF-8"))?
            .to_string();
        let speaker_id = r.u32()?;
        let source = match r.u8()? {
            0 => Source::Real,
            1 => Source::Generated,
            t => return Err(r.format_error(format!("source tag {t}"))),
        };
        let values = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(DVectorRecord { id, speaker_id, source, values });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_dvectors(path: &Path, records: &[DVectorRecord]) -> Result<()> {
    fsutil::write(path, &encode_dvectors(records))
}

pub fn read_dvectors(path: &Path) -> Result<Vec<DVectorRecord>> {
    decode_dvectors(&fsutil::read(path)?, path)
}

/// `score,label` with label 1 for genuine trials.
pub fn scores_csv(trials: &[Trial]) -> String {
    let mut s = String::from("score,label\n");
    for t in trials {
        writeln!(s, "{},{}", t.score, t.genuine as u8).expect("string write");
    }
    s
}

pub fn det_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("threshold,far,frr\n");
    for (t, far, frr) in rows {
        writeln!(s, "{t},{far},{frr}").expect("string write");
    }
    s
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in points {
        writeln!(s, "{x},{y}").expect("string write");
    }
    s
}
