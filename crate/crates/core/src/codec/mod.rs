//! Waveforms, mu-law companding and quantization to the categorical domain
//! the vocoder predicts over, plus waveform file I/O.

mod mulaw;
pub mod wav;

pub use mulaw::{MuLaw, QuantizedWaveform, Waveform};
