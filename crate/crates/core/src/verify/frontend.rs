//! Fixed spectral front-end of the verifier.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FRAME: usize = 256;
pub const HOP: usize = 128;
pub const BINS: usize = FRAME / 2 + 1;

/// `ln(1 + |STFT|^2)` of Hann-windowed frames, shaped `[BINS x frames]`.
pub fn log_spectrogram(samples: &[f64]) -> Result<Tensor> {
    if samples.len() < FRAME {
        return Err(Error::Insufficient(format!(
            "{} samples, the verifier needs at least {FRAME}",
            samples.len()
        )));
    }
    let frames = 1 + (samples.len() - FRAME) / HOP;
    let window: Vec<f64> = (0..FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(FRAME);
    let mut out = vec![0.0; BINS * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME];
    for f in 0..frames {
        let chunk = &samples[f * HOP..f * HOP + FRAME];
        for ((b, x), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(BINS).enumerate() {
            out[k * frames + f] = c.norm_sqr().ln_1p();
        }
    }
    Tensor::new(vec![BINS, frames], out)
}
