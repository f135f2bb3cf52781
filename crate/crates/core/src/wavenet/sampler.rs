//! Sequential generation with per-layer input caches, so each new sample
//! costs one column of every convolution instead of a full forward pass.

use rand::Rng;

use super::model::{block_param, WaveNet, HEAD_BIAS1, HEAD_BIAS2, HEAD_CONV1, HEAD_CONV2, INPUT_EMBED};
use crate::autodiff::kernels::sigmoid;
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::codec::{MuLaw, QuantizedWaveform, Waveform};
use crate::error::{Error, Result};
use crate::seed;

struct Block {
    dilation: usize,
    filter: Vec<f64>,
    gate: Vec<f64>,
    cond_filter: Vec<f64>,
    cond_gate: Vec<f64>,
    bias_filter: Vec<f64>,
    bias_gate: Vec<f64>,
    residual: Option<Vec<f64>>,
    skip: Vec<f64>,
}

/// `out += W x` for row-major `W[rows x cols]`, reading column `tap` of a
/// `[rows x cols x k]` kernel.
fn add_tap(out: &mut [f64], w: &[f64], cols: usize, k: usize, tap: usize, x: &[f64]) {
    for (o, acc) in out.iter_mut().enumerate() {
        let base = o * cols * k + tap;
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            s += w[base + i * k] * xi;
        }
        *acc += s;
    }
}

pub struct IncrementalSampler {
    q: usize,
    r: usize,
    k: usize,
    cl: usize,
    embed: Vec<f64>,
    blocks: Vec<Block>,
    head1: Vec<f64>,
    bias1: Vec<f64>,
    head2: Vec<f64>,
    bias2: Vec<f64>,
    cond: Vec<f64>,
    cond_len: usize,
    /// Inputs seen by each block, time-major `[t x R]`.
    history: Vec<Vec<f64>>,
    t: usize,
}

impl IncrementalSampler {
    /// Prepares generation for the conditioning frames `local` and the fixed
    /// speaker embedding `e`.
    pub fn new(model: &WaveNet, params: &ParamStore, local: &Tensor, e: &[f64]) -> Result<Self> {
        let c = &model.config;
        if e.len() != c.embedding_dim {
            return Err(Error::shape(
                "sampler",
                format!("embedding of length {}, expected {}", e.len(), c.embedding_dim),
            ));
        }
        let mut tape = Tape::new();
        let up = model.upsample(&mut tape, params, local)?;
        let cond = tape.value(up).data().to_vec();
        let cl = c.local_channels();
        let cond_len = cond.len() / cl;
        let get = |name: &str| -> Result<Vec<f64>> { Ok(params.tensor(name)?.data().to_vec()) };
        let spk_bias = |name: &str| -> Result<Vec<f64>> {
            let w = params.tensor(name)?;
            let mut out = vec![0.0; c.residual_channels];
            crate::autodiff::kernels::matvec(c.residual_channels, c.embedding_dim, w.data(), e, &mut out);
            Ok(out)
        };
        let layers = c.layers();
        let blocks = c
            .dilations()
            .into_iter()
            .enumerate()
            .map(|(i, dilation)| {
                Ok(Block {
                    dilation,
                    filter: get(&block_param(i, "filter"))?,
                    gate: get(&block_param(i, "gate"))?,
                    cond_filter: get(&block_param(i, "cond_filter"))?,
                    cond_gate: get(&block_param(i, "cond_gate"))?,
                    bias_filter: spk_bias(&block_param(i, "spk_filter"))?,
                    bias_gate: spk_bias(&block_param(i, "spk_gate"))?,
                    residual: if i + 1 < layers {
                        Some(get(&block_param(i, "residual"))?)
                    } else {
                        None
                    },
                    skip: get(&block_param(i, "skip"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            q: c.quantization as usize,
            r: c.residual_channels,
            k: c.kernel_width,
            cl,
            embed: get(INPUT_EMBED)?,
            history: vec![Vec::new(); blocks.len()],
            blocks,
            head1: get(HEAD_CONV1)?,
            bias1: get(HEAD_BIAS1)?,
            head2: get(HEAD_CONV2)?,
            bias2: get(HEAD_BIAS2)?,
            cond,
            cond_len,
            t: 0,
        })
    }

    /// Number of samples the conditioning covers.
    pub fn capacity(&self) -> usize {
        self.cond_len
    }

    /// Logits for the next position given the previous sample's class.
    pub fn step(&mut self, prev: usize) -> Result<Vec<f64>> {
        let t = self.t;
        if t >= self.cond_len {
            return Err(Error::OutOfRange {
                what: "sample position",
                detail: format!("{t} beyond {} conditioned samples", self.cond_len),
            });
        }
        if prev >= self.q {
            return Err(Error::OutOfRange {
                what: "input class",
                detail: format!("{prev} not in [0, {})", self.q),
            });
        }
        let (r, k, cl) = (self.r, self.k, self.cl);
        let mut h: Vec<f64> = (0..r).map(|o| self.embed[o * self.q + prev]).collect();
        let c_t: Vec<f64> = (0..cl).map(|j| self.cond[j * self.cond_len + t]).collect();
        let s_ch = self.bias1.len();
        let mut skip = vec![0.0; s_ch];
        for (b, hist) in self.blocks.iter().zip(self.history.iter_mut()) {
            hist.extend_from_slice(&h);
            let mut f = b.bias_filter.clone();
            let mut g = b.bias_gate.clone();
            for tap in 0..k {
                let back = (k - 1 - tap) * b.dilation;
                if back > t {
                    continue;
                }
                let x = &hist[(t - back) * r..(t - back + 1) * r];
                add_tap(&mut f, &b.filter, r, k, tap, x);
                add_tap(&mut g, &b.gate, r, k, tap, x);
            }
            add_tap(&mut f, &b.cond_filter, cl, 1, 0, &c_t);
            add_tap(&mut g, &b.cond_gate, cl, 1, 0, &c_t);
            let z: Vec<f64> = f.iter().zip(&g).map(|(a, bb)| a.tanh() * sigmoid(*bb)).collect();
            add_tap(&mut skip, &b.skip, r, 1, 0, &z);
            if let Some(res) = &b.residual {
                add_tap(&mut h, res, r, 1, 0, &z);
            }
        }
        skip.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut a = self.bias1.clone();
        add_tap(&mut a, &self.head1, s_ch, 1, 0, &skip);
        a.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut logits = self.bias2.clone();
        add_tap(&mut logits, &self.head2, s_ch, 1, 0, &a);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler logits at position {t}")));
        }
        self.t += 1;
        Ok(logits)
    }
}

/// Draws a class from `softmax(logits / temperature)`; temperature 0 takes
/// the first maximum.
pub fn draw_class(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> Result<usize> {
    if temperature < 0.0 || !temperature.is_finite() {
        return Err(Error::OutOfRange {
            what: "temperature",
            detail: format!("{temperature} is not a finite non-negative number"),
        });
    }
    let (argmax, max) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    if temperature == 0.0 {
        return Ok(argmax);
    }
    let weights: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(argmax)
}

/// Autoregressive generation of `len` samples.
pub fn sample(
    model: &WaveNet,
    params: &ParamStore,
    local: &Tensor,
    e: &[f64],
    len: usize,
    temperature: f64,
    seed_value: u64,
    sample_rate: u32,
) -> Result<Waveform> {
    let mut sampler = IncrementalSampler::new(model, params, local, e)?;
    if len > sampler.capacity() {
        return Err(Error::shape(
            "sample",
            format!("{len} samples requested, conditioning covers {}", sampler.capacity()),
        ));
    }
    let q = model.config.quantization;
    let mut rng = seed::rng(seed_value, "sample", 0);
    let mut prev = q as usize / 2;
    let mut classes = Vec::with_capacity(len);
    for _ in 0..len {
        let logits = sampler.step(prev)?;
        prev = draw_class(&logits, temperature, &mut rng)?;
        classes.push(prev as u16);
    }
    let codec = MuLaw::new(model.config.mu, q)?;
    codec.decode(&QuantizedWaveform {
        classes,
        sample_rate,
        q,
    })
}
