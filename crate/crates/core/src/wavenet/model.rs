use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::WaveNetConfig;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::codec::MuLaw;
use crate::corpus::{normalize_f0, SpeakerF0Stats, Utterance};
use crate::error::{Error, Result};
use crate::seed;

pub const INPUT_EMBED: &str = "input.embed";
pub const UPSAMPLE: &str = "upsample.kernel";
pub const SPEAKER_TABLE: &str = "speaker.table";
pub const HEAD_CONV1: &str = "head.conv1";
pub const HEAD_BIAS1: &str = "head.bias1";
pub const HEAD_CONV2: &str = "head.conv2";
pub const HEAD_BIAS2: &str = "head.bias2";

pub fn block_param(i: usize, part: &str) -> String {
    format!("block{i}.{part}")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

fn kaiming(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    uniform(rng, shape, (6.0 / fan_in as f64).sqrt())
}

/// Frame-rate local conditioning `[P + 2 x F]`: phoneme one-hot rows, then
/// normalized log f0, then the voicing flag.
pub fn local_features(codes: &[u16], f0_norm: &[f64], voiced: &[bool], phoneme_classes: usize) -> Result<Tensor> {
    let f = codes.len();
    if f0_norm.len() != f || voiced.len() != f {
        return Err(Error::shape(
            "local_features",
            format!("{f} codes, {} f0 values, {} voicing flags", f0_norm.len(), voiced.len()),
        ));
    }
    let mut data = vec![0.0; (phoneme_classes + 2) * f];
    for (t, &c) in codes.iter().enumerate() {
        if c as usize >= phoneme_classes {
            return Err(Error::OutOfRange {
                what: "phoneme code",
                detail: format!("{c} not in [0, {phoneme_classes})"),
            });
        }
        data[c as usize * f + t] = 1.0;
        data[phoneme_classes * f + t] = f0_norm[t];
        data[(phoneme_classes + 1) * f + t] = if voiced[t] { 1.0 } else { 0.0 };
    }
    Tensor::new(vec![phoneme_classes + 2, f], data)
}

/// Utterance converted to model inputs: quantized targets plus local
/// conditioning normalized with the given speaker statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedUtterance {
    pub id: String,
    pub speaker_id: u32,
    pub classes: Vec<usize>,
    pub local: Tensor,
    pub frame_stride: usize,
}

impl PreparedUtterance {
    pub fn new(u: &Utterance, stats: &SpeakerF0Stats, codec: &MuLaw, cfg: &WaveNetConfig) -> Result<Self> {
        if u.frame_stride != cfg.frame_stride {
            return Err(Error::Config(format!(
                "utterance {} has frame stride {}, model expects {}",
                u.id, u.frame_stride, cfg.frame_stride
            )));
        }
        let (f0_norm, voiced) = normalize_f0(&u.f0_hz, stats)?;
        Ok(Self {
            id: u.id.clone(),
            speaker_id: u.speaker_id,
            classes: codec.encode(&u.waveform)?.as_indices(),
            local: local_features(&u.phoneme_codes, &f0_norm, &voiced, cfg.phoneme_classes)?,
            frame_stride: u.frame_stride,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.local.shape()[1]
    }
}

/// A contiguous stretch of an utterance fed to the network.
///
/// The network consumes `prev` (the sample preceding each target) and the
/// upsampled `local` frames starting at sample `offset`. Only targets from
/// `loss_from` on contribute to the loss, so the leading part can serve as
/// receptive-field history.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub prev: Vec<usize>,
    pub targets: Vec<usize>,
    pub local: Tensor,
    pub offset: usize,
    pub loss_from: usize,
}

impl Window {
    /// The whole utterance, starting from the silence class.
    pub fn full(u: &PreparedUtterance, q: u16) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::Empty("utterance"));
        }
        if u.frames() * u.frame_stride != u.len() {
            return Err(Error::shape(
                "window",
                format!("{} frames x {} != {} samples", u.frames(), u.frame_stride, u.len()),
            ));
        }
        let mut prev = Vec::with_capacity(u.len());
        prev.push(q as usize / 2);
        prev.extend_from_slice(&u.classes[..u.len() - 1]);
        Ok(Self {
            prev,
            targets: u.classes.clone(),
            local: u.local.clone(),
            offset: 0,
            loss_from: 0,
        })
    }

    /// Targets `start..start + len` preceded by up to `history` context
    /// samples. One extra frame on each side keeps the upsampled
    /// conditioning identical to that of the full utterance.
    pub fn crop(u: &PreparedUtterance, start: usize, len: usize, history: usize, q: u16) -> Result<Self> {
        if len == 0 || start + len > u.len() {
            return Err(Error::shape(
                "window",
                format!("crop {start}..{} of {} samples", start + len, u.len()),
            ));
        }
        let s = u.frame_stride;
        let a = start - history.min(start);
        let b = start + len;
        let fa = (a / s).saturating_sub(1);
        let fb = (b.div_ceil(s) + 1).min(u.frames());
        let frames = u.frames();
        let mut local = Vec::with_capacity(u.local.shape()[0] * (fb - fa));
        for row in u.local.data().chunks(frames) {
            local.extend_from_slice(&row[fa..fb]);
        }
        let prev = (a..b)
            .map(|t| if t == 0 { q as usize / 2 } else { u.classes[t - 1] })
            .collect();
        Ok(Self {
            prev,
            targets: u.classes[a..b].to_vec(),
            local: Tensor::new(vec![u.local.shape()[0], fb - fa], local)?,
            offset: a - fa * s,
            loss_from: start - a,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// The conditional WaveNet: parameter layout, initialization and the
/// teacher-forced forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveNet {
    pub config: WaveNetConfig,
}

impl WaveNet {
    pub fn new(config: WaveNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Fresh parameters. The output head's last layer starts at zero so the
    /// untrained model predicts the uniform distribution exactly.
    pub fn init_params(&self, seed_value: u64) -> Result<ParamStore> {
        let c = &self.config;
        let (r, s, q, d, cl, k) = (
            c.residual_channels,
            c.skip_channels,
            c.quantization as usize,
            c.embedding_dim,
            c.local_channels(),
            c.kernel_width,
        );
        let mut rng = seed::rng(seed_value, "wavenet-init", 0);
        let mut p = ParamStore::new();
        // A one-hot input has a single active entry; unit-variance columns.
        p.insert(INPUT_EMBED, uniform(&mut rng, &[r, q], 3f64.sqrt()), true)?;
        p.insert(UPSAMPLE, kaiming(&mut rng, &[cl, cl, c.upsample_width()], 2 * cl), true)?;
        let layers = c.layers();
        for i in 0..layers {
            p.insert(block_param(i, "filter"), kaiming(&mut rng, &[r, r, k], r * k), true)?;
            p.insert(block_param(i, "gate"), kaiming(&mut rng, &[r, r, k], r * k), true)?;
            p.insert(block_param(i, "cond_filter"), kaiming(&mut rng, &[r, cl, 1], cl), true)?;
            p.insert(block_param(i, "cond_gate"), kaiming(&mut rng, &[r, cl, 1], cl), true)?;
            p.insert(block_param(i, "spk_filter"), kaiming(&mut rng, &[r, d], d), true)?;
            p.insert(block_param(i, "spk_gate"), kaiming(&mut rng, &[r, d], d), true)?;
            if i + 1 < layers {
                p.insert(block_param(i, "residual"), kaiming(&mut rng, &[r, r, 1], r), true)?;
            }
            p.insert(block_param(i, "skip"), kaiming(&mut rng, &[s, r, 1], r), true)?;
        }
        p.insert(HEAD_CONV1, kaiming(&mut rng, &[s, s, 1], s), true)?;
        p.insert(HEAD_BIAS1, Tensor::zeros(&[s]), true)?;
        p.insert(HEAD_CONV2, Tensor::zeros(&[q, s, 1]), true)?;
        p.insert(HEAD_BIAS2, Tensor::zeros(&[q]), true)?;
        if c.num_speakers > 0 {
            p.insert(SPEAKER_TABLE, uniform(&mut rng, &[c.num_speakers, d], 3f64.sqrt()), true)?;
        }
        Ok(p)
    }

    /// Row `speaker` of the embedding table.
    pub fn table_embedding(&self, tape: &mut Tape, params: &ParamStore, speaker: usize) -> Result<Var> {
        let table = tape.param(params, SPEAKER_TABLE)?;
        tape.embedding_lookup(table, speaker)
    }

    /// Transposed-convolution upsampling of `[P + 2 x F]` frames to
    /// `[P + 2 x F * stride]` samples.
    pub fn upsample(&self, tape: &mut Tape, params: &ParamStore, local: &Tensor) -> Result<Var> {
        let (ch, _) = local
            .dims2()
            .ok_or_else(|| Error::shape("upsample", format!("local features {:?}", local.shape())))?;
        if ch != self.config.local_channels() {
            return Err(Error::shape(
                "upsample",
                format!("{ch} local channels, expected {}", self.config.local_channels()),
            ));
        }
        let x = tape.constant(local.clone())?;
        let w = tape.param(params, UPSAMPLE)?;
        tape.transposed_conv1d(x, w, self.config.frame_stride)
    }

    /// Teacher-forced logits `[Q x window.len()]`; column `t` depends only on
    /// `window.prev[..=t]`, i.e. on samples strictly before target `t`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, window: &Window, e: Var) -> Result<Var> {
        let c = &self.config;
        let t = window.len();
        if window.prev.len() != t {
            return Err(Error::shape("forward", format!("{} inputs for {t} targets", window.prev.len())));
        }
        if tape.value(e).len() != c.embedding_dim {
            return Err(Error::shape(
                "forward",
                format!("embedding of length {}, expected {}", tape.value(e).len(), c.embedding_dim),
            ));
        }
        let up = self.upsample(tape, params, &window.local)?;
        let up_len = tape.value(up).shape()[1];
        if window.offset + t > up_len {
            return Err(Error::shape(
                "forward",
                format!("{t} samples at offset {} exceed {up_len} conditioning samples", window.offset),
            ));
        }
        let cond = if window.offset == 0 && up_len == t {
            up
        } else {
            tape.slice_time(up, window.offset, t)?
        };

        let embed = tape.param(params, INPUT_EMBED)?;
        let mut h = tape.gather_columns(embed, &window.prev)?;
        let mut skip: Option<Var> = None;
        let dilations = c.dilations();
        for (i, &d) in dilations.iter().enumerate() {
            let mut paths = Vec::with_capacity(2);
            for part in ["filter", "gate"] {
                let w = tape.param(params, &block_param(i, part))?;
                let a = tape.causal_conv1d(h, w, d)?;
                let wc = tape.param(params, &block_param(i, &format!("cond_{part}")))?;
                let b = tape.causal_conv1d(cond, wc, 1)?;
                let ab = tape.add(a, b)?;
                let ws = tape.param(params, &block_param(i, &format!("spk_{part}")))?;
                let bias = tape.matvec(ws, e)?;
                paths.push(tape.add_bias(ab, bias)?);
            }
            let z = tape.gated_activation(paths[0], paths[1])?;
            let ws = tape.param(params, &block_param(i, "skip"))?;
            let s = tape.causal_conv1d(z, ws, 1)?;
            skip = Some(match skip {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
            if i + 1 < dilations.len() {
                let wr = tape.param(params, &block_param(i, "residual"))?;
                let r = tape.causal_conv1d(z, wr, 1)?;
                h = tape.add(h, r)?;
            }
        }
        let skip = skip.expect("at least one block");
        let a = tape.relu(skip)?;
        let w1 = tape.param(params, HEAD_CONV1)?;
        let b1 = tape.param(params, HEAD_BIAS1)?;
        let a = tape.causal_conv1d(a, w1, 1)?;
        let a = tape.add_bias(a, b1)?;
        let a = tape.relu(a)?;
        let w2 = tape.param(params, HEAD_CONV2)?;
        let b2 = tape.param(params, HEAD_BIAS2)?;
        let a = tape.causal_conv1d(a, w2, 1)?;
        tape.add_bias(a, b2)
    }

    /// Mean negative log-likelihood over the window's loss targets.
    pub fn nll(&self, tape: &mut Tape, params: &ParamStore, window: &Window, e: Var) -> Result<Var> {
        let logits = self.forward(tape, params, window, e)?;
        let n = window.len() - window.loss_from;
        let scored = if window.loss_from == 0 {
            logits
        } else {
            tape.slice_time(logits, window.loss_from, n)?
        };
        tape.softmax_cross_entropy(scored, &window.targets[window.loss_from..])
    }

    /// NLL of a whole utterance under a fixed embedding vector.
    pub fn utterance_nll(&self, params: &ParamStore, u: &PreparedUtterance, e: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let ev = tape.constant(Tensor::vector(e.to_vec()))?;
        let w = Window::full(u, self.config.quantization)?;
        let loss = self.nll(&mut tape, params, &w, ev)?;
        Ok(tape.scalar(loss))
    }
}
