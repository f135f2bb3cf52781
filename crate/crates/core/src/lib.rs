//! Few-shot speaker adaptation for a multi-speaker conditional WaveNet.
//!
//! The crate covers the whole desk-scale pipeline: a synthetic multi-speaker
//! corpus, a small reverse-mode autodiff engine, the conditional WaveNet,
//! three adaptation strategies for unseen speakers (embedding fit, full
//! fine-tune, encoder prediction), and a speaker-verification harness that
//! scores adapted voices with EER, DET and ROC.

pub mod adapt;
pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod fsutil;
pub mod pipeline;
pub mod seed;
pub mod verify;
pub mod wavenet;

pub use error::{Error, Result};
