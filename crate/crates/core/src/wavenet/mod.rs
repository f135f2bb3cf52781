//! Conditional WaveNet with a speaker-embedding table, transposed-conv
//! upsampling of local features, gated residual blocks and a categorical
//! output head.

mod config;
mod model;
mod sampler;
mod train;

pub use config::WaveNetConfig;
pub use model::{
    block_param, local_features, PreparedUtterance, WaveNet, Window, HEAD_BIAS1, HEAD_BIAS2, HEAD_CONV1, HEAD_CONV2,
    INPUT_EMBED, SPEAKER_TABLE, UPSAMPLE,
};
pub use sampler::{draw_class, sample, IncrementalSampler};
pub use train::{
    load_train_state, optimize_step, random_window, save_train_state, train_multispeaker, TrainConfig, TrainState,
};

use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor};
use crate::error::Result;

/// Finite-difference check of the full NLL on `u` with embedding row 0.
pub fn nll_grad_check(
    model: &WaveNet,
    params: &crate::autodiff::ParamStore,
    u: &PreparedUtterance,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let window = Window::full(u, model.config.quantization)?;
    grad_check(
        params,
        |p| {
            let mut tape = Tape::new();
            let e = model.table_embedding(&mut tape, p, 0)?;
            let loss = model.nll(&mut tape, p, &window, e)?;
            Ok((tape.scalar(loss), tape.backward(loss)?))
        },
        eps,
        probes,
        seed,
    )
}

/// Embedding vector stored in row `row` of the speaker table.
pub fn table_row(params: &crate::autodiff::ParamStore, row: usize) -> Result<Vec<f64>> {
    let t: &Tensor = params.tensor(SPEAKER_TABLE)?;
    if row >= t.shape()[0] {
        return Err(crate::Error::OutOfRange {
            what: "speaker row",
            detail: format!("{row} not in [0, {})", t.shape()[0]),
        });
    }
    Ok(t.row(row).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavenet::model::tests::{prepared, random_params};

    #[test]
    fn full_nll_on_64_samples_matches_finite_differences() {
        let model = WaveNet::new(WaveNetConfig::default()).unwrap();
        let params = random_params(&model, 21);
        let u = prepared(&model.config, 1, 8);
        assert_eq!(u.len(), 64);
        let r = nll_grad_check(&model, &params, &u, 1e-4, 20, 3).unwrap();
        assert!(r.passes(1e-4), "{:?}", r.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)));
    }
}
