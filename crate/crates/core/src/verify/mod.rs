//! Speaker verification: spectrogram front end, d-vector network, metrics
//! and exports.

mod export;
mod frontend;
mod metrics;
mod model;

pub use export::*;
pub use frontend::*;
pub use metrics::*;
pub use model::*;
