//! Few-shot adaptation to an unseen speaker: embedding-only fitting, full
//! fine-tuning with early stopping, and encoder prediction.

mod encoder;
mod methods;
mod voice;

pub use encoder::*;
pub use methods::*;
pub use voice::*;
