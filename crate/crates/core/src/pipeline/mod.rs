//! Experiment orchestration: configuration, artifact layout, the stage
//! commands and the verification-based evaluation.

mod config;
mod eval;
mod gradcheck;
mod layout;
mod stages;

pub use config::*;
pub use eval::*;
pub use gradcheck::*;
pub use layout::*;
pub use stages::*;
