use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Per-speaker partition of demonstration utterances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    /// Adaptation utterances excluding the holdout.
    pub adaptation: Vec<String>,
    pub holdout: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    /// Adaptation set including its holdout part.
    pub fn all_adaptation(&self) -> Vec<String> {
        self.adaptation.iter().chain(&self.holdout).cloned().collect()
    }
}

/// Smallest count that covers `fraction` of `n`, with a tolerance so that
/// exact products such as `0.1 * 20` do not round up.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn split_corpus(ids: &[String], test_count: usize, holdout_fraction: f64, seed: u64) -> Result<CorpusSplit> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::OutOfRange {
            what: "holdout fraction",
            detail: format!("{holdout_fraction} not in [0, 1)"),
        });
    }
    if test_count == 0 {
        return Err(Error::Config("test set must be nonempty".into()));
    }
    let rest = ids.len().saturating_sub(test_count);
    let n_hold = holdout_count(rest, holdout_fraction);
    if ids.len() < test_count + 1 || rest <= n_hold {
        return Err(Error::Insufficient(format!(
            "{} utterances cannot fill test={test_count} plus a holdout fraction {holdout_fraction}",
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut seed::rng(seed, "split", 0));
    let test = order[..test_count].to_vec();
    let holdout = order[test_count..test_count + n_hold].to_vec();
    let adaptation = order[test_count + n_hold..].to_vec();
    Ok(CorpusSplit {
        adaptation,
        holdout,
        test,
    })
}
