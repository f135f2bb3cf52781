//! Enrollment, trial construction and threshold-sweep error metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentCentroid {
    pub speaker_id: u32,
    pub centroid: Vec<f64>,
    pub count: usize,
}

/// Normalized mean of a speaker's d-vectors.
pub fn enroll(speaker_id: u32, dvectors: &[Vec<f64>]) -> Result<EnrollmentCentroid> {
    let first = dvectors.first().ok_or(Error::Empty("no d-vectors to enroll"))?;
    let dim = first.len();
    if dvectors.iter().any(|d| d.len() != dim) {
        return Err(Error::shape("enroll", "d-vectors of different dimensions"));
    }
    let mut mean = vec![0.0; dim];
    for d in dvectors {
        mean.iter_mut().zip(d).for_each(|(m, x)| *m += x);
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 * dvectors.len() as f64 {
        return Err(Error::Degenerate(format!("centroid of speaker {speaker_id} has zero norm")));
    }
    Ok(EnrollmentCentroid {
        speaker_id,
        centroid: mean.iter().map(|v| v / norm).collect(),
        count: dvectors.len(),
    })
}

pub fn cosine_score(v: &[f64], c: &EnrollmentCentroid) -> f64 {
    v.iter().zip(&c.centroid).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub score: f64,
    pub genuine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingPolicy {
    /// Each probe against its own speaker's centroid.
    Own,
    /// Each probe against one random other speaker.
    Other,
    /// Each probe against one uniformly random enrolled speaker.
    Random,
    /// Each probe against every enrolled speaker.
    All,
}

/// Scores `(speaker, d-vector)` probes against centroids.
pub fn build_trials(
    centroids: &[EnrollmentCentroid],
    probes: &[(u32, Vec<f64>)],
    policy: PairingPolicy,
    seed_value: u64,
) -> Result<Vec<Trial>> {
    if centroids.len() < 2 {
        return Err(Error::Insufficient("trials need at least 2 enrolled speakers".into()));
    }
    let mut rng = seed::rng(seed_value, "trials", 0);
    let mut trials = Vec::new();
    for (speaker, v) in probes {
        let own = centroids.iter().position(|c| c.speaker_id == *speaker);
        let picks: Vec<usize> = match policy {
            PairingPolicy::Own => {
                vec![own.ok_or_else(|| Error::Missing(format!("centroid for speaker {speaker}")))?]
            }
            PairingPolicy::Other => {
                let others: Vec<usize> = (0..centroids.len()).filter(|&i| Some(i) != own).collect();
                vec![others[rng.random_range(0..others.len())]]
            }
            PairingPolicy::Random => vec![rng.random_range(0..centroids.len())],
            PairingPolicy::All => (0..centroids.len()).collect(),
        };
        for i in picks {
            trials.push(Trial {
                score: cosine_score(v, &centroids[i]),
                genuine: centroids[i].speaker_id == *speaker,
            });
        }
    }
    if trials.iter().any(|t| !t.score.is_finite()) {
        return Err(Error::NonFinite("trial score".into()));
    }
    Ok(trials)
}

fn label_counts(trials: &[Trial]) -> Result<(usize, usize)> {
    let g = trials.iter().filter(|t| t.genuine).count();
    let i = trials.len() - g;
    if g == 0 || i == 0 {
        return Err(Error::Degenerate(format!(
            "trial set needs both labels ({g} genuine, {i} impostor)"
        )));
    }
    Ok((g, i))
}

/// `(threshold, FAR, FRR)` at every distinct score, ascending, followed by
/// `(+inf, 0, 1)`. A trial is accepted when `score >= threshold`.
fn sweep(trials: &[Trial]) -> Result<Vec<(f64, f64, f64)>> {
    let (n_gen, n_imp) = label_counts(trials)?;
    let mut sorted: Vec<Trial> = trials.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut out = Vec::new();
    // counts of trials strictly below the current threshold
    let (mut gen_below, mut imp_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        out.push((
            t,
            (n_imp - imp_below) as f64 / n_imp as f64,
            gen_below as f64 / n_gen as f64,
        ));
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].genuine {
                gen_below += 1;
            } else {
                imp_below += 1;
            }
            i += 1;
        }
    }
    out.push((f64::INFINITY, 0.0, 1.0));
    Ok(out)
}

/// Equal error rate and its threshold. Between the last threshold where
/// FAR > FRR and the first where FAR <= FRR, both rates are interpolated
/// linearly and the crossing is returned; the threshold is interpolated the
/// same way, capped at the largest score.
pub fn eer(trials: &[Trial]) -> Result<(f64, f64)> {
    let pts = sweep(trials)?;
    let i = pts
        .iter()
        .position(|&(_, far, frr)| far <= frr)
        .expect("the final point has FAR 0 and FRR 1");
    let (t1, far1, frr1) = pts[i];
    if far1 == frr1 {
        let t = if t1.is_finite() { t1 } else { pts[i - 1].0 };
        return Ok((far1, t));
    }
    // pts[0] has FAR 1 and FRR 0, so i >= 1 here
    let (t0, far0, frr0) = pts[i - 1];
    let d0 = far0 - frr0;
    let d1 = far1 - frr1;
    let alpha = d0 / (d0 - d1);
    let rate = far0 + alpha * (far1 - far0);
    let threshold = if t1.is_finite() { t0 + alpha * (t1 - t0) } else { t0 };
    Ok((rate, threshold))
}

/// `(FAR, FRR)` at every distinct threshold plus the two trivial endpoints.
pub fn det_curve(trials: &[Trial]) -> Result<Vec<(f64, f64)>> {
    Ok(sweep(trials)?.into_iter().map(|(_, far, frr)| (far, frr)).collect())
}

/// Thresholds with their `(FAR, FRR)`, for CSV export.
pub fn det_table(trials: &[Trial]) -> Result<Vec<(f64, f64, f64)>> {
    sweep(trials)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of `score >= t` as a detector of the positive (real) class against
/// the negative (generated) class, with trapezoidal AUC. The area is summed
/// in integer counts, so it equals the Mann-Whitney statistic exactly.
pub fn roc(positive: &[f64], negative: &[f64]) -> Result<RocCurve> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Empty("ROC needs both real and generated scores"));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite("ROC score".into()));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of 1 / (np * nn)
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (fp0, tp0) = (fp, tp);
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp0 + tp)) as u128;
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    let auc = area2 as f64 / (2.0 * np * nn);
    Ok(RocCurve { points, auc })
}
