//! Per-modality relevance: RRMC and TRMC coefficients and the bias gap.
//!
//! Both coefficients share one formula: the mean of the sigmoid gate output
//! over a modality's latent segment, normalized so the coefficients sum to 1.
//! RRMC uses the reconstruction gate, TRMC the prediction gate; the bias gap
//! is the squared distance between the two coefficient vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("total attention mass is zero")]
    ZeroAttention,
    #[error("coefficient vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("boundaries do not partition the gate output (len {len}, last boundary {last})")]
    BadBoundaries { len: usize, last: usize },
    #[error("empty dataset")]
    EmptyDataset,
}

/// Where the coefficients in a report were aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportScope {
    PerExample,
    DatasetMean,
}

/// RRMC/TRMC vectors plus their mismatch, as reported per model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub modality_names: Vec<String>,
    pub rrmc: Vec<f64>,
    pub trmc: Vec<f64>,
    pub gap: f64,
    pub scope: ReportScope,
}

impl RelevanceReport {
    pub fn new(
        modality_names: Vec<String>,
        rrmc: Vec<f64>,
        trmc: Vec<f64>,
        scope: ReportScope,
    ) -> Result<Self, RelevanceError> {
        let gap = bias_gap(&rrmc, &trmc)?;
        Ok(Self { modality_names, rrmc, trmc, gap, scope })
    }
}

/// Normalized per-segment means of a sigmoid gate output.
///
/// `boundaries` are the segment end offsets (ascending, last = `gate.len()`).
pub fn modality_coefficients(
    gate_sigmoid: &[f64],
    boundaries: &[usize],
) -> Result<Vec<f64>, RelevanceError> {
    let last = boundaries.last().copied().unwrap_or(0);
    if last != gate_sigmoid.len() || boundaries.is_empty() {
        return Err(RelevanceError::BadBoundaries { len: gate_sigmoid.len(), last });
    }
    let mut means = Vec::with_capacity(boundaries.len());
    let mut start = 0;
    for &end in boundaries {
        let seg = &gate_sigmoid[start..end];
        if seg.is_empty() {
            return Err(RelevanceError::BadBoundaries { len: gate_sigmoid.len(), last });
        }
        means.push(seg.iter().sum::<f64>() / seg.len() as f64);
        start = end;
    }
    normalize_means(&means)
}

/// Normalize raw segment means into coefficients summing to 1.
pub fn normalize_means(means: &[f64]) -> Result<Vec<f64>, RelevanceError> {
    let total: f64 = means.iter().sum();
    if total <= 0.0 {
        // Unreachable for sigmoid outputs, guarded anyway.
        return Err(RelevanceError::ZeroAttention);
    }
    Ok(means.iter().map(|m| m / total).collect())
}

/// `sum_i (trmc_i - rrmc_i)^2`, in `[0, 2]` for coefficient vectors.
pub fn bias_gap(rrmc: &[f64], trmc: &[f64]) -> Result<f64, RelevanceError> {
    if rrmc.len() != trmc.len() {
        return Err(RelevanceError::LengthMismatch(rrmc.len(), trmc.len()));
    }
    Ok(rrmc
        .iter()
        .zip(trmc)
        .map(|(a, b)| {
            let d = (b - a) as f64;
            d * d
        })
        .sum::<f64>() as f64)
}

/// Mean of per-example coefficient vectors.
pub fn mean_coefficients(per_example: &[Vec<f64>]) -> Result<Vec<f64>, RelevanceError> {
    if per_example.is_empty() {
        return Err(RelevanceError::EmptyDataset);
    }
    let n = per_example[0].len();
    let mut acc = vec![0.0f64; n];
    for row in per_example {
        debug_assert_eq!(row.len(), n);
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    Ok(acc.iter().map(|a| (a / per_example.len() as f64) as f64).collect())
}

/// Evenly spaced segment boundaries for `n` modalities of `seg_len` each.
pub fn even_boundaries(n: usize, seg_len: usize) -> Vec<usize> {
    (1..=n).map(|i| i * seg_len).collect()
}
