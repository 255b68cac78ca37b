use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-interpolated average precision: the mean of precision at the rank of
/// each positive, ranking by descending score with ties kept in input order.
///
/// Returns `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            op: "average_precision",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable, so equal scores keep their input order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| total / hits as f64))
}

/// Per-class AP over a score matrix (`probs[video][class]`), averaged over
/// classes that have at least one positive.
pub fn mean_average_precision(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match average_precision(&scores, &positives)? {
            Some(ap) => {
                sum += ap;
                counted += 1;
            }
            None => log::warn!("class {c} has no positives; excluded from mAP"),
        }
    }
    if counted == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / counted as f64)
}

/// Aggregate results of one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub videos: usize,
    pub map: f64,
    pub accuracy: f64,
    /// Fraction of processed steps with the tier-1 / tier-2 gate on.
    pub usage: [f64; 2],
    /// `1 - usage`.
    pub skip_ratio: [f64; 2],
    pub mean_gflops: f64,
    /// Processed steps over all videos.
    pub steps: usize,
}
