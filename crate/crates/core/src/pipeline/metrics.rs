//! Ranking and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub accuracy: f64,
    /// `None` for classes without positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub n_items: usize,
}

/// Non-interpolated AP: mean precision at the rank of each positive. Items are
/// ranked by descending score, ties by ascending index. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

/// `scores` and `labels` are `n` rows of `C` columns.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
) -> Result<(f64, Vec<Option<f64>>)> {
    if scores.len() != labels.len() || scores.iter().zip(labels).any(|(s, l)| s.len() != l.len()) {
        return Err(Error::Metric(
            "score and label tables differ in shape".into(),
        ));
    }
    let c = scores.first().map_or(0, Vec::len);
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let p: Vec<bool> = labels.iter().map(|r| r[k]).collect();
            average_precision(&s, &p)
        })
        .collect();
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::Metric("no class has a positive example".into()));
    }
    Ok((
        included.iter().sum::<f64>() / included.len() as f64,
        per_class,
    ))
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| argmax(s) == y)
        .count();
    correct as f64 / scores.len() as f64
}
