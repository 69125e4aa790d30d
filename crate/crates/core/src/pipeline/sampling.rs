//! Inverse-frequency class weights and weighted sampling without replacement.

use log::warn;
use rand::Rng;

use crate::error::{Error, Result};

pub const CLASS_WEIGHT_EPS: f64 = 0.01;

/// `w_c = 1000 / (clips containing c + 0.01)`.
pub fn class_weights(labels: &[Vec<usize>], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for ls in labels {
        for &c in ls {
            counts[c] += 1;
        }
    }
    counts
        .iter()
        .map(|&n| 1000.0 / (n as f64 + CLASS_WEIGHT_EPS))
        .collect()
}

/// Sum of the weights of each instance's labels; unlabeled instances get 0.
pub fn instance_weights(labels: &[Vec<usize>], class_weights: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = labels
        .iter()
        .map(|ls| ls.iter().map(|&c| class_weights[c]).sum())
        .collect();
    let empty = w.iter().filter(|&&x| x == 0.0).count();
    if empty > 0 {
        warn!("{empty} unlabeled instances get zero sampling weight");
    }
    w
}

/// `k` distinct indices drawn with probability proportional to weight, via
/// exponential keys `−ln(u)/w` (the `k` smallest win).
pub fn weighted_sample_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Sampling(format!(
            "weight {w} is not a finite non-negative number"
        )));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if k > positive {
        return Err(Error::Sampling(format!(
            "cannot draw {k} from {positive} positive-weight instances"
        )));
    }
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
            (-u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Index list in which each class with fewer than `fraction · count(reference)`
/// single-label clips is repeated up to that size.
pub fn balance_expand(labels: &[Vec<usize>], reference: usize, fraction: f64) -> Vec<usize> {
    let n_classes = labels
        .iter()
        .flatten()
        .copied()
        .max()
        .map_or(0, |m| m + 1)
        .max(reference + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, ls) in labels.iter().enumerate() {
        if let Some(&c) = ls.first() {
            by_class[c].push(i);
        }
    }
    let target = (fraction * by_class[reference].len() as f64).round() as usize;
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for (c, members) in by_class.iter().enumerate() {
        if c == reference || members.is_empty() {
            continue;
        }
        let mut extra = target.saturating_sub(members.len());
        let mut it = members.iter().cycle();
        while extra > 0 {
            out.push(*it.next().unwrap());
            extra -= 1;
        }
    }
    out
}
