//! AUC, accuracy and RMSE for binary response prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub acc: f64,
    pub rmse: f64,
}

fn check(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Usage("metric over an empty set".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Usage(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Usage(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted as one half.
///
/// Pairs are counted in integer half-units after one sort, so the result is
/// exact for any input size that fits in `u128`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut half_units: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_units += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok((half_units as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Fraction of predictions on the right side of `threshold`; a score equal to
/// the threshold predicts a correct response.
pub fn acc_at(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1.0))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

pub fn acc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    acc_at(scores, labels, 0.5)
}

pub fn rmse(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check(scores, labels)?;
    let sse: f64 = scores.iter().zip(labels).map(|(s, l)| (s - l) * (s - l)).sum();
    Ok((sse / scores.len() as f64).sqrt())
}

pub fn evaluate(scores: &[f64], labels: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        auc: auc(scores, labels)?,
        acc: acc(scores, labels)?,
        rmse: rmse(scores, labels)?,
    })
}
