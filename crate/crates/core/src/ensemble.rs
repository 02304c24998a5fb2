//! Soft-voting ensemble of per-model resistance probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities at or above this are called resistant.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Combining weights for the members, in member order. Defaults to equal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights(pub Vec<f64>);

impl EnsembleWeights {
    pub fn equal(n: usize) -> Self {
        EnsembleWeights(vec![1.0; n])
    }
}

/// Weighted mean of member probabilities for each sample.
///
/// `members[m][i]` is model `m`'s probability for sample `i`.
pub fn ensemble_proba(members: &[&[f64]], weights: Option<&EnsembleWeights>) -> Result<Vec<f64>> {
    let Some(first) = members.first() else {
        return Err(Error::Config("ensemble needs at least one member".into()));
    };
    let n = first.len();
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::Input("ensemble members disagree on sample count".into()));
    }
    let w = match weights {
        Some(w) if w.0.len() != members.len() => {
            return Err(Error::Config(format!(
                "{} ensemble weights for {} members",
                w.0.len(),
                members.len()
            )))
        }
        Some(w) => w.0.clone(),
        None => vec![1.0; members.len()],
    };
    let total: f64 = w.iter().sum();
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || !(total > 0.0) {
        return Err(Error::Config("ensemble weights must be non-negative with a positive sum".into()));
    }
    for m in members {
        if let Some(p) = m.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Input(format!("member probability {p} outside [0, 1]")));
        }
    }
    Ok((0..n)
        .map(|i| {
            let s: f64 = members.iter().zip(&w).map(|(m, wm)| wm * m[i]).sum();
            (s / total).clamp(0.0, 1.0)
        })
        .collect())
}

/// Hard labels: 1 (resistant) when the probability is at least [`DECISION_THRESHOLD`].
pub fn classify(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| (p >= DECISION_THRESHOLD) as u8).collect()
}
