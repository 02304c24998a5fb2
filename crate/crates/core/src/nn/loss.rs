use crate::data::ClassWeights;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Class-weighted binary cross-entropy,
/// `-mean_i w(y_i) [y_i ln p_i + (1 - y_i) ln(1 - p_i)]`, and its gradient in `p`.
///
/// The gradient is taken at the clamped probability.
pub fn weighted_bce(probs: &[f64], labels: &[u8], weights: &ClassWeights) -> (f64, Vec<f64>) {
    assert_eq!(probs.len(), labels.len(), "probabilities and labels differ in length");
    let n = probs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let w = weights.weight(y);
        if y == 1 {
            loss -= w * p.ln();
            grad.push(-w / (p * n));
        } else {
            loss -= w * (1.0 - p).ln();
            grad.push(w / ((1.0 - p) * n));
        }
    }
    (loss / n, grad)
}

/// The loss alone.
pub fn weighted_bce_loss(probs: &[f64], labels: &[u8], weights: &ClassWeights) -> f64 {
    weighted_bce(probs, labels, weights).0
}

/// Gradient of [`weighted_bce`] with respect to the pre-sigmoid logits: `w(y)(p - y) / n`.
pub fn weighted_bce_logit_grad(probs: &[f64], labels: &[u8], weights: &ClassWeights) -> Vec<f64> {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| weights.weight(y) * (p - y as f64) / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let (loss, _) = weighted_bce(&[1.0, 0.0, 1.0], &[1, 0, 1], &ClassWeights::UNIFORM);
        assert!(loss <= 1e-6);
    }

    #[test]
    fn half_probability_gives_ln2() {
        let (loss, _) = weighted_bce(&[0.5; 4], &[0, 1, 1, 0], &ClassWeights::UNIFORM);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_inputs_stay_finite() {
        let (loss, grad) = weighted_bce(&[0.0, 1.0], &[1, 0], &ClassWeights::UNIFORM);
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn logit_gradient_is_chain_rule_of_prob_gradient() {
        let w = ClassWeights::from_labels(&[0, 0, 0, 1]).unwrap();
        let probs = [0.2, 0.7, 0.4, 0.9];
        let labels = [0, 1, 0, 1];
        let (_, dp) = weighted_bce(&probs, &labels, &w);
        let dz = weighted_bce_logit_grad(&probs, &labels, &w);
        for i in 0..4 {
            let chained = dp[i] * probs[i] * (1.0 - probs[i]);
            assert!((chained - dz[i]).abs() < 1e-14);
        }
    }
}
