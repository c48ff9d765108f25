//! Loss values on probability rows. Training uses the fused graph ops
//! ([`Graph::softmax_cross_entropy`], [`Graph::sigmoid_binary_cross_entropy`]);
//! these functions give the same quantities for reporting and checking.
//!
//! [`Graph::softmax_cross_entropy`]: crate::tensor::Graph::softmax_cross_entropy
//! [`Graph::sigmoid_binary_cross_entropy`]: crate::tensor::Graph::sigmoid_binary_cross_entropy

use crate::tensor::LOG_EPSILON;

fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_EPSILON).ln()
}

/// `-log p[label]`.
pub fn cross_entropy_loss(probs: &[f64], label: usize) -> f64 {
    -clamped_ln(probs[label])
}

/// `-sum_j [l_j log p_j + (1 - l_j) log(1 - p_j)]`.
pub fn binary_loss(probs: &[f64], labels: &[usize]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if labels.contains(&j) {
                -clamped_ln(p)
            } else {
                -clamped_ln(1.0 - p)
            }
        })
        .sum()
}

/// Mean of [`cross_entropy_loss`] over a batch.
pub fn mean_cross_entropy<'a>(batch: impl IntoIterator<Item = (&'a [f64], usize)>) -> f64 {
    let (total, count) = batch
        .into_iter()
        .fold((0.0, 0usize), |(t, c), (p, l)| (t + cross_entropy_loss(p, l), c + 1));
    total / count as f64
}

/// Mean of [`binary_loss`] over a batch.
pub fn mean_binary_loss<'a>(batch: impl IntoIterator<Item = (&'a [f64], &'a [usize])>) -> f64 {
    let (total, count) = batch
        .into_iter()
        .fold((0.0, 0usize), |(t, c), (p, l)| (t + binary_loss(p, l), c + 1));
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_costs_nothing() {
        assert_eq!(cross_entropy_loss(&[0.0, 1.0, 0.0], 1), 0.0);
    }

    #[test]
    fn uniform_costs_log_c() {
        let p = [0.25; 4];
        assert!((cross_entropy_loss(&p, 3) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn batch_mean_matches_hand_values() {
        let a = [0.7, 0.2, 0.1];
        let b = [0.1, 0.6, 0.3];
        let expected = (-(0.7f64).ln() - (0.3f64).ln()) / 2.0;
        let got = mean_cross_entropy([(&a[..], 0), (&b[..], 2)]);
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn binary_half_probabilities() {
        let p = [0.5; 7];
        assert!((binary_loss(&p, &[1, 4]) - 7.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn binary_all_positive_near_one() {
        let p = [1.0 - 1e-12; 3];
        assert!(binary_loss(&p, &[0, 1, 2]) < 1e-10);
    }

    #[test]
    fn binary_hand_values() {
        let p = [0.9, 0.2, 0.6];
        let expected = -(0.9f64.ln() + 0.8f64.ln() + 0.6f64.ln());
        assert!((binary_loss(&p, &[0, 2]) - expected).abs() < 1e-9);
        let q = [0.3, 0.3, 0.3];
        let mean = mean_binary_loss([(&p[..], &[0usize, 2][..]), (&q[..], &[1usize][..])]);
        let q_loss = -(0.7f64.ln() + 0.3f64.ln() + 0.7f64.ln());
        assert!((mean - (expected + q_loss) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_probability_is_clamped() {
        assert!((cross_entropy_loss(&[0.0, 1.0], 0) + LOG_EPSILON.ln()).abs() < 1e-9);
    }
}
