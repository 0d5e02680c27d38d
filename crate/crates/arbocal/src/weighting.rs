//! Temperature-scaled softmax weighting of edge scores.
//!
//! Head probabilities are normalized per dependent column:
//!
//! ```text
//! p_t(h | d) = exp(x[h][d] / t) / sum_k exp(x[k][d] / t)
//! w_t(h, d)  = ln p_t(h | d)
//! ```
//!
//! The weight of a tree is the sum of its edge log-probabilities, so trees
//! are compared by joint head-selection likelihood.

use crate::scores::{EdgeWeights, ScoreMatrix, Temperature, MASK};
use crate::tree::Arborescence;
use ndarray::Array2;

/// Log-softmax over heads within each dependent column, at temperature `t`.
///
/// Masked entries stay masked; fully masked columns (always the ROOT
/// column) stay fully masked rather than turning into NaN. Computed with
/// max-subtraction so extreme scores and small temperatures do not
/// overflow.
pub fn log_softmax_weights(scores: &ScoreMatrix, t: Temperature) -> EdgeWeights {
    let n = scores.n();
    let inv_t = 1.0 / t.value();
    let mut weights = Array2::from_elem((n, n), MASK);
    for d in 0..n {
        let col = scores.values().column(d);
        let max = col.iter().fold(MASK, |m, &v| m.max(v * inv_t));
        if max == MASK {
            continue;
        }
        let log_norm = max
            + col
                .iter()
                .map(|&v| (v * inv_t - max).exp())
                .sum::<f64>()
                .ln();
        for h in 0..n {
            let scaled = col[h] * inv_t;
            weights[[h, d]] = if scaled == MASK {
                MASK
            } else {
                scaled - log_norm
            };
        }
    }
    EdgeWeights::from_normalized(weights, t)
}

/// Head probabilities per dependent column at temperature `t`. Masked edges
/// get probability zero. Equivalent to exponentiating
/// [`log_softmax_weights`] but returned in probability space.
pub fn softmax_probabilities(scores: &ScoreMatrix, t: Temperature) -> Array2<f64> {
    log_softmax_weights(scores, t).values().mapv(f64::exp)
}

/// Total weight of `tree` under `weights`: the sum of `w[head][dep]` over
/// its edges. Negative infinity if the tree uses a masked edge.
///
/// Panics on a node-count mismatch between the two arguments.
pub fn arborescence_weight(tree: &Arborescence, weights: &EdgeWeights) -> f64 {
    assert_eq!(
        tree.n(),
        weights.n(),
        "tree and weights disagree on node count"
    );
    tree.edges().map(|(h, d)| weights.weight(h, d)).sum()
}

/// Evaluates both sides of the weight-difference identity for two trees
/// over the same scores:
///
/// ```text
/// w_t(A) - w_t(B) = (1/t) * sum_d (x[pi_A(d)][d] - x[pi_B(d)][d])
/// ```
///
/// The left side is computed through the full log-softmax; the right side
/// directly from raw scores, where the per-column normalizers cancel
/// because both trees pick exactly one head per dependent. Returns
/// `(lhs, rhs)` so callers can check agreement. Both trees must avoid
/// masked edges, otherwise the left side is indeterminate.
///
/// Panics when the trees have different roots or node counts.
pub fn weight_difference_identity(
    a: &Arborescence,
    a_prime: &Arborescence,
    scores: &ScoreMatrix,
    t: Temperature,
) -> (f64, f64) {
    assert_eq!(a.root(), a_prime.root(), "trees disagree on the root");
    assert_eq!(
        a.n(),
        scores.n(),
        "first tree and scores disagree on node count"
    );
    assert_eq!(
        a_prime.n(),
        scores.n(),
        "second tree and scores disagree on node count"
    );
    let weights = log_softmax_weights(scores, t);
    let lhs = arborescence_weight(a, &weights) - arborescence_weight(a_prime, &weights);
    let mut raw_gap = 0.0;
    for d in 0..scores.n() {
        let (ha, hb) = match (a.parent_of(d), a_prime.parent_of(d)) {
            (Some(ha), Some(hb)) => (ha, hb),
            // The shared root has no head in either tree.
            _ => continue,
        };
        raw_gap += scores.score(ha, d) - scores.score(hb, d);
    }
    (lhs, raw_gap / t.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{canonicalize_scores, Orientation};
    use crate::testutil::{example_scores, tree};
    use ndarray::array;

    #[test]
    fn log_softmax_of_log_probs_is_identity_at_t1() {
        // Columns of the example already sum to one, so weighting their
        // logs at t=1 must reproduce them.
        let w = log_softmax_weights(&example_scores(), Temperature::ONE);
        assert!((w.weight(2, 1) - 0.88f64.ln()).abs() < 1e-12);
        assert!((w.weight(0, 2) - 0.95f64.ln()).abs() < 1e-12);
        assert_eq!(w.weight(2, 2), MASK);
        assert!((w.weight(4, 3) - 0.71f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one_per_dependent() {
        let scores = example_scores();
        for t in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let p = softmax_probabilities(&scores, Temperature::new(t).unwrap());
            for d in 1..scores.n() {
                let sum: f64 = p.column(d).sum();
                assert!((sum - 1.0).abs() < 1e-12, "t={t} d={d} sum={sum}");
            }
            assert_eq!(p.column(0).sum(), 0.0);
        }
    }

    #[test]
    fn uniform_scores_give_log_inverse_n() {
        let raw = Array2::zeros((5, 5));
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let w = log_softmax_weights(&scores, Temperature::new(3.7).unwrap());
        for d in 1..5 {
            for h in 0..5 {
                assert!((w.weight(h, d) - 0.2f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn high_temperature_flattens_low_sharpens() {
        let scores = example_scores();
        let hot = softmax_probabilities(&scores, Temperature::new(10.0).unwrap());
        let cold = softmax_probabilities(&scores, Temperature::new(0.1).unwrap());
        let base = softmax_probabilities(&scores, Temperature::ONE);
        // Dependent 1's strongest head is 2 with p=0.88.
        assert!(hot[[2, 1]] < base[[2, 1]]);
        assert!(cold[[2, 1]] > base[[2, 1]]);
        assert!(cold[[2, 1]] > 0.9999);
    }

    #[test]
    fn high_temperature_limit_is_near_uniform() {
        let raw = array![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]];
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let p = softmax_probabilities(&scores, Temperature::new(100.0).unwrap());
        for h in 0..3 {
            assert!(
                (p[[h, 1]] - 1.0 / 3.0).abs() < 0.01,
                "h={h} p={}",
                p[[h, 1]]
            );
        }
    }

    #[test]
    fn two_node_uniform_tree_weighs_log_half() {
        let scores = canonicalize_scores(Array2::zeros((2, 2)), Orientation::HeadsRows).unwrap();
        let w = log_softmax_weights(&scores, Temperature::ONE);
        let only = tree(&[-1, 0]);
        assert!((arborescence_weight(&only, &w) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_two_pass_reference() {
        // Fixed 5x5 matrix with moderate entries, where the naive
        // exp/sum/log evaluation cannot overflow and serves as an
        // independent reference for the max-subtracted implementation.
        let mut raw = Array2::zeros((5, 5));
        let mut state = 12345u64;
        for v in raw.iter_mut() {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = ((state >> 33) as f64 / (1u64 << 31) as f64) * 6.0 - 3.0;
        }
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let t = 2.0;
        let w = log_softmax_weights(&scores, Temperature::new(t).unwrap());
        for d in 1..5 {
            let norm: f64 = (0..5).map(|h| (scores.score(h, d) / t).exp()).sum();
            for h in 0..5 {
                let reference = (scores.score(h, d) / t).exp().ln() - norm.ln();
                assert!((w.weight(h, d) - reference).abs() < 1e-12, "h={h} d={d}");
            }
        }
    }

    #[test]
    fn max_subtraction_survives_large_scores() {
        let raw = array![
            [0.0, 1000.0, 998.0],
            [0.0, 1001.0, 999.0],
            [0.0, 999.0, 1001.0]
        ];
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let w = log_softmax_weights(&scores, Temperature::ONE);
        for d in 1..3 {
            let sum: f64 = w.values().column(d).iter().map(|&v| v.exp()).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(w.values().column(d).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn example_tree_weight() {
        // Tree: w2<-ROOT, w1<-w2, w3<-w4, w4<-w2.
        let w = log_softmax_weights(&example_scores(), Temperature::ONE);
        let best = tree(&[-1, 2, 0, 4, 2]);
        let expected = 0.95f64.ln() + 0.88f64.ln() + 0.74f64.ln() + 0.71f64.ln();
        assert!((arborescence_weight(&best, &w) - expected).abs() < 1e-12);
        assert!((expected - (-0.822722067628133)).abs() < 1e-12);
    }

    #[test]
    fn tree_weight_matches_manual_edge_sum() {
        // Re-sum edge by edge without going through arborescence_weight.
        let mut raw = Array2::<f64>::zeros((6, 6));
        let mut state = 0x5eed_cafe_u64;
        for v in raw.iter_mut() {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = ((state >> 33) as f64 / (1u64 << 31) as f64) * 8.0 - 4.0;
        }
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let w = log_softmax_weights(&scores, Temperature::new(1.7).unwrap());
        let t = tree(&[-1, 0, 1, 1, 3, 2]);
        let mut manual = 0.0;
        for d in 1..6 {
            manual += w.weight(t.parents()[d].unwrap(), d);
        }
        assert_eq!(arborescence_weight(&t, &w), manual);
    }

    #[test]
    fn masked_edge_makes_tree_weight_neg_inf() {
        let w = log_softmax_weights(&example_scores(), Temperature::ONE);
        // w2<-w2 is the zero-probability cell; a tree cannot contain a
        // self-loop, so route through the masked ROOT column instead: no
        // tree can, so check the edge weight directly.
        assert_eq!(w.weight(2, 2), MASK);
    }

    #[test]
    fn difference_identity_matches_single_edge_swap() {
        // Trees differing only in w3's head: w4 (p=.71) vs w2 (p=.05).
        let scores = example_scores();
        let a = tree(&[-1, 2, 0, 4, 2]);
        let b = tree(&[-1, 2, 0, 2, 2]);
        let expected_t1 = 0.71f64.ln() - 0.05f64.ln();
        for t in [0.25, 1.0, 3.0] {
            let temp = Temperature::new(t).unwrap();
            let (lhs, rhs) = weight_difference_identity(&a, &b, &scores, temp);
            assert!((lhs - rhs).abs() < 1e-9, "t={t} lhs={lhs} rhs={rhs}");
            assert!((rhs - expected_t1 / t).abs() < 1e-9);
        }
        assert!((expected_t1 - 2.653241964607215).abs() < 1e-12);
    }

    #[test]
    fn difference_identity_antisymmetric() {
        let scores = example_scores();
        let a = tree(&[-1, 2, 0, 4, 2]);
        let b = tree(&[-1, 0, 0, 2, 2]);
        let t = Temperature::new(0.7).unwrap();
        let (lhs_ab, rhs_ab) = weight_difference_identity(&a, &b, &scores, t);
        let (lhs_ba, rhs_ba) = weight_difference_identity(&b, &a, &scores, t);
        assert!((lhs_ab + lhs_ba).abs() < 1e-12);
        assert!((rhs_ab + rhs_ba).abs() < 1e-12);
    }
}
