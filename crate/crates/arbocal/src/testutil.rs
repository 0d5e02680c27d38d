//! Shared helpers for unit tests across modules.

use crate::scores::{canonicalize_scores, Orientation, ScoreMatrix};
use crate::tree::Arborescence;
use ndarray::{array, Array2};

/// Head-probability table of the running example, dependents as rows
/// over heads [ROOT, w1, w2, w3, w4]. Entry (w2, w2) is an exact zero.
pub(crate) fn example_probs() -> Array2<f64> {
    array![
        [0.01, 0.02, 0.88, 0.07, 0.02],
        [0.95, 0.01, 0.00, 0.03, 0.01],
        [0.09, 0.13, 0.05, 0.02, 0.71],
        [0.03, 0.10, 0.74, 0.12, 0.01],
    ]
}

/// The running example as canonical scores (log of `example_probs`,
/// fed through the dependents-as-rows ingestion path).
pub(crate) fn example_scores() -> ScoreMatrix {
    let logits = example_probs().mapv(f64::ln);
    canonicalize_scores(logits, Orientation::DepsRows).unwrap()
}

/// Compact arborescence literal: negative entries mean "no parent".
pub(crate) fn tree(parents: &[isize]) -> Arborescence {
    let v = parents
        .iter()
        .map(|&p| if p < 0 { None } else { Some(p as usize) })
        .collect();
    Arborescence::new(0, v).unwrap()
}
