//! Maximum-arborescence decoding over temperature-scaled head scores,
//! with tooling to check that the decoded tree does not depend on the
//! temperature, and calibration utilities for picking a temperature that
//! actually improves head probabilities.
//!
//! The pipeline: ingest per-sentence head-score matrices
//! ([`canonicalize_scores`]), normalize each dependent's column into
//! log-probabilities at some temperature ([`log_softmax_weights`]),
//! decode the maximum-weight arborescence exactly ([`decode`], with an
//! optional single-root-child constraint), and fit or evaluate
//! temperatures against gold heads ([`fit_temperature`],
//! [`calibration_report`]). [`synth`] generates reproducible synthetic
//! instances with known ground truth; [`io`] reads and writes the JSON
//! score format and a CoNLL-U subset.

pub mod calibration;
pub mod decode;
pub mod io;
pub mod scores;
pub mod synth;
pub mod tree;
pub mod weighting;

#[cfg(test)]
pub(crate) mod testutil;

pub use calibration::{
    attachment_accuracy, attachment_nll, calibration_report, decoded_uas,
    expected_calibration_error, fit_temperature, CalibrationError, CalibrationReport, EceReport,
    ReliabilityBin, FIT_RANGE,
};
pub use decode::{
    brute_force_decode, cle_decode, decode, enumerate_arborescences, root_constrained_decode,
    verify_invariance, DecodeError, DecodeOptions, InvarianceReport, TieBreak, ENUMERATION_LIMIT,
};
pub use io::{
    read_scores, read_tree_conllu, render_trees_conllu, write_scores, write_tree_conllu,
    write_trees_conllu, IoError, ScoreFile, SentenceRecord,
};
pub use scores::{
    canonicalize_scores, EdgeWeights, Orientation, ScoreError, ScoreMatrix, Temperature, MASK,
};
pub use synth::{generate, GenError, GenSpec, SplitMix64};
pub use tree::{validate_arborescence, Arborescence, GoldTree, TreeViolation};
pub use weighting::{
    arborescence_weight, log_softmax_weights, softmax_probabilities, weight_difference_identity,
};
