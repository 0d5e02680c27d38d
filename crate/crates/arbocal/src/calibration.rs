//! Temperature fitting and calibration measurement over head-attachment
//! decisions.
//!
//! A decision is one non-root token choosing its head. NLL scores the gold
//! head's log-probability; ECE compares binned confidence against
//! empirical accuracy; the fitted temperature minimizes NLL over a fixed
//! interval. All reductions use compensated summation so results are
//! independent of accumulation order to well below 1e-12.

use crate::decode::{decode, DecodeError, DecodeOptions};
use crate::scores::{ScoreMatrix, Temperature, MASK};
use crate::tree::GoldTree;
use crate::weighting::log_softmax_weights;
use serde::Serialize;
use thiserror::Error;

/// Search interval for temperature fitting, in plain temperature units.
pub const FIT_RANGE: (f64, f64) = (0.05, 20.0);
/// Golden-section termination: absolute tolerance on ln(t).
const LOG_T_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no instances supplied")]
    EmptyInstances,
    #[error("instance {instance}: scores have {scores_n} nodes but gold tree has {gold_n}")]
    ShapeMismatch {
        instance: usize,
        scores_n: usize,
        gold_n: usize,
    },
    #[error("instance {instance}: gold head of dependent {dependent} is a masked edge")]
    MaskedGoldHead { instance: usize, dependent: usize },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Neumaier-compensated accumulator: running error compensation makes the
/// final sum insensitive to addition order at double precision.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

type Instance = (ScoreMatrix, GoldTree);

fn validate_instances(instances: &[Instance]) -> Result<(), CalibrationError> {
    if instances.is_empty() {
        return Err(CalibrationError::EmptyInstances);
    }
    for (i, (scores, gold)) in instances.iter().enumerate() {
        if scores.n() != gold.tree().n() {
            return Err(CalibrationError::ShapeMismatch {
                instance: i,
                scores_n: scores.n(),
                gold_n: gold.tree().n(),
            });
        }
    }
    Ok(())
}

/// Mean negative log-probability of the gold head over all decisions, at
/// temperature `t`. Errors if any gold head sits on a masked edge, since
/// its probability would be zero at every temperature.
pub fn attachment_nll(instances: &[Instance], t: Temperature) -> Result<f64, CalibrationError> {
    validate_instances(instances)?;
    let mut total = CompensatedSum::default();
    let mut count = 0usize;
    for (i, (scores, gold)) in instances.iter().enumerate() {
        let weights = log_softmax_weights(scores, t);
        for d in 1..scores.n() {
            let head = gold.head_of(d);
            if scores.score(head, d) == MASK {
                return Err(CalibrationError::MaskedGoldHead {
                    instance: i,
                    dependent: d,
                });
            }
            total.add(-weights.weight(head, d));
            count += 1;
        }
    }
    Ok(total.value() / count as f64)
}

/// Minimizes attachment NLL over t in [0.05, 20] by golden-section search
/// on ln(t) (tolerance 1e-4), then keeps the best of the search result,
/// the interval endpoints, and t=1. Including the endpoints lets a
/// monotone objective return the exact boundary; including t=1 guarantees
/// the fitted NLL never exceeds the uncalibrated one.
pub fn fit_temperature(instances: &[Instance]) -> Result<Temperature, CalibrationError> {
    // Surfaces empty/shape/masked-gold errors once; temperature does not
    // affect which errors occur, so later evaluations cannot fail.
    attachment_nll(instances, Temperature::ONE)?;
    let nll_at = |ln_t: f64| {
        attachment_nll(instances, Temperature::new(ln_t.exp()).unwrap())
            .expect("instances validated above")
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (FIT_RANGE.0.ln(), FIT_RANGE.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = nll_at(c);
    let mut fd = nll_at(d);
    while b - a > LOG_T_TOLERANCE {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll_at(d);
        }
    }
    let mut best_t = ((a + b) / 2.0).exp();
    let mut best_nll = nll_at((a + b) / 2.0);
    // Ties go to the named candidates so boundary minima land exactly on
    // the interval edge and an NLL flat in the temperature (which golden
    // section cannot localize) falls back to 1.0. The <= matters: with
    // very confident scores the NLL underflows to exactly zero over a
    // whole sub-interval.
    for candidate in [FIT_RANGE.0, FIT_RANGE.1, 1.0] {
        let nll = nll_at(candidate.ln());
        if nll <= best_nll {
            best_nll = nll;
            best_t = candidate;
        }
    }
    Ok(Temperature::new(best_t).expect("search stays within the positive interval"))
}

/// One equal-width confidence bin of a reliability diagram.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    /// Mean predicted-head probability of decisions in the bin; 0 when
    /// empty.
    pub mean_confidence: f64,
    /// Fraction of decisions in the bin whose predicted head is gold; 0
    /// when empty.
    pub accuracy: f64,
    pub count: usize,
}

/// ECE with its reliability bins at one temperature.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EceReport {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
    pub total_decisions: usize,
}

/// Expected calibration error over head decisions at temperature `t`,
/// with `bins` equal-width confidence bins on [0,1].
///
/// The predicted head of a dependent is the argmax of its score column
/// (ties to the smallest index); positive scaling never changes a
/// column's argmax, so predictions and accuracy are identical at every
/// temperature, while confidences move with `t`. ECE is the
/// count-weighted mean absolute gap between bin confidence and bin
/// accuracy.
pub fn expected_calibration_error(
    instances: &[Instance],
    t: Temperature,
    bins: usize,
) -> Result<EceReport, CalibrationError> {
    assert!(bins >= 1, "need at least one bin");
    validate_instances(instances)?;
    let mut conf_sums = vec![CompensatedSum::default(); bins];
    let mut hits = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for (scores, gold) in instances {
        let weights = log_softmax_weights(scores, t);
        for d in 1..scores.n() {
            let predicted = predicted_head(scores, d);
            let confidence = weights.weight(predicted, d).exp();
            let bin = ((confidence * bins as f64) as usize).min(bins - 1);
            conf_sums[bin].add(confidence);
            counts[bin] += 1;
            if predicted == gold.head_of(d) {
                hits[bin] += 1;
            }
            total += 1;
        }
    }
    let mut ece = CompensatedSum::default();
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let (mean_confidence, accuracy) = if counts[b] == 0 {
            (0.0, 0.0)
        } else {
            (
                conf_sums[b].value() / counts[b] as f64,
                hits[b] as f64 / counts[b] as f64,
            )
        };
        if counts[b] > 0 {
            ece.add(counts[b] as f64 / total as f64 * (accuracy - mean_confidence).abs());
        }
        out.push(ReliabilityBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            mean_confidence,
            accuracy,
            count: counts[b],
        });
    }
    Ok(EceReport {
        ece: ece.value(),
        bins: out,
        total_decisions: total,
    })
}

/// Argmax head of a dependent's raw score column, ties to the smallest
/// index. Equals the argmax of the softmax column at any temperature.
fn predicted_head(scores: &ScoreMatrix, dependent: usize) -> usize {
    let col = scores.values().column(dependent);
    let mut best = 0usize;
    let mut best_v = MASK;
    for (h, &v) in col.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = h;
        }
    }
    best
}

/// Fraction of decisions whose predicted head equals gold. Temperature
/// does not appear: a positive scaling of a column never changes its
/// argmax, so this value is shared by every temperature exactly.
pub fn attachment_accuracy(instances: &[Instance]) -> Result<f64, CalibrationError> {
    validate_instances(instances)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (scores, gold) in instances {
        for d in 1..scores.n() {
            if predicted_head(scores, d) == gold.head_of(d) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Unlabeled attachment score of decoded trees against gold at
/// temperature `t`: the fraction of non-root tokens whose decoded head
/// matches gold.
pub fn decoded_uas(
    instances: &[Instance],
    t: Temperature,
    options: DecodeOptions,
) -> Result<f64, CalibrationError> {
    validate_instances(instances)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (scores, gold) in instances {
        let tree = decode(&log_softmax_weights(scores, t), 0, options)?;
        for d in 1..scores.n() {
            if tree.parent_of(d) == Some(gold.head_of(d)) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Full calibration study of one dataset: temperature fit plus NLL, ECE,
/// reliability bins, attachment accuracy, and decoded-tree UAS before
/// (t=1) and after (fitted t) calibration.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub fitted_temperature: Temperature,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub bins_before: Vec<ReliabilityBin>,
    pub bins_after: Vec<ReliabilityBin>,
    /// Shared by both temperatures; argmax decisions never move.
    pub accuracy: f64,
    pub uas_before: f64,
    pub uas_after: f64,
    pub total_decisions: usize,
}

/// Composes [`fit_temperature`], [`attachment_nll`], and
/// [`expected_calibration_error`] at t=1 and the fitted temperature into
/// one report. UAS uses unconstrained decoding.
pub fn calibration_report(
    instances: &[Instance],
    bins: usize,
) -> Result<CalibrationReport, CalibrationError> {
    let fitted = fit_temperature(instances)?;
    let nll_before = attachment_nll(instances, Temperature::ONE)?;
    let nll_after = attachment_nll(instances, fitted)?;
    let ece_t1 = expected_calibration_error(instances, Temperature::ONE, bins)?;
    let ece_fit = expected_calibration_error(instances, fitted, bins)?;
    let accuracy = attachment_accuracy(instances)?;
    let options = DecodeOptions::default();
    let uas_before = decoded_uas(instances, Temperature::ONE, options)?;
    let uas_after = decoded_uas(instances, fitted, options)?;
    Ok(CalibrationReport {
        fitted_temperature: fitted,
        nll_before,
        nll_after,
        ece_before: ece_t1.ece,
        ece_after: ece_fit.ece,
        bins_before: ece_t1.bins,
        bins_after: ece_fit.bins,
        accuracy,
        uas_before,
        uas_after,
        total_decisions: ece_t1.total_decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{canonicalize_scores, Orientation};
    use crate::synth::{generate, GenSpec};
    use crate::testutil::tree;
    use ndarray::{array, Array2};

    fn instance(probs_by_column: Vec<Vec<f64>>, gold_parents: &[isize]) -> Instance {
        // Column k of the matrix is probs_by_column[k-1] over all heads.
        let n = probs_by_column.len() + 1;
        let mut raw = Array2::from_elem((n, n), MASK);
        for (d, col) in probs_by_column.iter().enumerate() {
            assert_eq!(col.len(), n);
            for (h, &p) in col.iter().enumerate() {
                raw[[h, d + 1]] = p.ln();
            }
        }
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        (scores, GoldTree::new(tree(gold_parents)))
    }

    #[test]
    fn nll_of_single_confident_decision() {
        let inst = instance(vec![vec![0.95, 0.05]], &[-1, 0]);
        let nll = attachment_nll(&[inst], Temperature::ONE).unwrap();
        assert!((nll - (-0.95f64.ln())).abs() < 1e-12);
        assert!((nll - 0.05129329438755058).abs() < 1e-12);
    }

    #[test]
    fn nll_uniform_is_log_n() {
        let raw = Array2::zeros((5, 5));
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let gold = GoldTree::new(tree(&[-1, 0, 1, 2, 3]));
        let nll = attachment_nll(&[(scores, gold)], Temperature::new(2.5).unwrap()).unwrap();
        assert!((nll - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_naive_per_token_loop() {
        // Independent reference: each token's loss recomputed straight
        // from raw scores with a naive exp/sum/log normalizer and plain
        // accumulation. Synthetic scores are moderate, so the naive form
        // cannot overflow; exp(MASK) = 0 drops masked heads on its own.
        let spec = GenSpec {
            seed: 0x0a11_5eed,
            n_range: (3, 7),
            logit_scale: 1.5,
            sharpening: 1.0,
            count: 40,
        };
        let instances = generate(&spec).unwrap();
        for t in [0.3, 1.0, 4.0] {
            let nll = attachment_nll(&instances, Temperature::new(t).unwrap()).unwrap();
            let mut total = 0.0;
            let mut count = 0usize;
            for (scores, gold) in &instances {
                for d in 1..scores.n() {
                    let norm: f64 = (0..scores.n())
                        .map(|h| (scores.score(h, d) / t).exp())
                        .sum();
                    total += norm.ln() - scores.score(gold.head_of(d), d) / t;
                    count += 1;
                }
            }
            assert!((nll - total / count as f64).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn nll_errors_are_specific() {
        assert_eq!(
            attachment_nll(&[], Temperature::ONE).unwrap_err(),
            CalibrationError::EmptyInstances
        );
        let raw = array![[0.0, 1.0, 0.0], [0.0, 0.0, MASK], [0.0, 0.0, 1.0]];
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let gold = GoldTree::new(tree(&[-1, 0, 1]));
        assert_eq!(
            attachment_nll(&[(scores.clone(), gold)], Temperature::ONE).unwrap_err(),
            CalibrationError::MaskedGoldHead {
                instance: 0,
                dependent: 2
            }
        );
        let short_gold = GoldTree::new(tree(&[-1, 0]));
        assert_eq!(
            attachment_nll(&[(scores, short_gold)], Temperature::ONE).unwrap_err(),
            CalibrationError::ShapeMismatch {
                instance: 0,
                scores_n: 3,
                gold_n: 2
            }
        );
    }

    #[test]
    fn fit_hits_lower_clamp_when_gold_is_argmax() {
        // Gold is the argmax head, so NLL decreases monotonically as the
        // softmax sharpens and the fit lands exactly on the boundary.
        let inst = instance(vec![vec![0.9, 0.1]], &[-1, 0]);
        let fitted = fit_temperature(&[inst]).unwrap();
        assert_eq!(fitted.value(), FIT_RANGE.0);
    }

    #[test]
    fn fit_recovers_unit_temperature_on_calibrated_data() {
        let spec = GenSpec {
            seed: 2024,
            n_range: (6, 10),
            logit_scale: 1.0,
            sharpening: 1.0,
            count: 1600,
        };
        let instances = generate(&spec).unwrap();
        let decisions: usize = instances.iter().map(|(s, _)| s.n() - 1).sum();
        assert!(decisions >= 10_000, "want a large sample, got {decisions}");
        let fitted = fit_temperature(&instances).unwrap();
        assert!(
            (0.9..=1.1).contains(&fitted.value()),
            "fitted {}",
            fitted.value()
        );
    }

    #[test]
    fn fit_recovers_sharpening_factor() {
        let spec = GenSpec {
            seed: 77,
            n_range: (5, 9),
            logit_scale: 1.0,
            sharpening: 3.0,
            count: 900,
        };
        let instances = generate(&spec).unwrap();
        let fitted = fit_temperature(&instances).unwrap();
        assert!(
            (2.5..=3.5).contains(&fitted.value()),
            "fitted {}",
            fitted.value()
        );
        let nll_before = attachment_nll(&instances, Temperature::ONE).unwrap();
        let nll_after = attachment_nll(&instances, fitted).unwrap();
        assert!(nll_after < nll_before);
    }

    #[test]
    fn ece_hand_computed_four_decision_case() {
        // Confidences {0.95, 0.95, 0.65, 0.65}, correctness {1, 1, 1, 0},
        // 10 bins: ECE = (2/4)|1-0.95| + (2/4)|0.5-0.65| = 0.1.
        let a = instance(
            vec![vec![0.95, 0.03, 0.02], vec![0.95, 0.02, 0.03]],
            &[-1, 0, 0],
        );
        let b = instance(
            vec![vec![0.65, 0.05, 0.30], vec![0.30, 0.65, 0.05]],
            &[-1, 0, 0],
        );
        let report = expected_calibration_error(&[a, b], Temperature::ONE, 10).unwrap();
        assert!((report.ece - 0.1).abs() < 1e-9, "ece {}", report.ece);
        assert_eq!(report.total_decisions, 4);
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(report.bins[9].count, 2);
        assert_eq!(report.bins[6].count, 2);
        assert!((report.bins[6].accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ece_extremes() {
        // Fully confident and right: ECE 0. The second column's only
        // unmasked head is the gold one.
        let mut raw = Array2::from_elem((2, 2), MASK);
        raw[[0, 1]] = 0.0;
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let right = (scores, GoldTree::new(tree(&[-1, 0])));
        let report = expected_calibration_error(&[right], Temperature::ONE, 10).unwrap();
        assert_eq!(report.ece, 0.0);
        // Fully confident and wrong: ECE 1. Prediction is forced to head
        // 2 and 1 respectively while gold attaches both tokens to root.
        let mut raw = Array2::from_elem((3, 3), MASK);
        raw[[2, 1]] = 0.0;
        raw[[1, 2]] = 0.0;
        let scores = canonicalize_scores(raw, Orientation::HeadsRows).unwrap();
        let wrong = (scores, GoldTree::new(tree(&[-1, 0, 0])));
        let report = expected_calibration_error(&[wrong], Temperature::ONE, 10).unwrap();
        assert!((report.ece - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_and_uas_are_temperature_invariant_on_synth_data() {
        let spec = GenSpec {
            seed: 5150,
            n_range: (3, 9),
            logit_scale: 2.0,
            sharpening: 3.0,
            count: 60,
        };
        let instances = generate(&spec).unwrap();
        let acc = attachment_accuracy(&instances).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        let opts = DecodeOptions::default();
        let uas_cold = decoded_uas(&instances, Temperature::new(0.2).unwrap(), opts).unwrap();
        let uas_unit = decoded_uas(&instances, Temperature::ONE, opts).unwrap();
        let uas_hot = decoded_uas(&instances, Temperature::new(8.0).unwrap(), opts).unwrap();
        assert_eq!(uas_cold, uas_unit);
        assert_eq!(uas_unit, uas_hot);
    }

    #[test]
    fn report_is_self_consistent_on_sharpened_data() {
        let spec = GenSpec {
            seed: 31337,
            n_range: (4, 10),
            logit_scale: 1.5,
            sharpening: 3.0,
            count: 300,
        };
        let instances = generate(&spec).unwrap();
        let report = calibration_report(&instances, 10).unwrap();
        assert!(report.nll_after <= report.nll_before + 1e-9);
        assert!(report.ece_after < report.ece_before);
        assert!((0.0..=1.0).contains(&report.ece_before));
        assert!((0.0..=1.0).contains(&report.ece_after));
        assert_eq!(
            report.bins_before.iter().map(|b| b.count).sum::<usize>(),
            report.total_decisions
        );
        assert_eq!(
            report.bins_after.iter().map(|b| b.count).sum::<usize>(),
            report.total_decisions
        );
        assert_eq!(report.uas_before, report.uas_after);
        assert!((FIT_RANGE.0..=FIT_RANGE.1).contains(&report.fitted_temperature.value()));
    }

    #[test]
    fn degenerate_single_instance_report_succeeds() {
        let inst = instance(vec![vec![0.9, 0.1]], &[-1, 0]);
        let report = calibration_report(&[inst], 10).unwrap();
        assert_eq!(report.fitted_temperature.value(), FIT_RANGE.0);
        assert_eq!(report.total_decisions, 1);
        assert!(report.nll_after <= report.nll_before + 1e-9);
    }

    #[test]
    fn compensated_sum_is_order_insensitive() {
        // Each group contributes exactly 2.0, but the 1.0s vanish next to
        // 1e100 unless the summation carries a compensation term.
        let values: Vec<f64> = (0..500).flat_map(|_| [1.0, 1e100, 1.0, -1e100]).collect();
        let mut forward = CompensatedSum::default();
        for &v in &values {
            forward.add(v);
        }
        let mut backward = CompensatedSum::default();
        for &v in values.iter().rev() {
            backward.add(v);
        }
        assert!((forward.value() - backward.value()).abs() < 1e-12);
        assert_eq!(forward.value(), 1000.0);
        let naive: f64 = values.iter().sum();
        assert!((naive - 1000.0).abs() > 1.0);
    }
}
