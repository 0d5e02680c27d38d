//! Raw edge scores and their canonical matrix layout.
//!
//! The canonical layout is heads-as-rows: `values[[h, d]]` scores the edge
//! from head `h` to dependent `d`, with index 0 reserved for the artificial
//! ROOT node. Masked (disallowed) edges carry [`MASK`], which is negative
//! infinity so they vanish under softmax.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Score assigned to disallowed edges. Negative infinity: contributes zero
/// probability mass and survives `exp` without special-casing.
pub const MASK: f64 = f64::NEG_INFINITY;

/// Which axis of an input matrix indexes heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Rows are heads, columns are dependents (the canonical layout).
    HeadsRows,
    /// Rows are dependents, columns are heads; transposed on ingestion.
    DepsRows,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("matrix of shape {rows}x{cols} fits neither the full nor the reduced {orientation:?} layout")]
    BadShape {
        rows: usize,
        cols: usize,
        orientation: Orientation,
    },
    #[error("need at least one non-root node, got total node count {n}")]
    TooSmall { n: usize },
    #[error("score at head {head}, dependent {dependent} is {value} (NaN and +inf are not valid scores)")]
    NotFinite {
        head: usize,
        dependent: usize,
        value: f64,
    },
    #[error("dependent {dependent} has no candidate head (entire column masked)")]
    AllMasked { dependent: usize },
    #[error("temperature must be finite and positive, got {value}")]
    BadTemperature { value: f64 },
    #[error("expected {expected} token labels for {n} nodes, got {got}")]
    LabelCount {
        expected: usize,
        got: usize,
        n: usize,
    },
}

/// A softmax temperature. Guaranteed finite and strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self, ScoreError> {
        if !value.is_finite() || value <= 0.0 {
            return Err(ScoreError::BadTemperature { value });
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for Temperature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Canonicalized edge scores for one sentence: an `n x n` heads-as-rows
/// matrix over ROOT plus `n - 1` tokens.
///
/// Invariants, enforced on construction:
/// - column 0 is fully masked (ROOT takes no head),
/// - every other column has at least one unmasked entry,
/// - no entry is NaN or +inf.
///
/// Self-edges are representable and participate in column normalization;
/// they are excluded structurally at decode time instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Array2<f64>,
    token_labels: Option<Vec<String>>,
}

impl ScoreMatrix {
    /// Node count including ROOT.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Canonical heads-as-rows score matrix.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn score(&self, head: usize, dependent: usize) -> f64 {
        self.values[[head, dependent]]
    }

    /// Surface forms of the non-ROOT nodes, if known. Length `n - 1`;
    /// index `i` labels node `i + 1`.
    pub fn token_labels(&self) -> Option<&[String]> {
        self.token_labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, ScoreError> {
        let expected = self.n() - 1;
        if labels.len() != expected {
            return Err(ScoreError::LabelCount {
                expected,
                got: labels.len(),
                n: self.n(),
            });
        }
        self.token_labels = Some(labels);
        Ok(self)
    }
}

/// Normalizes a raw score matrix into the canonical layout.
///
/// Accepted shapes for `n` total nodes:
/// - `HeadsRows`: `n x n`, or `n x (n-1)` when the (always-masked) ROOT
///   dependent column is omitted;
/// - `DepsRows`: `n x n`, or `(n-1) x n` when the ROOT dependent row is
///   omitted.
///
/// The ROOT dependent column of the result is masked unconditionally, so
/// canonicalization is idempotent: feeding a canonical matrix back through
/// with `HeadsRows` returns it unchanged.
pub fn canonicalize_scores(
    raw: Array2<f64>,
    orientation: Orientation,
) -> Result<ScoreMatrix, ScoreError> {
    let (rows, cols) = raw.dim();
    let heads_rows = match orientation {
        Orientation::HeadsRows => raw,
        Orientation::DepsRows => raw.reversed_axes().as_standard_layout().into_owned(),
    };
    // After transposition both layouts read heads x dependents; a reduced
    // input is now n x (n-1).
    let (h_rows, h_cols) = heads_rows.dim();
    let n = h_rows;
    let full = if h_cols == n {
        heads_rows
    } else if h_cols + 1 == n {
        let mut full = Array2::from_elem((n, n), MASK);
        full.slice_mut(ndarray::s![.., 1..]).assign(&heads_rows);
        full
    } else {
        return Err(ScoreError::BadShape {
            rows,
            cols,
            orientation,
        });
    };
    finish_canonical(full)
}

/// Shared tail of canonicalization: mask the ROOT column, then validate.
fn finish_canonical(mut full: Array2<f64>) -> Result<ScoreMatrix, ScoreError> {
    let n = full.nrows();
    if n < 2 {
        return Err(ScoreError::TooSmall { n });
    }
    full.column_mut(0).fill(MASK);
    for ((head, dependent), &value) in full.indexed_iter() {
        if value.is_nan() || value == f64::INFINITY {
            return Err(ScoreError::NotFinite {
                head,
                dependent,
                value,
            });
        }
    }
    for dependent in 1..n {
        if full.column(dependent).iter().all(|&v| v == MASK) {
            return Err(ScoreError::AllMasked { dependent });
        }
    }
    Ok(ScoreMatrix {
        values: full,
        token_labels: None,
    })
}

/// Log-probability edge weights produced by temperature-scaled column
/// softmax over a [`ScoreMatrix`]. `weights[[h, d]]` is the log-probability
/// of head `h` for dependent `d`; each non-ROOT column sums to one in
/// probability space. Constructed by
/// [`log_softmax_weights`](crate::weighting::log_softmax_weights).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    weights: Array2<f64>,
    temperature: Temperature,
}

impl EdgeWeights {
    /// Crate-internal: `weights` must already be column-normalized.
    pub(crate) fn from_normalized(weights: Array2<f64>, temperature: Temperature) -> Self {
        Self {
            weights,
            temperature,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, head: usize, dependent: usize) -> f64 {
        self.weights[[head, dependent]]
    }

    /// Temperature the weights were computed at.
    pub fn temperature(&self) -> Temperature {
        self.temperature
    }
}
