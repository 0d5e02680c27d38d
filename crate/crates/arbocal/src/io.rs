//! File formats: a JSON score-matrix interchange format and a CoNLL-U
//! subset for trees.
//!
//! Score files declare their orientation explicitly so a transposed table
//! cannot be ingested silently; logits are stored row-major with `null`
//! encoding the mask (JSON has no -inf). Floats round-trip exactly via
//! shortest-representation formatting.

use crate::scores::{canonicalize_scores, Orientation, ScoreError, ScoreMatrix, MASK};
use crate::tree::{Arborescence, GoldTree, TreeViolation};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

/// Top-level structure of a `.scores.json` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreFile {
    pub version: u32,
    pub sentences: Vec<SentenceRecord>,
}

/// One sentence's scores as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceRecord {
    /// Surface forms of the non-root tokens; the root is implicit.
    pub tokens: Vec<String>,
    pub orientation: Orientation,
    /// Rows, columns of `logits`.
    pub shape: [usize; 2],
    /// Row-major scores; `null` is the masked-edge sentinel.
    pub logits: Vec<Option<f64>>,
    /// Per-token gold head as a node index; 0 is the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_heads: Option<Vec<usize>>,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: String, message: String },
    #[error("{path}: unsupported format version {version}, expected {FORMAT_VERSION}")]
    Version { path: String, version: u32 },
    #[error("{path}, sentence {sentence}: {message}")]
    Schema {
        path: String,
        sentence: usize,
        message: String,
    },
    #[error("{path}, sentence {sentence}: {source}")]
    Score {
        path: String,
        sentence: usize,
        source: ScoreError,
    },
    #[error("{path}, sentence {sentence}: invalid gold tree: {source}")]
    Gold {
        path: String,
        sentence: usize,
        source: TreeViolation,
    },
    #[error("{path}, line {line}: {message}")]
    Conllu {
        path: String,
        line: usize,
        message: String,
    },
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Reads and canonicalizes a score file. Every matrix goes through
/// [`canonicalize_scores`]; gold parent vectors are validated as trees.
pub fn read_scores(
    path: impl AsRef<Path>,
) -> Result<Vec<(ScoreMatrix, Option<GoldTree>)>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path_str(path),
        source,
    })?;
    let file: ScoreFile = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path_str(path),
        message: e.to_string(),
    })?;
    if file.version != FORMAT_VERSION {
        return Err(IoError::Version {
            path: path_str(path),
            version: file.version,
        });
    }
    let mut out = Vec::with_capacity(file.sentences.len());
    for (i, record) in file.sentences.into_iter().enumerate() {
        out.push(ingest_sentence(record, path, i)?);
    }
    Ok(out)
}

fn ingest_sentence(
    record: SentenceRecord,
    path: &Path,
    sentence: usize,
) -> Result<(ScoreMatrix, Option<GoldTree>), IoError> {
    let schema_err = |message: String| IoError::Schema {
        path: path_str(path),
        sentence,
        message,
    };
    let [rows, cols] = record.shape;
    if rows * cols != record.logits.len() {
        return Err(schema_err(format!(
            "shape [{rows}, {cols}] declares {} values but logits has {}",
            rows * cols,
            record.logits.len()
        )));
    }
    let values: Vec<f64> = record.logits.iter().map(|v| v.unwrap_or(MASK)).collect();
    let raw =
        Array2::from_shape_vec((rows, cols), values).expect("length checked against shape above");
    let scores = canonicalize_scores(raw, record.orientation).map_err(|source| IoError::Score {
        path: path_str(path),
        sentence,
        source,
    })?;
    let n = scores.n();
    if record.tokens.len() != n - 1 {
        return Err(schema_err(format!(
            "expected {} tokens for {n} nodes, got {}",
            n - 1,
            record.tokens.len()
        )));
    }
    let scores = scores
        .with_labels(record.tokens)
        .expect("token count checked above");
    let gold = match record.gold_heads {
        None => None,
        Some(heads) => {
            if heads.len() != n - 1 {
                return Err(schema_err(format!(
                    "expected {} gold heads for {n} nodes, got {}",
                    n - 1,
                    heads.len()
                )));
            }
            let mut parents = vec![None; n];
            for (i, &h) in heads.iter().enumerate() {
                parents[i + 1] = Some(h);
            }
            let tree = Arborescence::new(0, parents).map_err(|source| IoError::Gold {
                path: path_str(path),
                sentence,
                source,
            })?;
            Some(GoldTree::new(tree))
        }
    };
    Ok((scores, gold))
}

/// Writes instances in canonical orientation (heads as rows, full n x n,
/// `null` for masked entries). Matrices without token labels get
/// generated names `w1..w(n-1)`. `read_scores` of the output returns the
/// inputs exactly: floats use shortest round-trip formatting and
/// canonicalization is idempotent.
pub fn write_scores(
    path: impl AsRef<Path>,
    instances: &[(ScoreMatrix, Option<GoldTree>)],
) -> Result<(), IoError> {
    let path = path.as_ref();
    let sentences = instances
        .iter()
        .map(|(scores, gold)| {
            let n = scores.n();
            let tokens = match scores.token_labels() {
                Some(labels) => labels.to_vec(),
                None => (1..n).map(|i| format!("w{i}")).collect(),
            };
            let logits = scores
                .values()
                .iter()
                .map(|&v| if v == MASK { None } else { Some(v) })
                .collect();
            let gold_heads = gold
                .as_ref()
                .map(|g| (1..n).map(|d| g.head_of(d)).collect());
            SentenceRecord {
                tokens,
                orientation: Orientation::HeadsRows,
                shape: [n, n],
                logits,
                gold_heads,
            }
        })
        .collect();
    let file = ScoreFile {
        version: FORMAT_VERSION,
        sentences,
    };
    let text = serde_json::to_string_pretty(&file).expect("score files always serialize");
    std::fs::write(path, text).map_err(|source| IoError::Io {
        path: path_str(path),
        source,
    })
}

fn conllu_block(tokens: &[String], tree: &Arborescence, out: &mut String) {
    let n = tree.n();
    assert_eq!(tokens.len(), n - 1, "token count must be n - 1");
    assert_eq!(tree.root(), 0, "serialized trees are rooted at node 0");
    for d in 1..n {
        let head = tree.parent_of(d).expect("non-root nodes have parents");
        out.push_str(&format!(
            "{d}\t{}\t_\t_\t_\t_\t{head}\t_\t_\t_\n",
            tokens[d - 1]
        ));
    }
}

/// Writes one sentence in the CoNLL-U subset: tab-separated ID, FORM and
/// HEAD columns populated, the rest `_`; HEAD 0 encodes root attachment.
pub fn write_tree_conllu(
    tokens: &[String],
    tree: &Arborescence,
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = String::new();
    conllu_block(tokens, tree, &mut text);
    std::fs::write(path, text).map_err(|source| IoError::Io {
        path: path_str(path),
        source,
    })
}

/// Writes many sentences, blank-line separated, trailing newline.
pub fn write_trees_conllu(
    sentences: &[(Vec<String>, Arborescence)],
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, render_trees_conllu(sentences)).map_err(|source| IoError::Io {
        path: path_str(path),
        source,
    })
}

/// The CoNLL-U text for a batch of sentences, for callers that stream to
/// stdout instead of a file.
pub fn render_trees_conllu(sentences: &[(Vec<String>, Arborescence)]) -> String {
    let mut text = String::new();
    for (i, (tokens, tree)) in sentences.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        conllu_block(tokens, tree, &mut text);
    }
    text
}

/// Reads the CoNLL-U subset back: comment lines and multiword/empty-node
/// IDs (containing `-` or `.`) are skipped; IDs must be contiguous from
/// 1; every sentence must form a valid tree.
pub fn read_tree_conllu(path: impl AsRef<Path>) -> Result<Vec<(Vec<String>, GoldTree)>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path_str(path),
        source,
    })?;
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, heads: &mut Vec<usize>| -> Result<(), IoError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let n = tokens.len() + 1;
        let mut parents = vec![None; n];
        for (i, &h) in heads.iter().enumerate() {
            parents[i + 1] = Some(h);
        }
        let tree = Arborescence::new(0, parents).map_err(|source| IoError::Gold {
            path: path_str(path),
            sentence: sentences.len(),
            source,
        })?;
        sentences.push((std::mem::take(tokens), GoldTree::new(tree)));
        heads.clear();
        Ok(())
    };
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            flush(&mut tokens, &mut heads)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(IoError::Conllu {
                path: path_str(path),
                line: lineno,
                message: format!("expected 10 tab-separated columns, got {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            // Multiword-token / empty-node lines carry no tree edges.
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| IoError::Conllu {
            path: path_str(path),
            line: lineno,
            message: format!("unparseable ID {:?}", cols[0]),
        })?;
        if id != tokens.len() + 1 {
            return Err(IoError::Conllu {
                path: path_str(path),
                line: lineno,
                message: format!("non-contiguous ID {id}, expected {}", tokens.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| IoError::Conllu {
            path: path_str(path),
            line: lineno,
            message: format!("unparseable HEAD {:?}", cols[6]),
        })?;
        tokens.push(cols[1].to_string());
        heads.push(head);
    }
    flush(&mut tokens, &mut heads)?;
    Ok(sentences)
}
