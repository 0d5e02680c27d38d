//! Batch frontend over the library: decode score files to CoNLL-U, check
//! temperature invariance, fit and report calibration, cross-check the
//! decoder against exhaustive search, and generate synthetic data.
//!
//! Exit codes are a stable contract: 0 success / all checks passed,
//! 1 input or format error, 2 decode failure or a violated check.

use arbocal::{
    arborescence_weight, brute_force_decode, calibration_report, canonicalize_scores, cle_decode,
    decode, generate, log_softmax_weights, read_scores, render_trees_conllu,
    root_constrained_decode, verify_invariance, weight_difference_identity, write_scores,
    write_trees_conllu, Arborescence, CalibrationError, CalibrationReport, DecodeError,
    DecodeOptions, GenError, GenSpec, GoldTree, InvarianceReport, IoError, Orientation,
    ScoreMatrix, SplitMix64, Temperature, MASK,
};
use clap::{Parser, Subcommand};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "arbocal",
    version,
    about = "Arborescence decoding and temperature calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode maximum-weight trees from a scores file to CoNLL-U.
    Decode {
        /// Input `.scores.json` file.
        scores: PathBuf,
        /// Require exactly one edge out of the root.
        #[arg(long)]
        root_constraint: bool,
        /// Softmax temperature; the decoded trees do not depend on it.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode at several temperatures and check the trees are identical.
    Verify {
        /// Input `.scores.json` file.
        scores: PathBuf,
        /// Comma-separated list, at least two entries.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1,2,10")]
        temperatures: Vec<f64>,
        /// Require exactly one edge out of the root.
        #[arg(long)]
        root_constraint: bool,
        /// Write a per-sentence JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a temperature to gold heads and report calibration metrics.
    Calibrate {
        /// Input `.scores.json` file; every sentence needs gold_heads.
        scores: PathBuf,
        /// Number of equal-width reliability bins.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Write the JSON report here, plus reliability CSV beside it
        /// (same path with a .csv extension). Without this flag the JSON
        /// goes to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cross-check fast decoding against exhaustive enumeration, and the
    /// weight-gap identity against raw score sums.
    Oracle {
        /// Optional scores file to check instead of synthetic matrices.
        scores: Option<PathBuf>,
        /// Largest node count to test (enumeration caps at 8).
        #[arg(long, default_value_t = 6)]
        n_max: usize,
        /// Number of synthetic trials.
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check the single-root-child decoder instead.
        #[arg(long)]
        root_constraint: bool,
    },
    /// Generate a synthetic scores file with known gold trees.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smallest node count per sentence (root included).
        #[arg(long, default_value_t = 2)]
        n_min: usize,
        /// Largest node count per sentence (root included).
        #[arg(long, default_value_t = 8)]
        n_max: usize,
        /// Half-width of the per-column additive logit offset.
        #[arg(long, default_value_t = 1.0)]
        logit_scale: f64,
        /// Multiplier on true log-probabilities; above 1 simulates an
        /// overconfident model.
        #[arg(long, default_value_t = 1.0)]
        sharpening: f64,
        /// Number of sentences.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    /// Bad input: unreadable or malformed files, invalid flags. Exit 1.
    Input(String),
    /// The algorithm failed or a checked property did not hold. Exit 2.
    Failure(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Failure(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Failure(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Decode(inner) => CliError::Failure(inner.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::GoldRejectionExceeded { .. } => CliError::Failure(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(message) = apply_thread_cap() {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

/// `ARBO_THREADS=k` caps the worker pool; unset leaves rayon's default.
fn apply_thread_cap() -> Result<(), String> {
    let Ok(raw) = std::env::var("ARBO_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&k| k >= 1)
        .ok_or_else(|| format!("ARBO_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Decode {
            scores,
            root_constraint,
            temperature,
            out,
        } => cmd_decode(scores, root_constraint, temperature, out),
        Command::Verify {
            scores,
            temperatures,
            root_constraint,
            report,
        } => cmd_verify(scores, temperatures, root_constraint, report),
        Command::Calibrate {
            scores,
            bins,
            report,
        } => cmd_calibrate(scores, bins, report),
        Command::Oracle {
            scores,
            n_max,
            trials,
            seed,
            root_constraint,
        } => cmd_oracle(scores, n_max, trials, seed, root_constraint),
        Command::Gen {
            seed,
            n_min,
            n_max,
            logit_scale,
            sharpening,
            count,
            out,
        } => cmd_gen(seed, n_min, n_max, logit_scale, sharpening, count, out),
    }
}

fn parse_temperature(value: f64) -> Result<Temperature, CliError> {
    Temperature::new(value).map_err(|e| CliError::Input(e.to_string()))
}

fn options_for(root_constraint: bool) -> DecodeOptions {
    DecodeOptions {
        root_constraint,
        ..DecodeOptions::default()
    }
}

fn cmd_decode(
    scores: PathBuf,
    root_constraint: bool,
    temperature: f64,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let t = parse_temperature(temperature)?;
    let sentences = read_scores(&scores)?;
    let options = options_for(root_constraint);
    let decoded: Result<Vec<(Vec<String>, Arborescence)>, DecodeError> = sentences
        .par_iter()
        .map(|(matrix, _)| {
            let w = log_softmax_weights(matrix, t);
            decode(&w, 0, options).map(|tree| {
                let tokens = matrix
                    .token_labels()
                    .expect("score files always carry tokens")
                    .to_vec();
                (tokens, tree)
            })
        })
        .collect();
    let decoded = decoded?;
    match out {
        Some(path) => write_trees_conllu(&decoded, &path)?,
        None => print!("{}", render_trees_conllu(&decoded)),
    }
    Ok(0)
}

#[derive(Serialize)]
struct VerifySentence {
    index: usize,
    identical: bool,
    /// True when any differing trees are weight ties at every checked
    /// temperature.
    tie_equivalent: bool,
    max_weight_gap: f64,
    /// Decoded parent vector (shared) when identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    parents: Option<Vec<Option<usize>>>,
    /// Decoded parent vector per temperature when they differ.
    #[serde(skip_serializing_if = "Option::is_none")]
    parents_per_temperature: Option<Vec<Vec<Option<usize>>>>,
}

#[derive(Serialize)]
struct VerifyReport {
    temperatures: Vec<f64>,
    root_constraint: bool,
    invariant: usize,
    total: usize,
    sentences: Vec<VerifySentence>,
}

fn cmd_verify(
    scores: PathBuf,
    temperatures: Vec<f64>,
    root_constraint: bool,
    report_path: Option<PathBuf>,
) -> Result<i32, CliError> {
    if temperatures.len() < 2 {
        return Err(CliError::Input(format!(
            "needs at least two temperatures to compare, got {}",
            temperatures.len()
        )));
    }
    let temps: Vec<Temperature> = temperatures
        .iter()
        .map(|&t| parse_temperature(t))
        .collect::<Result<_, _>>()?;
    let sentences = read_scores(&scores)?;
    let options = options_for(root_constraint);
    let reports: Vec<InvarianceReport> = sentences
        .par_iter()
        .map(|(matrix, _)| verify_invariance(matrix, 0, &temps, options))
        .collect::<Result<_, DecodeError>>()?;
    let total = reports.len();
    let invariant = reports.iter().filter(|r| r.all_identical).count();
    println!("{invariant}/{total} invariant");
    if let Some(path) = report_path {
        let sentences = reports
            .iter()
            .enumerate()
            .map(|(index, r)| VerifySentence {
                index,
                identical: r.all_identical,
                tie_equivalent: r.sign_consistent,
                max_weight_gap: r.max_weight_gap,
                parents: r.all_identical.then(|| r.trees[0].parents().to_vec()),
                parents_per_temperature: (!r.all_identical)
                    .then(|| r.trees.iter().map(|t| t.parents().to_vec()).collect()),
            })
            .collect();
        let report = VerifyReport {
            temperatures,
            root_constraint,
            invariant,
            total,
            sentences,
        };
        write_json(&path, &report)?;
    }
    Ok(if invariant == total { 0 } else { 2 })
}

fn cmd_calibrate(
    scores: PathBuf,
    bins: usize,
    report_path: Option<PathBuf>,
) -> Result<i32, CliError> {
    if bins == 0 {
        return Err(CliError::Input("bins must be at least 1".to_string()));
    }
    let sentences = read_scores(&scores)?;
    let instances: Vec<(ScoreMatrix, GoldTree)> = sentences
        .into_iter()
        .enumerate()
        .map(|(i, (matrix, gold))| {
            gold.map(|g| (matrix, g)).ok_or_else(|| {
                CliError::Input(format!(
                    "sentence {i}: missing gold heads, cannot calibrate"
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let report = calibration_report(&instances, bins)?;
    if report.uas_before.to_bits() != report.uas_after.to_bits() {
        return Err(CliError::Failure(format!(
            "decoded-tree attachment changed with temperature: {} at 1 vs {} at {}",
            report.uas_before, report.uas_after, report.fitted_temperature
        )));
    }
    match report_path {
        Some(path) => {
            write_json(&path, &report)?;
            write_reliability_csv(&path.with_extension("csv"), &report)?;
            print_calibration_summary(&report);
        }
        None => {
            let text = serde_json::to_string_pretty(&report)
                .expect("calibration reports always serialize");
            println!("{text}");
        }
    }
    Ok(0)
}

fn print_calibration_summary(report: &CalibrationReport) {
    println!("fitted_temperature: {}", report.fitted_temperature);
    println!("nll: {} -> {}", report.nll_before, report.nll_after);
    println!("ece: {} -> {}", report.ece_before, report.ece_after);
    println!("accuracy: {}", report.accuracy);
    println!(
        "uas: {} (identical at temperature 1 and fitted)",
        report.uas_after
    );
    println!("decisions: {}", report.total_decisions);
}

/// Reliability diagram of the fitted temperature, one bin per row.
fn write_reliability_csv(
    path: &std::path::Path,
    report: &CalibrationReport,
) -> Result<(), CliError> {
    let mut text = String::from("bin_lo,bin_hi,mean_conf,accuracy,count\n");
    for bin in &report.bins_after {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            bin.lo, bin.hi, bin.mean_confidence, bin.accuracy, bin.count
        ));
    }
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn random_scores(rng: &mut SplitMix64, n: usize) -> ScoreMatrix {
    let mut raw = Array2::zeros((n, n));
    for h in 0..n {
        for d in 0..n {
            raw[[h, d]] = 8.0 * rng.next_f64() - 4.0;
        }
    }
    canonicalize_scores(raw, Orientation::HeadsRows)
        .expect("finite dense matrices always canonicalize")
}

fn random_tree(rng: &mut SplitMix64, n: usize) -> Arborescence {
    loop {
        let mut parents = vec![None; n];
        for (d, slot) in parents.iter_mut().enumerate().skip(1) {
            let mut h = rng.next_in_range(0, n - 2);
            if h >= d {
                h += 1;
            }
            *slot = Some(h);
        }
        if let Ok(tree) = Arborescence::new(0, parents) {
            return tree;
        }
    }
}

/// A tree pair avoiding masked edges, so the weight-gap identity stays
/// finite; None when the matrix is too masked to find one quickly.
fn finite_tree_pair(
    rng: &mut SplitMix64,
    matrix: &ScoreMatrix,
) -> Option<(Arborescence, Arborescence)> {
    let unmasked = |tree: &Arborescence| tree.edges().all(|(h, d)| matrix.score(h, d) != MASK);
    let mut pick = || {
        for _ in 0..200 {
            let tree = random_tree(rng, matrix.n());
            if unmasked(&tree) {
                return Some(tree);
            }
        }
        None
    };
    Some((pick()?, pick()?))
}

fn cmd_oracle(
    scores: Option<PathBuf>,
    n_max: usize,
    trials: usize,
    seed: u64,
    root_constraint: bool,
) -> Result<i32, CliError> {
    if !(2..=8).contains(&n_max) {
        return Err(CliError::Input(format!(
            "n-max must be between 2 and 8 (exhaustive enumeration bound), got {n_max}"
        )));
    }
    let options = options_for(root_constraint);
    let mut rng = SplitMix64::new(seed);
    let matrices: Vec<ScoreMatrix> = match scores {
        Some(path) => read_scores(&path)?
            .into_iter()
            .map(|(matrix, _)| matrix)
            .collect(),
        None => (0..trials)
            .map(|_| {
                let n = rng.next_in_range(2, n_max);
                random_scores(&mut rng, n)
            })
            .collect(),
    };
    let mut skipped = 0usize;
    let mut equivalence_ok = 0usize;
    let mut equivalence_total = 0usize;
    let mut identity_ok = 0usize;
    let mut identity_total = 0usize;
    for matrix in &matrices {
        if matrix.n() > n_max {
            skipped += 1;
            continue;
        }
        equivalence_total += 1;
        let w = log_softmax_weights(matrix, Temperature::ONE);
        let fast = if root_constraint {
            root_constrained_decode(&w, 0)
        } else {
            cle_decode(&w, 0)
        };
        let slow = brute_force_decode(&w, 0, options);
        let agreed = match (&fast, &slow) {
            (Ok(f), Ok(s)) => {
                let best = arborescence_weight(s, &w);
                let gap = arborescence_weight(f, &w) - best;
                gap.abs() <= 1e-9 * best.abs().max(1.0)
            }
            (Err(DecodeError::Infeasible), Err(DecodeError::Infeasible)) => true,
            _ => false,
        };
        if agreed {
            equivalence_ok += 1;
        }

        if let Some((a, b)) = finite_tree_pair(&mut rng, matrix) {
            identity_total += 1;
            let ln_t = 0.05f64.ln() + rng.next_f64() * (20f64.ln() - 0.05f64.ln());
            let t = Temperature::new(ln_t.exp()).expect("interval is positive");
            let (lhs, rhs) = weight_difference_identity(&a, &b, matrix, t);
            if (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0) {
                identity_ok += 1;
            }
        }
    }
    println!("equivalence: {equivalence_ok}/{equivalence_total}");
    println!("identity: {identity_ok}/{identity_total}");
    if skipped > 0 {
        println!("skipped: {skipped} sentences larger than n-max");
    }
    Ok(
        if equivalence_ok == equivalence_total && identity_ok == identity_total {
            0
        } else {
            2
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    seed: u64,
    n_min: usize,
    n_max: usize,
    logit_scale: f64,
    sharpening: f64,
    count: usize,
    out: PathBuf,
) -> Result<i32, CliError> {
    let spec = GenSpec {
        seed,
        n_range: (n_min, n_max),
        logit_scale,
        sharpening,
        count,
    };
    let instances: Vec<(ScoreMatrix, Option<GoldTree>)> = generate(&spec)?
        .into_iter()
        .map(|(matrix, gold)| (matrix, Some(gold)))
        .collect();
    write_scores(&out, &instances)?;
    Ok(0)
}
