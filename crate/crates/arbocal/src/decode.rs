//! Maximum spanning arborescence decoding.
//!
//! [`cle_decode`] runs Chu-Liu/Edmonds on dense edge weights: greedily pick
//! the best head per node, contract any cycle into a single node with
//! adjusted edge weights, recurse, then expand. [`brute_force_decode`]
//! scores every arborescence and exists to cross-check the fast decoder on
//! small inputs. [`root_constrained_decode`] restricts the search to trees
//! where the artificial root has exactly one child.

use crate::scores::{EdgeWeights, ScoreMatrix, Temperature, MASK};
use crate::tree::Arborescence;
use crate::weighting::{arborescence_weight, log_softmax_weights};
use ndarray::Array2;
use std::collections::HashMap;
use thiserror::Error;

/// Largest node count accepted by exhaustive enumeration; the candidate
/// space is n^(n-1) parent vectors.
pub const ENUMERATION_LIMIT: usize = 8;

/// Two decoded trees are considered tied when their weights at a shared
/// temperature differ by no more than this.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("need at least two nodes, got {n}")]
    TooSmall { n: usize },
    #[error("root index {root} out of range for {n} nodes")]
    BadRoot { root: usize, n: usize },
    #[error("no spanning arborescence with finite weight exists")]
    Infeasible,
    #[error("{n} nodes exceeds the enumeration limit of {limit}")]
    TooLargeToEnumerate { n: usize, limit: usize },
}

/// How equal-weight optima are ordered. There is exactly one policy; the
/// field exists so the choice is explicit in every decode configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Prefer the lexicographically smallest parent vector. The reference
    /// decoder implements this exactly; the fast decoder applies
    /// smallest-head-index choices locally, which agrees whenever the
    /// optimum is unique. Comparisons under genuine ties are therefore
    /// made at the weight level.
    #[default]
    LexSmallestParents,
}

/// Decoder configuration. `root_constraint` restricts the search to trees
/// in which exactly one node attaches to the root.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    pub root_constraint: bool,
    pub tie_break: TieBreak,
}

/// Decodes under the given options: plain maximum arborescence, or the
/// single-root-child variant.
pub fn decode(
    weights: &EdgeWeights,
    root: usize,
    options: DecodeOptions,
) -> Result<Arborescence, DecodeError> {
    if options.root_constraint {
        root_constrained_decode(weights, root)
    } else {
        cle_decode(weights, root)
    }
}

fn check_instance(n: usize, root: usize) -> Result<(), DecodeError> {
    if n < 2 {
        return Err(DecodeError::TooSmall { n });
    }
    if root >= n {
        return Err(DecodeError::BadRoot { root, n });
    }
    Ok(())
}

/// Maximum spanning arborescence rooted at `root`, via Chu-Liu/Edmonds.
/// O(n^3) on dense inputs. Ties break toward the smallest head index at
/// each local choice, so the result is deterministic.
pub fn cle_decode(weights: &EdgeWeights, root: usize) -> Result<Arborescence, DecodeError> {
    check_instance(weights.n(), root)?;
    let parents = cle_on_matrix(weights.values().clone(), root)?;
    Ok(Arborescence::new(root, parents).expect("decoder output is structurally valid"))
}

/// Maximum arborescence among trees whose root has exactly one child.
///
/// Runs one decode per candidate root child with every other root edge
/// masked; keeps the best resulting tree. Weight ties break toward the
/// lexicographically smallest parent vector.
pub fn root_constrained_decode(
    weights: &EdgeWeights,
    root: usize,
) -> Result<Arborescence, DecodeError> {
    let n = weights.n();
    check_instance(n, root)?;
    let mut best: Option<(f64, Arborescence)> = None;
    for child in (0..n).filter(|&c| c != root) {
        if weights.weight(root, child) == MASK {
            continue;
        }
        let mut w = weights.values().clone();
        for d in 0..n {
            if d != child {
                w[[root, d]] = MASK;
            }
        }
        let parents = match cle_on_matrix(w, root) {
            Ok(p) => p,
            Err(DecodeError::Infeasible) => continue,
            Err(e) => return Err(e),
        };
        let tree = Arborescence::new(root, parents).expect("decoder output is structurally valid");
        let wt = arborescence_weight(&tree, weights);
        let better = match &best {
            None => true,
            Some((bw, bt)) => wt > *bw || (wt == *bw && tree.parents() < bt.parents()),
        };
        if better {
            best = Some((wt, tree));
        }
    }
    best.map(|(_, t)| t).ok_or(DecodeError::Infeasible)
}

/// All arborescences on `n` nodes rooted at `root`, in lexicographic order
/// of their parent vectors: every vector in {0..n-1}^(n-1) is generated
/// and filtered by validity. The count on a complete graph is n^(n-2).
/// Supported for 2 <= n <= [`ENUMERATION_LIMIT`].
pub fn enumerate_arborescences(n: usize, root: usize) -> Result<Vec<Arborescence>, DecodeError> {
    if n > ENUMERATION_LIMIT {
        return Err(DecodeError::TooLargeToEnumerate {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    check_instance(n, root)?;
    let deps: Vec<usize> = (0..n).filter(|&d| d != root).collect();
    let mut choice = vec![0usize; deps.len()];
    let mut out = Vec::new();
    // Odometer with the rightmost dependent varying fastest, so parent
    // vectors are emitted in increasing lexicographic order.
    loop {
        let mut parents = vec![None; n];
        for (i, &d) in deps.iter().enumerate() {
            parents[d] = Some(choice[i]);
        }
        if let Ok(tree) = Arborescence::new(root, parents) {
            out.push(tree);
        }
        let mut i = deps.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] < n {
                break;
            }
            choice[i] = 0;
        }
    }
}

/// Reference decoder: scores every arborescence and returns the best one
/// with finite weight. The first maximizer in enumeration order wins, so
/// among tied optima this returns the lexicographically smallest parent
/// vector. Same size limits as [`enumerate_arborescences`].
pub fn brute_force_decode(
    weights: &EdgeWeights,
    root: usize,
    options: DecodeOptions,
) -> Result<Arborescence, DecodeError> {
    let mut best: Option<(f64, Arborescence)> = None;
    for tree in enumerate_arborescences(weights.n(), root)? {
        if options.root_constraint && tree.root_child_count() != 1 {
            continue;
        }
        let w = arborescence_weight(&tree, weights);
        if w == MASK {
            continue;
        }
        if best.as_ref().is_none_or(|(bw, _)| w > *bw) {
            best = Some((w, tree));
        }
    }
    best.map(|(_, t)| t).ok_or(DecodeError::Infeasible)
}

/// Outcome of decoding the same scores at several temperatures.
#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub temperatures: Vec<Temperature>,
    /// Decoded tree per temperature, same order as `temperatures`.
    pub trees: Vec<Arborescence>,
    pub all_identical: bool,
    /// True when every decoded tree is optimal at every temperature
    /// within [`TIE_TOLERANCE`]: any structural differences are then
    /// tie-breaks among equal-weight optima, and no weight comparison
    /// between two decoded trees changes sign across temperatures.
    pub sign_consistent: bool,
    /// Largest weight gap between any two decoded trees, evaluated at
    /// each decoding temperature. Zero when all trees are identical.
    pub max_weight_gap: f64,
}

impl InvarianceReport {
    /// Whether temperature left the decoded structure invariant, up to
    /// ties.
    pub fn holds(&self) -> bool {
        self.all_identical || self.sign_consistent
    }
}

/// Decodes `scores` at each temperature and checks that the tree does not
/// change. Scaling all scores by 1/t preserves every weight comparison
/// between trees, so the argmax tree is the same at every temperature;
/// this function verifies that numerically, tolerating tie-break flips
/// between exactly co-optimal trees.
///
/// Panics when fewer than two temperatures are supplied.
pub fn verify_invariance(
    scores: &ScoreMatrix,
    root: usize,
    temperatures: &[Temperature],
    options: DecodeOptions,
) -> Result<InvarianceReport, DecodeError> {
    assert!(temperatures.len() >= 2, "need at least two temperatures");
    let all_weights: Vec<EdgeWeights> = temperatures
        .iter()
        .map(|&t| log_softmax_weights(scores, t))
        .collect();
    let trees: Vec<Arborescence> = all_weights
        .iter()
        .map(|w| decode(w, root, options))
        .collect::<Result<_, _>>()?;
    let all_identical = trees.iter().all(|t| t == &trees[0]);
    let mut max_weight_gap = 0.0f64;
    if !all_identical {
        for (i, w) in all_weights.iter().enumerate() {
            let own = arborescence_weight(&trees[i], w);
            for other in &trees {
                max_weight_gap = max_weight_gap.max((own - arborescence_weight(other, w)).abs());
            }
        }
    }
    Ok(InvarianceReport {
        temperatures: temperatures.to_vec(),
        trees,
        all_identical,
        sign_consistent: all_identical || max_weight_gap <= TIE_TOLERANCE,
        max_weight_gap,
    })
}

fn cle_on_matrix(mut w: Array2<f64>, root: usize) -> Result<Vec<Option<usize>>, DecodeError> {
    let mut active = vec![true; w.nrows()];
    chu_liu_edmonds(&mut w, &mut active, root)
}

/// One recursion level: greedy selection, then either done or
/// contract-recurse-expand. On return, entries of the result are valid for
/// every node that was active at call time; `active` is left in the
/// deepest recursion's state and must not be reused by the caller.
fn chu_liu_edmonds(
    w: &mut Array2<f64>,
    active: &mut [bool],
    root: usize,
) -> Result<Vec<Option<usize>>, DecodeError> {
    let n = w.nrows();
    let mut parents: Vec<Option<usize>> = vec![None; n];
    for d in 0..n {
        if !active[d] || d == root {
            continue;
        }
        let mut best = None;
        let mut best_w = MASK;
        for h in 0..n {
            if !active[h] || h == d {
                continue;
            }
            // Strict comparison: masked edges never win, ties keep the
            // smallest head index.
            if w[[h, d]] > best_w {
                best_w = w[[h, d]];
                best = Some(h);
            }
        }
        match best {
            Some(h) => parents[d] = Some(h),
            None => return Err(DecodeError::Infeasible),
        }
    }
    let Some(mut cycle) = find_cycle(&parents, active, root) else {
        return Ok(parents);
    };
    cycle.sort_unstable();
    let rep = cycle[0];
    let mut in_cycle = vec![false; n];
    for &c in &cycle {
        in_cycle[c] = true;
    }
    let cycle_sum: f64 = cycle.iter().map(|&c| w[[parents[c].unwrap(), c]]).sum();
    // For each outside node, fold the cycle into `rep`: the best way in
    // pays the cycle total minus the displaced internal edge, the best way
    // out is a plain maximum. Maps remember which real cycle node each
    // folded edge touches.
    let mut entry_point: HashMap<usize, usize> = HashMap::new();
    let mut exit_point: HashMap<usize, usize> = HashMap::new();
    for o in 0..n {
        if !active[o] || in_cycle[o] {
            continue;
        }
        let mut best_in = MASK;
        let mut best_in_at = None;
        let mut best_out = MASK;
        let mut best_out_at = None;
        for &c in &cycle {
            let into = w[[o, c]] + (cycle_sum - w[[parents[c].unwrap(), c]]);
            if into > best_in {
                best_in = into;
                best_in_at = Some(c);
            }
            if w[[c, o]] > best_out {
                best_out = w[[c, o]];
                best_out_at = Some(c);
            }
        }
        w[[o, rep]] = best_in;
        if let Some(c) = best_in_at {
            entry_point.insert(o, c);
        }
        w[[rep, o]] = best_out;
        if let Some(c) = best_out_at {
            exit_point.insert(o, c);
        }
    }
    for &c in &cycle[1..] {
        active[c] = false;
    }
    let level_nodes: Vec<usize> = (0..n).filter(|&v| active[v]).collect();
    let mut result = chu_liu_edmonds(w, active, root)?;
    // Expansion. Edges the recursion attached to `rep` are folded edges:
    // re-point them at the true cycle nodes, then break the cycle where
    // the chosen incoming edge enters it.
    for &v in &level_nodes {
        if v != rep && v != root && result[v] == Some(rep) {
            result[v] = Some(exit_point[&v]);
        }
    }
    let chosen = result[rep].expect("a contracted cycle never contains the root");
    let entered = entry_point[&chosen];
    for &c in &cycle {
        result[c] = if c == entered {
            Some(chosen)
        } else {
            parents[c]
        };
    }
    Ok(result)
}

/// Finds any cycle among the selected parent edges of active nodes,
/// returning its members. Parent chains either reach the root or loop.
fn find_cycle(parents: &[Option<usize>], active: &[bool], root: usize) -> Option<Vec<usize>> {
    let n = parents.len();
    const UNSEEN: u8 = 0;
    const ON_PATH: u8 = 1;
    const DONE: u8 = 2;
    let mut state = vec![UNSEEN; n];
    for start in 0..n {
        if !active[start] || start == root || state[start] != UNSEEN {
            continue;
        }
        let mut node = start;
        while node != root && state[node] == UNSEEN {
            state[node] = ON_PATH;
            node = parents[node].expect("active non-root nodes have selected parents");
        }
        if node != root && state[node] == ON_PATH {
            let mut cycle = vec![node];
            let mut cur = parents[node].unwrap();
            while cur != node {
                cycle.push(cur);
                cur = parents[cur].unwrap();
            }
            return Some(cycle);
        }
        let mut cur = start;
        while cur != root && state[cur] == ON_PATH {
            state[cur] = DONE;
            cur = parents[cur].unwrap();
        }
    }
    None
}
