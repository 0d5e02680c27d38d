//! Rooted dependency trees as parent vectors, with structural validation.

use thiserror::Error;

/// A structural violation that disqualifies a parent vector from being an
/// arborescence. Each variant names the specific broken condition so callers
/// can report it distinctly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TreeViolation {
    #[error("parent vector has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("root index {root} out of range for {n} nodes")]
    RootOutOfRange { root: usize, n: usize },
    #[error("root {root} has a parent")]
    RootHasParent { root: usize },
    #[error("self-loop at node {node}")]
    SelfLoop { node: usize },
    #[error("parent index {head} of node {node} out of range for {n} nodes")]
    HeadOutOfRange { node: usize, head: usize, n: usize },
    #[error("node {node} is unreachable from the root (no parent)")]
    Unreachable { node: usize },
    #[error("cycle detected through node {node}")]
    CycleDetected { node: usize },
}

/// Checks that `parents` encodes a valid arborescence over `n` nodes
/// rooted at `root`: the root has no parent, every other node has one,
/// there are no self-loops, and following parents from any node reaches
/// the root. Returns the first violated condition.
pub fn validate_arborescence(
    parents: &[Option<usize>],
    root: usize,
    n: usize,
) -> Result<(), TreeViolation> {
    if parents.len() != n {
        return Err(TreeViolation::LengthMismatch {
            expected: n,
            got: parents.len(),
        });
    }
    if root >= n {
        return Err(TreeViolation::RootOutOfRange { root, n });
    }
    if parents[root].is_some() {
        return Err(TreeViolation::RootHasParent { root });
    }
    for (node, &parent) in parents.iter().enumerate() {
        if node == root {
            continue;
        }
        match parent {
            None => return Err(TreeViolation::Unreachable { node }),
            Some(head) if head == node => return Err(TreeViolation::SelfLoop { node }),
            Some(head) if head >= n => return Err(TreeViolation::HeadOutOfRange { node, head, n }),
            Some(_) => {}
        }
    }
    // Walk each parent chain once; nodes already shown to reach the root are
    // skipped, so the whole pass is O(n).
    let mut state = vec![WalkState::Unvisited; n];
    state[root] = WalkState::ReachesRoot;
    for start in 0..n {
        if state[start] != WalkState::Unvisited {
            continue;
        }
        let mut node = start;
        while state[node] == WalkState::Unvisited {
            state[node] = WalkState::OnPath;
            node = parents[node].expect("non-root nodes have parents after the checks above");
        }
        let outcome = state[node];
        let mut walk = start;
        while state[walk] == WalkState::OnPath {
            state[walk] = WalkState::ReachesRoot;
            walk = parents[walk].expect("path nodes are non-root");
        }
        if outcome == WalkState::OnPath {
            // The chain re-entered itself before reaching the root.
            return Err(TreeViolation::CycleDetected { node });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WalkState {
    Unvisited,
    OnPath,
    ReachesRoot,
}

/// A directed spanning tree over `n` nodes, stored as a parent vector.
/// `parents[d]` is the head of node `d`; the root's entry is `None`.
///
/// Instances are validated on construction, so holding an `Arborescence`
/// guarantees the structural invariants (single head per non-root node,
/// no cycles, no self-loops).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arborescence {
    root: usize,
    parents: Vec<Option<usize>>,
}

impl Arborescence {
    pub fn new(root: usize, parents: Vec<Option<usize>>) -> Result<Self, TreeViolation> {
        validate_arborescence(&parents, root, parents.len())?;
        Ok(Self { root, parents })
    }

    pub fn n(&self) -> usize {
        self.parents.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn parent_of(&self, node: usize) -> Option<usize> {
        self.parents[node]
    }

    /// Edges as `(head, dependent)` pairs, in dependent order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(dep, head)| head.map(|h| (h, dep)))
    }

    /// Number of direct children of the root.
    pub fn root_child_count(&self) -> usize {
        self.edges().filter(|&(head, _)| head == self.root).count()
    }
}

/// A reference parse used as the gold standard in calibration metrics.
/// Structurally identical to [`Arborescence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTree(Arborescence);

impl GoldTree {
    pub fn new(tree: Arborescence) -> Self {
        Self(tree)
    }

    pub fn tree(&self) -> &Arborescence {
        &self.0
    }

    /// Gold head of a non-root node. Panics if called on the root.
    pub fn head_of(&self, node: usize) -> usize {
        self.0
            .parent_of(node)
            .expect("gold head queried for the root node")
    }
}

impl From<Arborescence> for GoldTree {
    fn from(tree: Arborescence) -> Self {
        Self::new(tree)
    }
}
