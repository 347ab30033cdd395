//! Genetic operators and selection schemes. Every structure-changing
//! operator reports the exact preorder coordinates of what it touched, so
//! the genealogy can be replayed and traced fragment by fragment.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::exprtree::{
    random_subtree, ExpressionTree, Grammar, Node, OpKind, SubtreeRef, Symbol, TreeLimits,
};
use crate::metrics::pearson_r2;

/// Coordinates of one subtree crossover.
///
/// `child_fragment` locates the received fragment in the child,
/// `parent1_fragment` its origin in the non-root parent, and
/// `parent0_removed` the subtree it replaced in the root parent.
/// The preorder prefix before the cut is unchanged by the splice, so
/// `child_fragment.index == parent0_removed.index`, and the fragment keeps
/// its length: `child_fragment.len == parent1_fragment.len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrossoverRecord {
    pub child_fragment: SubtreeRef,
    pub parent1_fragment: SubtreeRef,
    pub parent0_removed: SubtreeRef,
}

/// Coordinates of one mutation: the affected subtree before and after.
/// Indices are equal; only the length may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MutationRecord {
    pub region_before: SubtreeRef,
    pub region_after: SubtreeRef,
}

/// Maximised solution quality in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Fitness {
    pub quality: f64,
}

impl Fitness {
    pub const ZERO: Fitness = Fitness { quality: 0.0 };

    pub fn new(quality: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&quality));
        Fitness { quality }
    }
}

/// Result of a subtree crossover. When the retry budget runs out the child
/// is a plain copy of the root parent and `degenerate` is set; the record
/// then marks a self-replacement at the last chosen cut.
#[derive(Clone, Debug)]
pub struct Crossover {
    pub child: ExpressionTree,
    pub rec: CrossoverRecord,
    pub degenerate: bool,
}

const CROSSOVER_RETRIES: usize = 100;

/// How crossover picks its cut points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CutBias {
    /// Every node is equally likely.
    Uniform,
    /// Prefer internal nodes with the given probability (0.9 is the common
    /// convention), falling back to leaves otherwise.
    Internal(f64),
}

impl Default for CutBias {
    fn default() -> Self {
        CutBias::Internal(0.9)
    }
}

impl std::fmt::Display for CutBias {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CutBias::Uniform => write!(f, "uniform"),
            CutBias::Internal(p) => write!(f, "{p}"),
        }
    }
}

impl std::str::FromStr for CutBias {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "uniform" {
            return Ok(CutBias::Uniform);
        }
        let p: f64 = s.parse().map_err(|_| format!("expected `uniform` or a probability, got `{s}`"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("internal-node bias {p} outside [0, 1]"));
        }
        Ok(CutBias::Internal(p))
    }
}

fn pick_cut<R: Rng>(rng: &mut R, tree: &ExpressionTree, bias: CutBias) -> SubtreeRef {
    let index = match bias {
        CutBias::Uniform => rng.gen_range(0..tree.len()),
        CutBias::Internal(p) => {
            let internal: Vec<usize> =
                (0..tree.len()).filter(|&i| tree.node(i).symbol.arity() > 0).collect();
            if internal.is_empty() {
                0
            } else if rng.gen_bool(p) {
                internal[rng.gen_range(0..internal.len())]
            } else {
                let leaves: Vec<usize> =
                    (0..tree.len()).filter(|&i| tree.node(i).symbol.arity() == 0).collect();
                leaves[rng.gen_range(0..leaves.len())]
            }
        }
    };
    tree.subtree_at(index)
}

/// Splices `fragment_ref` of `parent1` into `parent0` at `at` and reports
/// the exact coordinates. No limit checks; see [`subtree_crossover`].
pub fn crossover_at(
    parent0: &ExpressionTree,
    at: SubtreeRef,
    parent1: &ExpressionTree,
    fragment_ref: SubtreeRef,
) -> (ExpressionTree, CrossoverRecord) {
    let fragment = parent1.extract(fragment_ref);
    let child = parent0.replace_subtree(at, &fragment);
    let rec = CrossoverRecord {
        child_fragment: SubtreeRef::new(at.index, fragment_ref.len),
        parent1_fragment: fragment_ref,
        parent0_removed: at,
    };
    (child, rec)
}

/// Subtree crossover with cut points chosen per `bias`, resampled until the
/// child respects `limits` (bounded retries).
pub fn subtree_crossover<R: Rng>(
    rng: &mut R,
    parent0: &ExpressionTree,
    parent1: &ExpressionTree,
    limits: &TreeLimits,
    bias: CutBias,
) -> Crossover {
    let mut last_at = SubtreeRef::new(0, parent0.len());
    for _ in 0..CROSSOVER_RETRIES {
        let at = pick_cut(rng, parent0, bias);
        last_at = at;
        let frag = pick_cut(rng, parent1, bias);
        if parent0.len() - at.len + frag.len > limits.max_length {
            continue;
        }
        let (child, rec) = crossover_at(parent0, at, parent1, frag);
        if child.depth() > limits.max_depth {
            continue;
        }
        return Crossover { child, rec, degenerate: false };
    }
    Crossover {
        child: parent0.clone(),
        rec: CrossoverRecord {
            child_fragment: last_at,
            parent1_fragment: last_at,
            parent0_removed: last_at,
        },
        degenerate: true,
    }
}

#[derive(Clone, Copy)]
enum MutationKind {
    Perturb,
    SymbolChange,
    SubtreeReplace,
}

/// Mutates `tree` with one of three equally likely operators: Gaussian
/// perturbation of a constant or variable weight, a single-node symbol
/// change of matching arity, or replacement of a subtree with a freshly
/// grown one. The record covers the minimal affected subtree.
pub fn mutate<R: Rng>(
    rng: &mut R,
    tree: &ExpressionTree,
    grammar: &Grammar,
    limits: &TreeLimits,
    sigma: f64,
) -> (ExpressionTree, MutationRecord) {
    let kind = match rng.gen_range(0..3) {
        0 => MutationKind::Perturb,
        1 => MutationKind::SymbolChange,
        _ => MutationKind::SubtreeReplace,
    };
    mutate_kind(rng, tree, grammar, limits, sigma, kind)
}

fn mutate_kind<R: Rng>(
    rng: &mut R,
    tree: &ExpressionTree,
    grammar: &Grammar,
    limits: &TreeLimits,
    sigma: f64,
    kind: MutationKind,
) -> (ExpressionTree, MutationRecord) {
    match kind {
        MutationKind::Perturb => {
            let leaves: Vec<usize> = (0..tree.len())
                .filter(|&i| tree.node(i).symbol.arity() == 0)
                .collect();
            let i = leaves[rng.gen_range(0..leaves.len())];
            let noise = Normal::new(0.0, sigma).unwrap().sample(rng);
            let symbol = match tree.node(i).symbol {
                Symbol::Constant(c) => Symbol::Constant(c + noise),
                Symbol::Variable { index, weight } => {
                    Symbol::Variable { index, weight: weight + noise }
                }
                Symbol::Op(_) => unreachable!(),
            };
            replace_single(tree, i, symbol)
        }
        MutationKind::SymbolChange => {
            // the record always names a whole subtree, so a changed operator
            // symbol marks the subtree rooted at it as affected
            let i = rng.gen_range(0..tree.len());
            let symbol = match tree.node(i).symbol {
                Symbol::Op(op) => {
                    let others: Vec<OpKind> =
                        OpKind::ALL.iter().copied().filter(|&o| o != op).collect();
                    Symbol::Op(others[rng.gen_range(0..others.len())])
                }
                Symbol::Constant(_) => {
                    if grammar.n_variables > 0 {
                        Symbol::Variable { index: rng.gen_range(0..grammar.n_variables), weight: 1.0 }
                    } else {
                        Symbol::Constant(
                            rng.gen_range(grammar.constant_range.0..=grammar.constant_range.1),
                        )
                    }
                }
                Symbol::Variable { index, weight } => {
                    if grammar.n_variables > 1 && rng.gen_bool(0.5) {
                        let mut new_index = rng.gen_range(0..grammar.n_variables - 1);
                        if new_index >= index {
                            new_index += 1;
                        }
                        Symbol::Variable { index: new_index, weight }
                    } else {
                        Symbol::Constant(
                            rng.gen_range(grammar.constant_range.0..=grammar.constant_range.1),
                        )
                    }
                }
            };
            replace_single(tree, i, symbol)
        }
        MutationKind::SubtreeReplace => {
            let at = tree.subtree_at(rng.gen_range(0..tree.len()));
            let len_budget = limits.max_length - (tree.len() - at.len);
            let depth_budget = limits.max_depth + 1 - tree.depth_to(at.index);
            let fragment = random_subtree(rng, grammar, depth_budget, len_budget);
            let mutant = tree.replace_subtree(at, &fragment);
            let rec = MutationRecord {
                region_before: at,
                region_after: SubtreeRef::new(at.index, fragment.len()),
            };
            (mutant, rec)
        }
    }
}

fn replace_single(
    tree: &ExpressionTree,
    i: usize,
    symbol: Symbol,
) -> (ExpressionTree, MutationRecord) {
    let mut nodes = tree.nodes().to_vec();
    nodes[i] = Node { symbol, subtree_len: nodes[i].subtree_len };
    let r = tree.subtree_at(i);
    (ExpressionTree::from_nodes(nodes), MutationRecord { region_before: r, region_after: r })
}

/// Quality of a tree on a dataset: the squared Pearson correlation between
/// its outputs and the target. Zero if either vector has no variance or any
/// output is non-finite.
pub fn fitness(tree: &ExpressionTree, data: &crate::exprtree::DataMatrix, target: &[f64]) -> Fitness {
    assert_eq!(data.rows(), target.len());
    let out = tree.evaluate(data);
    fitness_of_outputs(&out, target)
}

/// Same as [`fitness`] for precomputed outputs.
pub fn fitness_of_outputs(outputs: &[f64], target: &[f64]) -> Fitness {
    if outputs.iter().any(|v| !v.is_finite()) {
        return Fitness::ZERO;
    }
    Fitness::new(pearson_r2(outputs, target).clamp(0.0, 1.0))
}

/// Index of the best of `k` uniform draws with replacement; ties go to the
/// earliest draw.
pub fn tournament_select<R: Rng>(rng: &mut R, qualities: &[Fitness], k: usize) -> usize {
    assert!(!qualities.is_empty() && k >= 1);
    let mut best = rng.gen_range(0..qualities.len());
    for _ in 1..k {
        let i = rng.gen_range(0..qualities.len());
        if qualities[i].quality > qualities[best].quality {
            best = i;
        }
    }
    best
}

/// Gender-specific parent selection: the root parent by fitness-proportional
/// draw, the non-root parent uniformly. With all-zero qualities the
/// proportional draw degenerates to uniform.
pub fn gender_specific_select<R: Rng>(rng: &mut R, qualities: &[Fitness]) -> (usize, usize) {
    assert!(qualities.len() >= 2);
    (proportional_select(rng, qualities), rng.gen_range(0..qualities.len()))
}

fn proportional_select<R: Rng>(rng: &mut R, qualities: &[Fitness]) -> usize {
    let total: f64 = qualities.iter().map(|q| q.quality).sum();
    if total <= 0.0 {
        return rng.gen_range(0..qualities.len());
    }
    let x = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, q) in qualities.iter().enumerate() {
        acc += q.quality;
        if x < acc {
            return i;
        }
    }
    qualities.len() - 1
}
