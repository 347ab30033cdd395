//! Shared oracles for the integration and acceptance suites. Everything in
//! here recomputes results through an independent route (pointer trees,
//! forward tag propagation, exhaustive search) so the flat-array and
//! interval-arithmetic implementations are checked against structure, not
//! against themselves.

use std::collections::{HashMap, HashSet};

use rand::Rng;

use gptrace::engine::{self, Algorithm, RunConfig, RunOutcome};
use gptrace::exprtree::{ExpressionTree, Node, OpKind, Symbol};
use gptrace::genealogy::{ArcKind, GenealogyGraph, GenealogyRecorder, VertexId};
use gptrace::problems::{generate_dataset, Dataset, Problem, ProblemId};
use gptrace::trace::TraceGraph;

/// Ordinary pointer-based binary tree; the structural reference
/// implementation for preorder arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub enum PtrTree {
    Leaf(Symbol),
    Branch(OpKind, Box<PtrTree>, Box<PtrTree>),
}

impl PtrTree {
    pub fn from_flat(tree: &ExpressionTree) -> PtrTree {
        fn build(nodes: &[Node], i: usize) -> (PtrTree, usize) {
            match nodes[i].symbol {
                Symbol::Op(op) => {
                    let (left, after_left) = build(nodes, i + 1);
                    let (right, after_right) = build(nodes, after_left);
                    (PtrTree::Branch(op, Box::new(left), Box::new(right)), after_right)
                }
                leaf => (PtrTree::Leaf(leaf), i + 1),
            }
        }
        build(tree.nodes(), 0).0
    }

    pub fn to_flat(&self) -> ExpressionTree {
        fn emit(node: &PtrTree, out: &mut Vec<Node>) -> usize {
            match node {
                PtrTree::Leaf(symbol) => {
                    out.push(Node { symbol: *symbol, subtree_len: 1 });
                    1
                }
                PtrTree::Branch(op, l, r) => {
                    let at = out.len();
                    out.push(Node { symbol: Symbol::Op(*op), subtree_len: 0 });
                    let ll = emit(l, out);
                    let rl = emit(r, out);
                    out[at].subtree_len = 1 + ll + rl;
                    1 + ll + rl
                }
            }
        }
        let mut nodes = Vec::new();
        emit(self, &mut nodes);
        ExpressionTree::from_nodes(nodes)
    }

    pub fn size(&self) -> usize {
        match self {
            PtrTree::Leaf(_) => 1,
            PtrTree::Branch(_, l, r) => 1 + l.size() + r.size(),
        }
    }

    /// Preorder positions strictly inside the subtree rooted at `target`,
    /// computed by traversal with an "inside" flag.
    pub fn strict_descendants(&self, target: usize) -> HashSet<usize> {
        fn walk(
            node: &PtrTree,
            pos: &mut usize,
            inside: bool,
            target: usize,
            out: &mut HashSet<usize>,
        ) {
            let me = *pos;
            *pos += 1;
            if inside {
                out.insert(me);
            }
            let now_inside = inside || me == target;
            if let PtrTree::Branch(_, l, r) = node {
                walk(l, pos, now_inside, target, out);
                walk(r, pos, now_inside, target, out);
            }
        }
        let mut out = HashSet::new();
        walk(self, &mut 0, false, target, &mut out);
        out
    }

    /// Size of the subtree rooted at preorder position `target`, found by
    /// walking rather than by stored lengths.
    pub fn subtree_size_at(&self, target: usize) -> usize {
        fn find<'a>(node: &'a PtrTree, pos: &mut usize, target: usize) -> Option<&'a PtrTree> {
            let me = *pos;
            *pos += 1;
            if me == target {
                return Some(node);
            }
            if let PtrTree::Branch(_, l, r) = node {
                if let Some(hit) = find(l, pos, target) {
                    return Some(hit);
                }
                return find(r, pos, target);
            }
            None
        }
        find(self, &mut 0, target).expect("target within tree").size()
    }

    /// Replaces the subtree at preorder position `target` with `fragment`.
    pub fn replace_at_preorder(&self, target: usize, fragment: &PtrTree) -> PtrTree {
        fn go(node: &PtrTree, pos: usize, target: usize, fragment: &PtrTree) -> PtrTree {
            if pos == target {
                return fragment.clone();
            }
            match node {
                PtrTree::Leaf(_) => node.clone(),
                PtrTree::Branch(op, l, r) => {
                    let left_start = pos + 1;
                    let right_start = left_start + l.size();
                    let nl = if (left_start..right_start).contains(&target) {
                        go(l, left_start, target, fragment)
                    } else {
                        l.as_ref().clone()
                    };
                    let nr = if target >= right_start {
                        go(r, right_start, target, fragment)
                    } else {
                        r.as_ref().clone()
                    };
                    PtrTree::Branch(*op, Box::new(nl), Box::new(nr))
                }
            }
        }
        go(self, 0, target, fragment)
    }
}

/// Forward node-tagging oracle: replays the event log front to back, giving
/// every node of every genotype the id of the vertex where it was born.
pub fn birth_tags(graph: &GenealogyGraph) -> HashMap<u64, Vec<u64>> {
    let mut tags: HashMap<u64, Vec<u64>> = HashMap::new();
    for v in graph.vertices() {
        let incoming: Vec<_> = graph.incoming(v.id).collect();
        let t: Vec<u64> = if incoming.is_empty() {
            vec![v.id.0; v.tree.len()]
        } else if let Some(m) = incoming.iter().find(|a| a.kind == ArcKind::Mutation) {
            let rec = m.mutation.expect("mutation arc carries a record");
            let parent = &tags[&m.from.0];
            let mut t = Vec::with_capacity(v.tree.len());
            t.extend_from_slice(&parent[..rec.region_before.index]);
            t.extend(std::iter::repeat_n(v.id.0, rec.region_after.len));
            t.extend_from_slice(&parent[rec.region_before.end()..]);
            t
        } else {
            let root = incoming
                .iter()
                .find(|a| a.kind == ArcKind::RootParent)
                .expect("non-origin vertex has a root parent arc");
            let non_root = incoming.iter().find(|a| a.kind == ArcKind::NonRootParent);
            match (&root.crossover, non_root) {
                (Some(rec), Some(nr)) => {
                    let p0 = &tags[&root.from.0];
                    let p1 = &tags[&nr.from.0];
                    let mut t = Vec::with_capacity(v.tree.len());
                    t.extend_from_slice(&p0[..rec.parent0_removed.index]);
                    t.extend_from_slice(
                        &p1[rec.parent1_fragment.index..rec.parent1_fragment.end()],
                    );
                    t.extend_from_slice(&p0[rec.parent0_removed.end()..]);
                    t
                }
                // plain copy, or a crossover degenerated to one
                _ => tags[&root.from.0].clone(),
            }
        };
        assert_eq!(t.len(), v.tree.len(), "tag length mismatch at vertex {}", v.id);
        tags.insert(v.id.0, t);
    }
    tags
}

/// Origin of node `k` of `v` according to a trace graph: follow the arc
/// whose transmitted interval covers the node until no arc covers it.
pub fn trace_origin_of(tg: &TraceGraph, v: VertexId, k: usize) -> VertexId {
    for arc in tg.arcs() {
        if arc.to == v && arc.transmitted.index <= k && k < arc.transmitted.end() {
            return trace_origin_of(tg, arc.from, arc.source.index + (k - arc.transmitted.index));
        }
    }
    v
}

/// Unordered subtree isomorphism by direct recursion; the independent
/// route behind the bottom-up mapping oracle.
pub fn subtree_iso(t1: &ExpressionTree, i: usize, t2: &ExpressionTree, j: usize) -> bool {
    match (t1.node(i).symbol, t2.node(j).symbol) {
        (Symbol::Op(a), Symbol::Op(b)) => {
            if a != b {
                return false;
            }
            let l1 = i + 1;
            let r1 = l1 + t1.node(l1).subtree_len;
            let l2 = j + 1;
            let r2 = l2 + t2.node(l2).subtree_len;
            (subtree_iso(t1, l1, t2, l2) && subtree_iso(t1, r1, t2, r2))
                || (subtree_iso(t1, l1, t2, r2) && subtree_iso(t1, r1, t2, l2))
        }
        (Symbol::Constant(x), Symbol::Constant(y)) => x.to_bits() == y.to_bits(),
        (
            Symbol::Variable { index: a, weight: wa },
            Symbol::Variable { index: b, weight: wb },
        ) => a == b && wa.to_bits() == wb.to_bits(),
        _ => false,
    }
}

/// Exhaustive maximum bottom-up mapping size: branch and bound over all
/// isomorphic subtree pairs with disjointness in both trees. Only suitable
/// for small trees.
pub fn max_bottom_up_mapping(t1: &ExpressionTree, t2: &ExpressionTree) -> usize {
    assert!(t1.len() <= 64 && t2.len() <= 64);
    let mask = |start: usize, l: usize| -> u64 { ((((1u128 << l) - 1) << start) & u64::MAX as u128) as u64 };
    let mut pairs: Vec<(u64, u64, usize)> = Vec::new();
    for i in 0..t1.len() {
        for j in 0..t2.len() {
            if subtree_iso(t1, i, t2, j) {
                let len = t1.node(i).subtree_len;
                pairs.push((mask(i, len), mask(j, len), len));
            }
        }
    }
    pairs.sort_by_key(|&(_, _, len)| std::cmp::Reverse(len));
    let mut suffix = vec![0usize; pairs.len() + 1];
    for k in (0..pairs.len()).rev() {
        suffix[k] = suffix[k + 1] + pairs[k].2;
    }
    fn dfs(
        pairs: &[(u64, u64, usize)],
        suffix: &[usize],
        k: usize,
        used1: u64,
        used2: u64,
        acc: usize,
        best: &mut usize,
    ) {
        *best = (*best).max(acc);
        if k == pairs.len() || acc + suffix[k] <= *best {
            return;
        }
        let (m1, m2, len) = pairs[k];
        if used1 & m1 == 0 && used2 & m2 == 0 {
            dfs(pairs, suffix, k + 1, used1 | m1, used2 | m2, acc + len, best);
        }
        dfs(pairs, suffix, k + 1, used1, used2, acc, best);
    }
    let mut best = 0;
    dfs(&pairs, &suffix, 0, 0, 0, 0, &mut best);
    best
}

/// Random tree of at most `max_nodes` nodes over a small discrete symbol
/// pool, so structures actually repeat across trees.
pub fn random_small_tree<R: Rng>(rng: &mut R, max_nodes: usize) -> ExpressionTree {
    let sizes: Vec<usize> = (0..).map(|k| 2 * k + 1).take_while(|&s| s <= max_nodes).collect();
    let size = sizes[rng.gen_range(0..sizes.len())];
    fn leaf<R: Rng>(rng: &mut R) -> PtrTree {
        PtrTree::Leaf(match rng.gen_range(0..4) {
            0 => Symbol::Variable { index: 0, weight: 1.0 },
            1 => Symbol::Variable { index: 1, weight: 1.0 },
            2 => Symbol::Constant(1.0),
            _ => Symbol::Constant(2.0),
        })
    }
    fn build<R: Rng>(rng: &mut R, size: usize) -> PtrTree {
        if size == 1 {
            return leaf(rng);
        }
        let op = OpKind::ALL[rng.gen_range(0..OpKind::ALL.len())];
        let halves = (size - 1) / 2;
        let left = 2 * rng.gen_range(0..halves) + 1;
        PtrTree::Branch(op, Box::new(build(rng, left)), Box::new(build(rng, size - 1 - left)))
    }
    build(rng, size).to_flat()
}

/// A small recorded run for oracle checks.
pub fn micro_run(
    algorithm: Algorithm,
    seed: u64,
    problem: ProblemId,
) -> (GenealogyGraph, RunOutcome, Dataset) {
    let dataset = generate_dataset(&Problem::standard(problem), seed);
    let mut cfg = RunConfig::new(algorithm, seed);
    cfg.population_size = 8;
    cfg.max_generations = 5;
    cfg.mutation_rate = 0.3;
    let mut recorder = GenealogyRecorder::in_memory(None);
    let outcome = engine::run(&cfg, &dataset, &mut recorder).expect("micro run");
    (recorder.finish().expect("finish"), outcome, dataset)
}
