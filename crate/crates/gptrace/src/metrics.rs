//! Post-hoc measurements over a genealogy: operator improvement, set
//! overlap, genotype/phenotype similarity and the contribution ratio.
//! Everything here reads the recorded log; nothing feeds back into a run.

use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::exprtree::{DataMatrix, ExpressionTree, OpKind, Symbol};
use crate::genealogy::{ArcKind, GenealogyGraph, LogError, VertexId};
use crate::par;
use crate::trace::trace_lineage;

/// Squared Pearson correlation of two equally long, finite vectors.
/// Returns 0 when either vector has no variance.
pub fn pearson_r2(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    // r^2 as cov^2 / (vx * vy); square first so identical vectors give 1.0
    ((cov * cov) / (vx * vy)).clamp(0.0, 1.0)
}

/// Sørensen-Dice coefficient `2|a∩b| / (|a|+|b|)`. Panics when both sets
/// are empty, where the measure is undefined.
pub fn dice<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    assert!(!a.is_empty() || !b.is_empty(), "dice is undefined for two empty sets");
    let common = a.intersection(b).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Jaccard index `|a∩b| / |a∪b|`. Panics when both sets are empty.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    assert!(!a.is_empty() || !b.is_empty(), "jaccard is undefined for two empty sets");
    let common = a.intersection(b).count();
    common as f64 / (a.len() + b.len() - common) as f64
}

/// Mean of `f` over unordered index pairs of `0..n`: exhaustive when there
/// are at most `budget` pairs, otherwise `budget` uniformly sampled pairs,
/// deterministic per seed. `None` when fewer than two elements exist.
pub fn pair_mean<F>(n: usize, budget: usize, seed: u64, f: F) -> Option<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if n < 2 {
        return None;
    }
    let total = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= budget {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..budget)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let values = par::map_slice(&pairs, |&(i, j)| f(i, j));
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean pairwise Dice coefficient over a family of lineage or trace sets.
pub fn avg_relative_overlap<T: Eq + Hash + Sync>(
    sets: &[HashSet<T>],
    budget: usize,
    seed: u64,
) -> Option<f64> {
    pair_mean(sets.len(), budget, seed, |i, j| dice(&sets[i], &sets[j]))
}

/// How node labels compare when building subtree-isomorphism classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantCompare {
    /// Bit-exact comparison of constants and variable weights.
    Exact,
    /// Round to nine significant digits first, so constants that drifted by
    /// tiny mutation noise can still map.
    Relative,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum LabelKey {
    Op(OpKind),
    Const(u64),
    Var(usize, u64),
}

fn float_key(v: f64, cmp: ConstantCompare) -> u64 {
    match cmp {
        ConstantCompare::Exact => v.to_bits(),
        ConstantCompare::Relative => {
            use std::collections::hash_map::DefaultHasher;
            use std::hash::Hasher;
            let mut h = DefaultHasher::new();
            h.write(format!("{v:.9e}").as_bytes());
            h.finish()
        }
    }
}

const LEAF: u64 = u64::MAX;

/// Assigns each node a class id such that two nodes share a class iff their
/// subtrees are isomorphic as unordered trees (children compared as a
/// multiset). The interner is shared across trees.
fn subtree_classes(
    tree: &ExpressionTree,
    interner: &mut HashMap<(LabelKey, u64, u64), u64>,
    cmp: ConstantCompare,
) -> Vec<u64> {
    let mut classes = vec![0u64; tree.len()];
    let mut stack: Vec<u64> = Vec::new();
    for i in (0..tree.len()).rev() {
        let key = match tree.node(i).symbol {
            Symbol::Op(op) => {
                let left = stack.pop().unwrap();
                let right = stack.pop().unwrap();
                (LabelKey::Op(op), left.min(right), left.max(right))
            }
            Symbol::Constant(c) => (LabelKey::Const(float_key(c, cmp)), LEAF, LEAF),
            Symbol::Variable { index, weight } => {
                (LabelKey::Var(index, float_key(weight, cmp)), LEAF, LEAF)
            }
        };
        let next = interner.len() as u64;
        let class = *interner.entry(key).or_insert(next);
        classes[i] = class;
        stack.push(class);
    }
    classes
}

/// Structural similarity `2|M| / (|T1|+|T2|)` where `M` is a largest
/// bottom-up mapping: disjoint pairs of isomorphic subtrees, matched
/// greedily largest-first. Bit-exact constant comparison.
pub fn genotype_similarity(t1: &ExpressionTree, t2: &ExpressionTree) -> f64 {
    genotype_similarity_with(t1, t2, ConstantCompare::Exact)
}

pub fn genotype_similarity_with(
    t1: &ExpressionTree,
    t2: &ExpressionTree,
    cmp: ConstantCompare,
) -> f64 {
    let mut interner = HashMap::new();
    let c1 = subtree_classes(t1, &mut interner, cmp);
    let c2 = subtree_classes(t2, &mut interner, cmp);

    let mut by_class: HashMap<u64, Vec<usize>> = HashMap::new();
    for (j, &c) in c2.iter().enumerate() {
        by_class.entry(c).or_default().push(j);
    }
    let mut order: Vec<usize> = (0..t1.len()).collect();
    order.sort_by_key(|&i| (Reverse(t1.node(i).subtree_len), i));

    let mut used1 = vec![false; t1.len()];
    let mut used2 = vec![false; t2.len()];
    let mut mapped = 0usize;
    for i in order {
        if used1[i] {
            continue;
        }
        let Some(candidates) = by_class.get(&c1[i]) else { continue };
        let Some(&j) = candidates.iter().find(|&&j| !used2[j]) else { continue };
        let len = t1.node(i).subtree_len;
        debug_assert_eq!(len, t2.node(j).subtree_len, "same class implies same size");
        mapped += len;
        used1[i..i + len].fill(true);
        used2[j..j + len].fill(true);
    }
    2.0 * mapped as f64 / (t1.len() + t2.len()) as f64
}

/// Semantic similarity: squared Pearson correlation of the two output
/// vectors on the training data; 0 when either output has no variance or a
/// non-finite entry.
pub fn phenotype_similarity(t1: &ExpressionTree, t2: &ExpressionTree, data: &DataMatrix) -> f64 {
    phenotype_similarity_outputs(&t1.evaluate(data), &t2.evaluate(data))
}

pub fn phenotype_similarity_outputs(o1: &[f64], o2: &[f64]) -> f64 {
    if o1.iter().any(|v| !v.is_finite()) || o2.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    pearson_r2(o1, o2)
}

/// Flags for log analysis.
#[derive(Clone, Copy, Debug)]
pub struct AnalysisOptions {
    /// Count reproduction events whose child failed offspring selection.
    pub include_rejected: bool,
    /// Count intermediate vertices in trace and ancestry sets.
    pub count_intermediates: bool,
    /// Pair budget for sampled pairwise measures.
    pub pair_budget: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { include_rejected: false, count_intermediates: false, pair_budget: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Crossover,
    Mutation,
}

/// One reproduction event of the requested kind in one generation:
/// `(child vertex, child quality, source quality)`.
fn improvement_events(
    graph: &GenealogyGraph,
    generation: usize,
    kind: OperatorKind,
    opts: &AnalysisOptions,
) -> Vec<(VertexId, f64, f64)> {
    let mut events = Vec::new();
    match kind {
        OperatorKind::Crossover => {
            for arc in graph.arcs() {
                if arc.kind != ArcKind::RootParent || arc.crossover.is_none() {
                    continue;
                }
                // a record without a matching non-root arc is a degenerate
                // self-replacement, not a crossover that happened
                if !graph.incoming(arc.to).any(|a| a.kind == ArcKind::NonRootParent) {
                    continue;
                }
                if graph.generation_of(arc.to) != generation {
                    continue;
                }
                if !opts.include_rejected && event_rejected(graph, arc.to) {
                    continue;
                }
                let Some(child_q) = graph.vertex(arc.to).quality else { continue };
                let Some(source_q) = graph.vertex(arc.from).quality else { continue };
                events.push((arc.to, child_q, source_q));
            }
        }
        OperatorKind::Mutation => {
            for arc in graph.arcs() {
                if arc.kind != ArcKind::Mutation {
                    continue;
                }
                if graph.generation_of(arc.to) != generation {
                    continue;
                }
                if !opts.include_rejected && event_rejected(graph, arc.to) {
                    continue;
                }
                let Some(child_q) = graph.vertex(arc.to).quality else { continue };
                // unevaluated intermediate: fall back to its root parent
                let source_q = match graph.vertex(arc.from).quality {
                    Some(q) => q,
                    None => {
                        let Some(q) = graph
                            .incoming(arc.from)
                            .find(|a| a.kind == ArcKind::RootParent)
                            .and_then(|a| graph.vertex(a.from).quality)
                        else {
                            continue;
                        };
                        q
                    }
                };
                events.push((arc.to, child_q, source_q));
            }
        }
    }
    events.sort_by_key(|(id, _, _)| *id);
    events
}

/// Whether the event's final offspring failed offspring selection. For an
/// event whose child is an intermediate this looks through to the mutated
/// final child.
fn event_rejected(graph: &GenealogyGraph, child: VertexId) -> bool {
    let v = graph.vertex(child);
    if v.flags.intermediate {
        graph
            .outgoing(child)
            .find(|a| a.kind == ArcKind::Mutation)
            .map(|a| graph.vertex(a.to).flags.rejected)
            .unwrap_or(false)
    } else {
        v.flags.rejected
    }
}

/// Mean fitness difference between children of the given kind and their
/// sources in one generation; `None` when no such event was measurable.
pub fn avg_improvement(
    graph: &GenealogyGraph,
    generation: usize,
    kind: OperatorKind,
    opts: &AnalysisOptions,
) -> Option<f64> {
    let events = improvement_events(graph, generation, kind, opts);
    if events.is_empty() {
        return None;
    }
    Some(events.iter().map(|(_, c, s)| c - s).sum::<f64>() / events.len() as f64)
}

/// Improvement of the generation's best child of the given kind, unclamped;
/// negative when even the best child is worse than its source.
pub fn best_improvement(
    graph: &GenealogyGraph,
    generation: usize,
    kind: OperatorKind,
    opts: &AnalysisOptions,
) -> Option<f64> {
    improvement_events(graph, generation, kind, opts)
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(_, c, s)| c - s)
}

/// Mean quality gain of a generation's accepted offspring over the better
/// of their parents' qualities reachable through the event (the offspring
/// selection threshold). Excludes elites.
pub fn accepted_offspring_improvement(graph: &GenealogyGraph, generation: usize) -> Option<f64> {
    let mut gains = Vec::new();
    let mut pop = graph.population(generation);
    pop.sort();
    for id in pop {
        let v = graph.vertex(id);
        if v.flags.elite || v.flags.rejected {
            continue;
        }
        // the event vertex carrying the parent arcs is the intermediate when
        // a mutation followed crossover
        let first = match graph.incoming(id).next() {
            Some(a) => a,
            None => continue, // generation 0
        };
        let event = if graph.vertex(first.from).flags.intermediate { first.from } else { id };
        let threshold = graph
            .incoming(event)
            .filter_map(|a| graph.vertex(a.from).quality)
            .fold(f64::MIN, f64::max);
        if threshold > f64::MIN {
            gains.push(v.quality.unwrap_or(0.0) - threshold);
        }
    }
    if gains.is_empty() {
        None
    } else {
        Some(gains.iter().sum::<f64>() / gains.len() as f64)
    }
}

fn filtered_count(graph: &GenealogyGraph, set: &HashSet<VertexId>, opts: &AnalysisOptions) -> usize {
    set.iter()
        .filter(|&&v| opts.count_intermediates || !graph.vertex(v).flags.intermediate)
        .count()
}

/// `|Trace(id)| / |Ancestry(id)|`, excluding the individual itself and
/// (by default) intermediate vertices from both counts. `None` for
/// generation-0 individuals, whose ancestry is empty.
pub fn contribution_ratio(
    graph: &GenealogyGraph,
    id: VertexId,
    opts: &AnalysisOptions,
) -> Result<Option<f64>, LogError> {
    let ancestry = graph.ancestry(id);
    let denom = filtered_count(graph, &ancestry, opts);
    if denom == 0 {
        return Ok(None);
    }
    let mut traced = trace_lineage(graph, id)?;
    traced.remove(&id);
    let num = filtered_count(graph, &traced, opts);
    Ok(Some(num as f64 / denom as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityKind {
    Genotype,
    Phenotype,
}

/// Mean pairwise similarity over a population snapshot, with the same pair
/// sampling contract as [`avg_relative_overlap`].
pub fn population_similarity(
    trees: &[&ExpressionTree],
    kind: SimilarityKind,
    data: &DataMatrix,
    budget: usize,
    seed: u64,
) -> Option<f64> {
    match kind {
        SimilarityKind::Genotype => {
            pair_mean(trees.len(), budget, seed, |i, j| genotype_similarity(trees[i], trees[j]))
        }
        SimilarityKind::Phenotype => {
            let outputs: Vec<Vec<f64>> = par::map_slice(trees, |t| t.evaluate(data));
            pair_mean(trees.len(), budget, seed, |i, j| {
                phenotype_similarity_outputs(&outputs[i], &outputs[j])
            })
        }
    }
}

/// Per-generation record of the stats CSV. `None` prints as `NA`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_quality: Option<f64>,
    pub avg_quality: Option<f64>,
    pub avg_len: Option<f64>,
    pub xo_avg_impr: Option<f64>,
    pub xo_best_impr: Option<f64>,
    pub mut_avg_impr: Option<f64>,
    pub mut_best_impr: Option<f64>,
    pub geno_sim: Option<f64>,
    pub pheno_sim: Option<f64>,
    pub trace_overlap: Option<f64>,
    pub rootlineage_overlap: Option<f64>,
}

pub const STATS_CSV_HEADER: &str = "generation,best_quality,avg_quality,avg_len,xo_avg_impr,\
xo_best_impr,mut_avg_impr,mut_best_impr,geno_sim,pheno_sim,trace_overlap,rootlineage_overlap";

impl GenerationStats {
    pub fn empty(generation: usize) -> Self {
        GenerationStats {
            generation,
            best_quality: None,
            avg_quality: None,
            avg_len: None,
            xo_avg_impr: None,
            xo_best_impr: None,
            mut_avg_impr: None,
            mut_best_impr: None,
            geno_sim: None,
            pheno_sim: None,
            trace_overlap: None,
            rootlineage_overlap: None,
        }
    }

    pub fn columns(&self) -> [Option<f64>; 11] {
        [
            self.best_quality,
            self.avg_quality,
            self.avg_len,
            self.xo_avg_impr,
            self.xo_best_impr,
            self.mut_avg_impr,
            self.mut_best_impr,
            self.geno_sim,
            self.pheno_sim,
            self.trace_overlap,
            self.rootlineage_overlap,
        ]
    }

    pub fn csv_row(&self) -> String {
        let mut row = self.generation.to_string();
        for c in self.columns() {
            row.push(',');
            match c {
                Some(v) => row.push_str(&format!("{v}")),
                None => row.push_str("NA"),
            }
        }
        row
    }
}

// Pair sampling seeds depend only on the generation and the measure, never
// on the run seed, so recomputing stats from a log alone reproduces them.
const STATS_SEED: u64 = 0x6770_7472_6163_6531;

fn stats_seed(generation: usize, measure: u64) -> u64 {
    derive_seed(STATS_SEED, &[generation as u64, measure])
}

/// Computes one generation's stats row from the genealogy alone.
pub fn generation_stats(
    graph: &GenealogyGraph,
    data: &DataMatrix,
    generation: usize,
    opts: &AnalysisOptions,
) -> Result<GenerationStats, LogError> {
    let mut pop = graph.population(generation);
    pop.sort();
    if pop.is_empty() {
        return Ok(GenerationStats::empty(generation));
    }
    let n = pop.len();
    let qualities: Vec<f64> = pop.iter().map(|&id| graph.vertex(id).quality.unwrap_or(0.0)).collect();
    let trees: Vec<&ExpressionTree> = pop.iter().map(|&id| &graph.vertex(id).tree).collect();

    let mut stats = GenerationStats::empty(generation);
    stats.best_quality = qualities.iter().cloned().reduce(f64::max);
    stats.avg_quality = Some(qualities.iter().sum::<f64>() / n as f64);
    stats.avg_len = Some(trees.iter().map(|t| t.len() as f64).sum::<f64>() / n as f64);
    stats.xo_avg_impr = avg_improvement(graph, generation, OperatorKind::Crossover, opts);
    stats.xo_best_impr = best_improvement(graph, generation, OperatorKind::Crossover, opts);
    stats.mut_avg_impr = avg_improvement(graph, generation, OperatorKind::Mutation, opts);
    stats.mut_best_impr = best_improvement(graph, generation, OperatorKind::Mutation, opts);
    stats.geno_sim = population_similarity(
        &trees,
        SimilarityKind::Genotype,
        data,
        opts.pair_budget,
        stats_seed(generation, 0),
    );
    stats.pheno_sim = population_similarity(
        &trees,
        SimilarityKind::Phenotype,
        data,
        opts.pair_budget,
        stats_seed(generation, 1),
    );
    let traces: Vec<Result<HashSet<VertexId>, LogError>> =
        par::map_slice(&pop, |&id| trace_lineage(graph, id));
    let mut trace_sets = Vec::with_capacity(n);
    for t in traces {
        trace_sets.push(t?);
    }
    stats.trace_overlap = avg_relative_overlap(&trace_sets, opts.pair_budget, stats_seed(generation, 2));
    let lineage_sets: Vec<HashSet<VertexId>> =
        par::map_slice(&pop, |&id| graph.root_lineage(id).into_iter().collect());
    stats.rootlineage_overlap =
        avg_relative_overlap(&lineage_sets, opts.pair_budget, stats_seed(generation, 3));
    Ok(stats)
}

/// Stats rows for generations `0..=max_generations` (from the log's own
/// metadata when present). Generations past an early stop stay `NA`-filled,
/// so the schema is stable across runs.
pub fn run_stats(
    graph: &GenealogyGraph,
    data: &DataMatrix,
    opts: &AnalysisOptions,
) -> Result<Vec<GenerationStats>, LogError> {
    let last = graph.meta().map(|m| m.max_generations).unwrap_or_else(|| graph.max_generation());
    let rows: Vec<Result<GenerationStats, LogError>> =
        par::map_indexed(last + 1, |g| generation_stats(graph, data, g, opts));
    rows.into_iter().collect()
}
