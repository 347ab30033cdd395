//! Backward tracing of genotype fragments through the genealogy.
//!
//! Given an individual and a subtree of its genotype, the tracer walks the
//! genealogy towards generation 0 using only preorder interval arithmetic on
//! the recorded crossover and mutation coordinates. Two complementary walks
//! run over the same events:
//!
//! The *content walk* follows the exact surviving nodes. Every ancestor
//! whose genotype carried part of the traced material becomes a vertex, and
//! every hand-off between consecutive carriers becomes an arc, so
//! trajectories passing through the same ancestor show up as multiple arcs
//! transmitting different gene segments. An interval entirely before,
//! entirely after, or inside a fragment is a constant-time index shift into
//! the supplying parent; an interval reaching across a fragment boundary is
//! split at the boundaries into up to three pieces, each handed to its
//! supplier. Genes inside a mutated region are new material, so that branch
//! ends where the mutation happened. Every pending piece stays contiguous
//! and content-exact, which makes every arc checkable by extracting
//! `source` from the ancestor and comparing it node-for-node against
//! `transmitted` in the descendant.
//!
//! The *structural walk* keeps whole subtrees instead of exact survivors:
//! when the traced subtree strictly contains a received fragment, the
//! assembling vertex is recorded and the walk continues with the entire
//! root-parent subtree `(i, l - m + m0)`, replaced regions included. This
//! visits every ancestor whose reproduction event shaped the traced
//! structure, which is the vertex set the contribution ratio counts;
//! because both intervals are whole subtrees here, they always nest or are
//! disjoint, and a partial overlap signals log corruption.

use std::collections::{HashSet, VecDeque};
use std::io::{self, Write};

use crate::exprtree::SubtreeRef;
use crate::genealogy::{ArcKind, GenealogyGraph, LogError, VertexId};

/// The operation that moved a traced part into the arc's descendant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceVia {
    /// Plain copy: the genotype persisted unchanged (elitism).
    Origin,
    Crossover,
    Mutation,
}

impl TraceVia {
    pub fn token(self) -> &'static str {
        match self {
            TraceVia::Origin => "origin",
            TraceVia::Crossover => "crossover",
            TraceVia::Mutation => "mutation",
        }
    }
}

/// One transmission: the ancestor `from` supplied the nodes `transmitted`
/// (in the descendant's frame), which sit at `source` in the ancestor's own
/// tree. Multiple arcs may connect the same vertex pair, one per
/// transmitted gene segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceArc {
    pub from: VertexId,
    pub to: VertexId,
    pub transmitted: SubtreeRef,
    pub source: SubtreeRef,
    pub via: TraceVia,
}

/// A request to locate the origin of `subtree` within the genotype of
/// `vertex`.
#[derive(Clone, Copy, Debug)]
pub struct TraceTask {
    pub vertex: VertexId,
    pub subtree: SubtreeRef,
}

/// The ancestors whose genes survive in the traced subtree, with the
/// transmission arcs connecting them. The traced individual itself is
/// always a vertex.
#[derive(Clone, Debug)]
pub struct TraceGraph {
    pub root: VertexId,
    vertices: Vec<VertexId>,
    arcs: Vec<TraceArc>,
}

impl TraceGraph {
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn arcs(&self) -> &[TraceArc] {
        &self.arcs
    }

    pub fn vertex_set(&self) -> HashSet<VertexId> {
        self.vertices.iter().copied().collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Pending {
    vertex: VertexId,
    subtree: SubtreeRef,
}

struct Tracer<'a> {
    graph: &'a GenealogyGraph,
    task: TraceTask,
    tg: TraceGraph,
    recorded: HashSet<VertexId>,
    arc_seen: HashSet<TraceArc>,
    seen: HashSet<Pending>,
    queue: VecDeque<Pending>,
    struct_seen: HashSet<Pending>,
    struct_queue: VecDeque<Pending>,
}

impl<'a> Tracer<'a> {
    fn record(&mut self, v: VertexId) {
        if self.recorded.insert(v) {
            self.tg.vertices.push(v);
        }
    }

    /// One hand-off: the parent carried `in_parent`, which sits at
    /// `in_child` in the child. Records the parent, the arc, and queues the
    /// parent-side interval unless an identical task is already pending.
    fn hand(
        &mut self,
        child: VertexId,
        parent: VertexId,
        in_child: SubtreeRef,
        in_parent: SubtreeRef,
        via: TraceVia,
    ) -> Result<(), LogError> {
        let tree_len = self.graph.vertex(parent).tree.len();
        if in_parent.len == 0 || in_parent.end() > tree_len {
            return Err(LogError::Integrity(format!(
                "trace of {} {}: coordinates {in_parent} fall outside the tree of {parent} (length {tree_len})",
                self.task.vertex, self.task.subtree
            )));
        }
        self.record(parent);
        let arc = TraceArc { from: parent, to: child, transmitted: in_child, source: in_parent, via };
        if self.arc_seen.insert(arc) {
            self.tg.arcs.push(arc);
        }
        let pending = Pending { vertex: parent, subtree: in_parent };
        if self.seen.insert(pending) {
            self.queue.push_back(pending);
        }
        Ok(())
    }

    fn step(&mut self, p: Pending) -> Result<(), LogError> {
        let incoming: Vec<&crate::genealogy::GenealogyArc> =
            self.graph.incoming(p.vertex).collect();
        if incoming.is_empty() {
            // starting genotype: the genes originate here
            return Ok(());
        }

        if let Some(arc) = incoming.iter().find(|a| a.kind == ArcKind::Mutation) {
            let rec = arc.mutation.as_ref().ok_or_else(|| {
                LogError::Integrity(format!("mutation arc into {} without record", p.vertex))
            })?;
            let parent = arc.from;
            let before = rec.region_before;
            let after = rec.region_after;
            let s = p.subtree;
            if s.end() <= after.index {
                self.hand(p.vertex, parent, s, s, TraceVia::Mutation)?;
            } else if s.index >= after.end() {
                let shifted = SubtreeRef::new(s.index - after.len + before.len, s.len);
                self.hand(p.vertex, parent, s, shifted, TraceVia::Mutation)?;
            } else if after.covers(s) {
                // genes born in this mutation; the branch ends here
            } else {
                // the interval reaches past the mutated region on at least
                // one side; only the unmodified flanks trace on
                if s.index < after.index {
                    let flank = SubtreeRef::new(s.index, after.index - s.index);
                    self.hand(p.vertex, parent, flank, flank, TraceVia::Mutation)?;
                }
                if s.end() > after.end() {
                    let len = s.end() - after.end();
                    let in_child = SubtreeRef::new(after.end(), len);
                    let in_parent = SubtreeRef::new(before.end(), len);
                    self.hand(p.vertex, parent, in_child, in_parent, TraceVia::Mutation)?;
                }
            }
            return Ok(());
        }

        let root_arc = *incoming.iter().find(|a| a.kind == ArcKind::RootParent).ok_or_else(|| {
            LogError::Integrity(format!("vertex {} has no structural parent arc", p.vertex))
        })?;
        let non_root = incoming.iter().find(|a| a.kind == ArcKind::NonRootParent);

        let Some(rec) = &root_arc.crossover else {
            // plain copy (elite): the genotype persisted here unchanged
            self.hand(p.vertex, root_arc.from, p.subtree, p.subtree, TraceVia::Origin)?;
            return Ok(());
        };

        let Some(non_root) = non_root else {
            // crossover that degenerated to a self-replacement: the child is
            // a copy of the root parent and no foreign genes entered, so
            // every interval passes through unchanged
            self.hand(p.vertex, root_arc.from, p.subtree, p.subtree, TraceVia::Crossover)?;
            return Ok(());
        };

        let fragment = rec.child_fragment;
        let removed = rec.parent0_removed;
        let origin = rec.parent1_fragment;
        let (p0, p1) = (root_arc.from, non_root.from);
        let s = p.subtree;
        if s.end() <= fragment.index {
            self.hand(p.vertex, p0, s, s, TraceVia::Crossover)?;
        } else if s.index >= fragment.end() {
            let shifted = SubtreeRef::new(s.index - fragment.len + removed.len, s.len);
            self.hand(p.vertex, p0, s, shifted, TraceVia::Crossover)?;
        } else if fragment.covers(s) {
            let inside = SubtreeRef::new(s.index - fragment.index + origin.index, s.len);
            self.hand(p.vertex, p1, s, inside, TraceVia::Crossover)?;
        } else {
            // the interval spans at least one fragment boundary: this
            // crossover joined the genes. Split into up to three
            // content-exact pieces, each handed to its supplier.
            if s.index < fragment.index {
                let flank = SubtreeRef::new(s.index, fragment.index - s.index);
                self.hand(p.vertex, p0, flank, flank, TraceVia::Crossover)?;
            }
            let inner_start = s.index.max(fragment.index);
            let inner_end = s.end().min(fragment.end());
            let in_child = SubtreeRef::new(inner_start, inner_end - inner_start);
            let in_parent =
                SubtreeRef::new(inner_start - fragment.index + origin.index, in_child.len);
            self.hand(p.vertex, p1, in_child, in_parent, TraceVia::Crossover)?;
            if s.end() > fragment.end() {
                let len = s.end() - fragment.end();
                let in_child = SubtreeRef::new(fragment.end(), len);
                let in_parent = SubtreeRef::new(removed.end(), len);
                self.hand(p.vertex, p0, in_child, in_parent, TraceVia::Crossover)?;
            }
        }
        Ok(())
    }

    fn struct_push(&mut self, vertex: VertexId, subtree: SubtreeRef) -> Result<(), LogError> {
        let tree_len = self.graph.vertex(vertex).tree.len();
        if subtree.len == 0 || subtree.end() > tree_len {
            return Err(LogError::Integrity(format!(
                "trace of {} {}: coordinates {subtree} fall outside the tree of {vertex} (length {tree_len})",
                self.task.vertex, self.task.subtree
            )));
        }
        let pending = Pending { vertex, subtree };
        if self.struct_seen.insert(pending) {
            self.struct_queue.push_back(pending);
        }
        Ok(())
    }

    fn overlap_error(&self, p: &Pending, what: &str, region: SubtreeRef) -> LogError {
        LogError::Integrity(format!(
            "trace of {} {}: subtree {} partially overlaps {what} {region} at {}",
            self.task.vertex, self.task.subtree, p.subtree, p.vertex
        ))
    }

    /// One step of the structural walk. The interval is always a whole
    /// subtree of the current vertex, so it nests with every recorded
    /// fragment or not at all.
    fn struct_step(&mut self, p: Pending) -> Result<(), LogError> {
        let incoming: Vec<&crate::genealogy::GenealogyArc> =
            self.graph.incoming(p.vertex).collect();
        if incoming.is_empty() {
            self.record(p.vertex);
            return Ok(());
        }

        if let Some(arc) = incoming.iter().find(|a| a.kind == ArcKind::Mutation) {
            let rec = arc.mutation.as_ref().ok_or_else(|| {
                LogError::Integrity(format!("mutation arc into {} without record", p.vertex))
            })?;
            let before = rec.region_before;
            let after = rec.region_after;
            let s = p.subtree;
            if s.end() <= after.index || s.index >= after.end() {
                let shifted = if s.index >= after.end() {
                    SubtreeRef::new(s.index - after.len + before.len, s.len)
                } else {
                    s
                };
                self.struct_push(arc.from, shifted)?;
            } else if after.covers(s) {
                // the mutation originated these genes
                self.record(p.vertex);
            } else if s.covers(after) {
                self.record(p.vertex);
                self.struct_push(
                    arc.from,
                    SubtreeRef::new(s.index, s.len - after.len + before.len),
                )?;
            } else {
                return Err(self.overlap_error(&p, "mutation region", after));
            }
            return Ok(());
        }

        let root_arc = *incoming.iter().find(|a| a.kind == ArcKind::RootParent).ok_or_else(|| {
            LogError::Integrity(format!("vertex {} has no structural parent arc", p.vertex))
        })?;
        let non_root = incoming.iter().find(|a| a.kind == ArcKind::NonRootParent);

        let Some(rec) = &root_arc.crossover else {
            // elite copy: the genotype persisted here
            self.record(p.vertex);
            self.struct_push(root_arc.from, p.subtree)?;
            return Ok(());
        };
        let Some(non_root) = non_root else {
            // degenerate self-replacement: pass through unrecorded
            self.struct_push(root_arc.from, p.subtree)?;
            return Ok(());
        };

        let fragment = rec.child_fragment;
        let removed = rec.parent0_removed;
        let origin = rec.parent1_fragment;
        let s = p.subtree;
        if s.end() <= fragment.index {
            self.struct_push(root_arc.from, s)?;
        } else if s.index >= fragment.end() {
            self.struct_push(
                root_arc.from,
                SubtreeRef::new(s.index - fragment.len + removed.len, s.len),
            )?;
        } else if fragment.covers(s) {
            self.struct_push(
                non_root.from,
                SubtreeRef::new(s.index - fragment.index + origin.index, s.len),
            )?;
        } else if s.covers(fragment) {
            // the crossover assembled genes inside the traced subtree
            self.record(p.vertex);
            self.struct_push(non_root.from, origin)?;
            self.struct_push(
                root_arc.from,
                SubtreeRef::new(s.index, s.len - fragment.len + removed.len),
            )?;
        } else {
            return Err(self.overlap_error(&p, "crossover fragment", fragment));
        }
        Ok(())
    }
}

/// Traces one subtree back through the genealogy.
pub fn trace(graph: &GenealogyGraph, task: &TraceTask) -> Result<TraceGraph, LogError> {
    if !graph.contains(task.vertex) {
        return Err(LogError::Integrity(format!("unknown vertex {}", task.vertex)));
    }
    let tree = &graph.vertex(task.vertex).tree;
    if task.subtree.end() > tree.len() || tree.subtree_at(task.subtree.index) != task.subtree {
        return Err(LogError::Integrity(format!(
            "trace of {} {}: not a subtree of the genotype",
            task.vertex, task.subtree
        )));
    }
    let mut tracer = Tracer {
        graph,
        task: *task,
        tg: TraceGraph { root: task.vertex, vertices: Vec::new(), arcs: Vec::new() },
        recorded: HashSet::new(),
        arc_seen: HashSet::new(),
        seen: HashSet::new(),
        queue: VecDeque::new(),
        struct_seen: HashSet::new(),
        struct_queue: VecDeque::new(),
    };
    tracer.record(task.vertex);
    let first = Pending { vertex: task.vertex, subtree: task.subtree };
    tracer.seen.insert(first);
    tracer.queue.push_back(first);
    while let Some(p) = tracer.queue.pop_front() {
        tracer.step(p)?;
    }
    tracer.struct_seen.insert(first);
    tracer.struct_queue.push_back(first);
    while let Some(p) = tracer.struct_queue.pop_front() {
        tracer.struct_step(p)?;
    }
    Ok(tracer.tg)
}

/// Vertex set of the trace of an individual's whole genotype.
pub fn trace_lineage(graph: &GenealogyGraph, id: VertexId) -> Result<HashSet<VertexId>, LogError> {
    let full = SubtreeRef::new(0, graph.vertex(id).tree.len());
    Ok(trace(graph, &TraceTask { vertex: id, subtree: full })?.vertex_set())
}

/// DOT export with deterministic vertex and arc ordering.
pub fn write_dot<W: Write>(graph: &GenealogyGraph, tg: &TraceGraph, mut w: W) -> io::Result<()> {
    writeln!(w, "digraph trace {{")?;
    writeln!(w, "  node [shape=box];")?;
    let mut vs = tg.vertices().to_vec();
    vs.sort_by(|&a, &b| {
        let (ra, rb) = (graph.vertex(a).rank, graph.vertex(b).rank);
        ra.partial_cmp(&rb).unwrap().then(a.cmp(&b))
    });
    for id in vs {
        let v = graph.vertex(id);
        let q = match v.quality {
            Some(q) => format!("{q}"),
            None => "NA".into(),
        };
        writeln!(w, "  \"{}\" [label=\"{}@{} q={}\"];", id, id, v.rank, q)?;
    }
    let mut arcs = tg.arcs().to_vec();
    arcs.sort_by_key(|a| (a.to, a.from, a.transmitted.index, a.transmitted.len, a.source.index));
    for a in arcs {
        writeln!(
            w,
            "  \"{}\" -> \"{}\" [label=\"{}←{} via {}\"];",
            a.from,
            a.to,
            a.transmitted,
            a.source,
            a.via.token()
        )?;
    }
    writeln!(w, "}}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprtree::ExpressionTree;
    use crate::genealogy::{GenealogyArc, GenealogyVertex, VertexFlags};
    use crate::operators::{CrossoverRecord, MutationRecord};

    fn t(s: &str) -> ExpressionTree {
        s.parse().unwrap()
    }

    fn vtx(g: &mut GenealogyGraph, id: u64, rank: f64, tree: &str) {
        g.add_vertex(GenealogyVertex {
            id: VertexId(id),
            rank,
            tree: t(tree),
            quality: Some(0.5),
            flags: VertexFlags::NONE,
        })
        .unwrap();
    }

    fn xo_arcs(g: &mut GenealogyGraph, p0: u64, p1: u64, child: u64, rec: CrossoverRecord) {
        g.add_arc(GenealogyArc {
            kind: ArcKind::RootParent,
            from: VertexId(p0),
            to: VertexId(child),
            crossover: Some(rec),
            mutation: None,
        })
        .unwrap();
        g.add_arc(GenealogyArc {
            kind: ArcKind::NonRootParent,
            from: VertexId(p1),
            to: VertexId(child),
            crossover: Some(rec),
            mutation: None,
        })
        .unwrap();
    }

    /// The drawn subtree swap: (a+b)*(a-b) receives (a*a) from
    /// (a*a)-(b*b), producing (a+b)*(a*a).
    fn swap_graph() -> GenealogyGraph {
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(* (+ (v 0 1) (v 1 1)) (- (v 0 1) (v 1 1)))");
        vtx(&mut g, 1, 0.0, "(- (* (v 0 1) (v 0 1)) (* (v 1 1) (v 1 1)))");
        vtx(&mut g, 2, 1.0, "(* (+ (v 0 1) (v 1 1)) (* (v 0 1) (v 0 1)))");
        xo_arcs(
            &mut g,
            0,
            1,
            2,
            CrossoverRecord {
                child_fragment: SubtreeRef::new(4, 3),
                parent1_fragment: SubtreeRef::new(1, 3),
                parent0_removed: SubtreeRef::new(4, 3),
            },
        );
        g
    }

    #[test]
    fn received_fragment_traces_to_non_root_parent() {
        let g = swap_graph();
        let tg = trace(&g, &TraceTask { vertex: VertexId(2), subtree: SubtreeRef::new(4, 3) }).unwrap();
        assert_eq!(tg.arcs().len(), 1);
        let arc = tg.arcs()[0];
        assert_eq!(arc.from, VertexId(1));
        assert_eq!(arc.to, VertexId(2));
        assert_eq!(arc.transmitted, SubtreeRef::new(4, 3));
        assert_eq!(arc.source, SubtreeRef::new(1, 3));
        assert_eq!(arc.via, TraceVia::Crossover);
        assert_eq!(tg.vertex_set(), [VertexId(2), VertexId(1)].into());
    }

    #[test]
    fn inherited_part_traces_to_root_parent() {
        let g = swap_graph();
        let tg = trace(&g, &TraceTask { vertex: VertexId(2), subtree: SubtreeRef::new(1, 3) }).unwrap();
        assert_eq!(tg.arcs().len(), 1);
        let arc = tg.arcs()[0];
        assert_eq!(arc.from, VertexId(0));
        assert_eq!(arc.source, SubtreeRef::new(1, 3));
        assert_eq!(tg.vertex_set(), [VertexId(0), VertexId(2)].into());
    }

    #[test]
    fn whole_tree_splits_between_both_parents() {
        let g = swap_graph();
        let tg = trace(&g, &TraceTask { vertex: VertexId(2), subtree: SubtreeRef::new(0, 7) }).unwrap();
        assert_eq!(tg.vertex_set(), [VertexId(0), VertexId(1), VertexId(2)].into());
        // fragment from parent 1, flank (root op + left subtree) from parent 0
        let from1: Vec<_> = tg.arcs().iter().filter(|a| a.from == VertexId(1)).collect();
        assert_eq!(from1.len(), 1);
        assert_eq!(from1[0].transmitted, SubtreeRef::new(4, 3));
        assert_eq!(from1[0].source, SubtreeRef::new(1, 3));
        let from0: Vec<_> = tg.arcs().iter().filter(|a| a.from == VertexId(0)).collect();
        assert_eq!(from0.len(), 1);
        assert_eq!(from0[0].transmitted, SubtreeRef::new(0, 4));
        assert_eq!(from0[0].source, SubtreeRef::new(0, 4));
    }

    #[test]
    fn generation_zero_traces_to_itself() {
        let g = swap_graph();
        let tg = trace(&g, &TraceTask { vertex: VertexId(0), subtree: SubtreeRef::new(2, 1) }).unwrap();
        assert_eq!(tg.vertices(), &[VertexId(0)]);
        assert!(tg.arcs().is_empty());
        assert_eq!(trace_lineage(&g, VertexId(0)).unwrap(), [VertexId(0)].into());
    }

    #[test]
    fn elite_chain_adds_copies_to_trace_lineage() {
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(+ (v 0 1) (c 2.0))");
        for k in 1..=2u64 {
            vtx(&mut g, k, k as f64, "(+ (v 0 1) (c 2.0))");
            g.add_arc(GenealogyArc {
                kind: ArcKind::RootParent,
                from: VertexId(k - 1),
                to: VertexId(k),
                crossover: None,
                mutation: None,
            })
            .unwrap();
        }
        let tl = trace_lineage(&g, VertexId(2)).unwrap();
        assert_eq!(tl, [VertexId(0), VertexId(1), VertexId(2)].into());
        // arcs carry the full genotype through each copy
        let tg = trace(&g, &TraceTask { vertex: VertexId(2), subtree: SubtreeRef::new(0, 3) }).unwrap();
        assert_eq!(tg.arcs().len(), 2);
        assert!(tg.arcs().iter().all(|a| a.transmitted == SubtreeRef::new(0, 3)));
        assert!(tg.arcs().iter().all(|a| a.via == TraceVia::Origin));
    }

    #[test]
    fn mutation_born_genes_stop_the_walk() {
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(+ (v 0 1) (c 2.0))");
        // replaced the constant leaf (index 2) with a 3-node subtree
        vtx(&mut g, 1, 1.0, "(+ (v 0 1) (* (c 3.0) (v 0 1)))");
        g.add_arc(GenealogyArc {
            kind: ArcKind::Mutation,
            from: VertexId(0),
            to: VertexId(1),
            crossover: None,
            mutation: Some(MutationRecord {
                region_before: SubtreeRef::new(2, 1),
                region_after: SubtreeRef::new(2, 3),
            }),
        })
        .unwrap();
        // inside the mutated region: genes were born at vertex 1
        let tg = trace(&g, &TraceTask { vertex: VertexId(1), subtree: SubtreeRef::new(3, 1) }).unwrap();
        assert_eq!(tg.vertices(), &[VertexId(1)]);
        assert!(tg.arcs().is_empty());
        // before the mutated region: passes through to the parent
        let tg = trace(&g, &TraceTask { vertex: VertexId(1), subtree: SubtreeRef::new(1, 1) }).unwrap();
        assert_eq!(tg.vertex_set(), [VertexId(0), VertexId(1)].into());
        let arc = tg.arcs()[0];
        assert_eq!(arc.source, SubtreeRef::new(1, 1));
        assert_eq!(arc.via, TraceVia::Mutation);
        // whole tree: only the flank before the mutated region traces on
        let tg = trace(&g, &TraceTask { vertex: VertexId(1), subtree: SubtreeRef::new(0, 5) }).unwrap();
        assert_eq!(tg.vertex_set(), [VertexId(0), VertexId(1)].into());
        let transmitted: HashSet<SubtreeRef> = tg.arcs().iter().map(|a| a.transmitted).collect();
        assert_eq!(transmitted, [SubtreeRef::new(0, 2)].into());
    }

    #[test]
    fn self_crossover_produces_multi_arcs_with_distinct_segments() {
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(+ (v 0 1) (c 2.0))");
        // child of 0 x 0: leaf at index 1 replaced by 0's constant leaf
        vtx(&mut g, 1, 1.0, "(+ (c 2.0) (c 2.0))");
        xo_arcs(
            &mut g,
            0,
            0,
            1,
            CrossoverRecord {
                child_fragment: SubtreeRef::new(1, 1),
                parent1_fragment: SubtreeRef::new(2, 1),
                parent0_removed: SubtreeRef::new(1, 1),
            },
        );
        let tg = trace(&g, &TraceTask { vertex: VertexId(1), subtree: SubtreeRef::new(0, 3) }).unwrap();
        assert_eq!(tg.vertex_set(), [VertexId(0), VertexId(1)].into());
        let pair_arcs: Vec<_> = tg.arcs().iter().filter(|a| a.from == VertexId(0)).collect();
        assert!(pair_arcs.len() >= 2, "expected multi-arcs, got {pair_arcs:?}");
        let segments: HashSet<SubtreeRef> = pair_arcs.iter().map(|a| a.transmitted).collect();
        assert_eq!(segments.len(), pair_arcs.len(), "transmitted segments must be distinct");
    }

    #[test]
    fn degenerate_crossover_passes_through_as_carrier() {
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(+ (v 0 1) (c 2.0))");
        vtx(&mut g, 1, 1.0, "(+ (v 0 1) (c 2.0))");
        // self-replacement marker: record present, no non-root arc
        let r = SubtreeRef::new(1, 1);
        g.add_arc(GenealogyArc {
            kind: ArcKind::RootParent,
            from: VertexId(0),
            to: VertexId(1),
            crossover: Some(CrossoverRecord {
                child_fragment: r,
                parent1_fragment: r,
                parent0_removed: r,
            }),
            mutation: None,
        })
        .unwrap();
        let tg = trace(&g, &TraceTask { vertex: VertexId(1), subtree: SubtreeRef::new(0, 3) }).unwrap();
        // the whole interval passes through unchanged; the genes originate
        // at vertex 0
        assert_eq!(tg.vertex_set(), [VertexId(0), VertexId(1)].into());
        assert_eq!(tg.arcs().len(), 1);
        let arc = tg.arcs()[0];
        assert_eq!((arc.from, arc.to), (VertexId(0), VertexId(1)));
        assert_eq!(arc.transmitted, arc.source);
    }

    #[test]
    fn flank_straddling_an_earlier_fragment_splits_between_grandparents() {
        // P received (+ c1 c2) from G1 inside G0's structure; C then swaps a
        // leaf that sits after that fragment. Tracing C's whole tree sends a
        // flank through P that reaches across the old fragment boundary, so
        // it must split between G0 and G1.
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(* (+ (v 0 1) (v 1 1)) (- (v 0 1) (v 1 1)))"); // G0
        vtx(&mut g, 1, 0.0, "(+ (c 1.0) (c 2.0))"); // G1
        vtx(&mut g, 2, 0.0, "(c 9.0)"); // D
        // P = G0 with leaf 3 replaced by G1's whole tree
        vtx(&mut g, 3, 1.0, "(* (+ (v 0 1) (+ (c 1.0) (c 2.0))) (- (v 0 1) (v 1 1)))");
        xo_arcs(
            &mut g,
            0,
            1,
            3,
            CrossoverRecord {
                child_fragment: SubtreeRef::new(3, 3),
                parent1_fragment: SubtreeRef::new(0, 3),
                parent0_removed: SubtreeRef::new(3, 1),
            },
        );
        // C = P with the second fragment leaf (index 5) replaced by D's leaf
        vtx(&mut g, 4, 2.0, "(* (+ (v 0 1) (+ (c 1.0) (c 9.0))) (- (v 0 1) (v 1 1)))");
        xo_arcs(
            &mut g,
            3,
            2,
            4,
            CrossoverRecord {
                child_fragment: SubtreeRef::new(5, 1),
                parent1_fragment: SubtreeRef::new(0, 1),
                parent0_removed: SubtreeRef::new(5, 1),
            },
        );
        let tg = trace(&g, &TraceTask { vertex: VertexId(4), subtree: SubtreeRef::new(0, 9) }).unwrap();
        assert_eq!(
            tg.vertex_set(),
            [VertexId(0), VertexId(1), VertexId(2), VertexId(3), VertexId(4)].into()
        );
        // the flank [0,5) of C straddles P's old fragment [3,6): it splits
        // into [0,3) from G0 and [3,5) from the start of G1's donation
        let into_p: Vec<_> = tg.arcs().iter().filter(|a| a.to == VertexId(3)).collect();
        let froms: HashSet<(VertexId, SubtreeRef, SubtreeRef)> =
            into_p.iter().map(|a| (a.from, a.transmitted, a.source)).collect();
        assert!(froms.contains(&(VertexId(0), SubtreeRef::new(0, 3), SubtreeRef::new(0, 3))));
        assert!(froms.contains(&(VertexId(1), SubtreeRef::new(3, 2), SubtreeRef::new(0, 2))));
        assert!(froms.contains(&(VertexId(0), SubtreeRef::new(6, 3), SubtreeRef::new(4, 3))));
    }

    #[test]
    fn trace_rejects_non_subtree_intervals() {
        let g = swap_graph();
        let err =
            trace(&g, &TraceTask { vertex: VertexId(2), subtree: SubtreeRef::new(1, 2) }).unwrap_err();
        assert!(matches!(err, LogError::Integrity(_)));
    }

    #[test]
    fn corrupt_coordinates_are_integrity_errors() {
        let mut g = GenealogyGraph::new(None);
        vtx(&mut g, 0, 0.0, "(c 1.0)");
        vtx(&mut g, 1, 1.0, "(+ (v 0 1) (c 2.0))");
        xo_arcs(
            &mut g,
            0,
            0,
            1,
            CrossoverRecord {
                child_fragment: SubtreeRef::new(1, 1),
                parent1_fragment: SubtreeRef::new(5, 1), // outside parent tree
                parent0_removed: SubtreeRef::new(1, 1),
            },
        );
        let err =
            trace(&g, &TraceTask { vertex: VertexId(1), subtree: SubtreeRef::new(1, 1) }).unwrap_err();
        assert!(matches!(err, LogError::Integrity(_)), "{err}");
    }

    #[test]
    fn dot_export_is_deterministic() {
        let g = swap_graph();
        let tg = trace(&g, &TraceTask { vertex: VertexId(2), subtree: SubtreeRef::new(0, 7) }).unwrap();
        let mut a = Vec::new();
        write_dot(&g, &tg, &mut a).unwrap();
        let mut b = Vec::new();
        write_dot(&g, &tg, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("\"1\" -> \"2\""), "{text}");
        assert!(text.contains("via crossover"), "{text}");
    }
}
