//! Generational loops for standard GP and offspring-selection GP.
//!
//! The engine is a pure event producer: it evaluates, selects and
//! recombines, and appends every vertex and arc to a genealogy recorder.
//! All analysis happens post-hoc from that record.
//!
//! Candidate production is deterministic and embarrassingly parallel: each
//! candidate owns an RNG stream derived from (run seed, generation,
//! candidate index), so results are byte-identical no matter how many
//! threads produced them, and appends happen in candidate order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::derive_seed;
use crate::exprtree::{random_tree, ExpressionTree, Grammar, TreeLimits};
use crate::genealogy::{
    ArcKind, GenealogyArc, GenealogyRecorder, GenealogyVertex, LogError, VertexFlags, VertexId,
};
use crate::operators::{
    self, fitness, mutate, subtree_crossover, Crossover, CutBias, Fitness, MutationRecord,
};
use crate::par;
use crate::problems::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Sgp,
    Osgp,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Sgp => write!(f, "sgp"),
            Algorithm::Osgp => write!(f, "osgp"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgp" => Ok(Algorithm::Sgp),
            "osgp" => Ok(Algorithm::Osgp),
            other => Err(format!("unknown algorithm `{other}` (expected sgp or osgp)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub population_size: usize,
    pub max_generations: usize,
    pub tournament_size: usize,
    pub mutation_rate: f64,
    pub elites: usize,
    /// Offspring selection only: the run stops once candidates generated per
    /// population slot exceed this.
    pub max_selection_pressure: f64,
    /// Offspring selection only: success threshold sits at
    /// `worse + factor * (better - worse)` of the parent qualities;
    /// 1.0 demands strictly beating the better parent.
    pub comparison_factor: f64,
    pub mutation_sigma: f64,
    /// How crossover picks its cut points.
    pub cut_bias: CutBias,
    pub limits: TreeLimits,
    pub seed: u64,
    /// Evaluate post-crossover, pre-mutation trees so crossover and mutation
    /// improvement are separable.
    pub evaluate_intermediates: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        let population_size = match algorithm {
            Algorithm::Sgp => 500,
            Algorithm::Osgp => 300,
        };
        RunConfig {
            algorithm,
            population_size,
            max_generations: 50,
            tournament_size: 3,
            mutation_rate: 0.15,
            elites: 1,
            max_selection_pressure: 100.0,
            comparison_factor: 1.0,
            mutation_sigma: 1.0,
            cut_bias: CutBias::default(),
            limits: TreeLimits::default(),
            seed,
            evaluate_intermediates: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.population_size < 2 {
            return Err("population size must be at least 2".into());
        }
        if self.max_generations < 1 {
            return Err("max generations must be at least 1".into());
        }
        if self.elites > self.population_size {
            return Err("elite count cannot exceed the population size".into());
        }
        if self.tournament_size < 1 {
            return Err("tournament size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err("mutation rate must lie in [0, 1]".into());
        }
        if self.max_selection_pressure < 1.0 {
            return Err("max selection pressure must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.comparison_factor) {
            return Err("comparison factor must lie in [0, 1]".into());
        }
        if let CutBias::Internal(p) = self.cut_bias {
            if !(0.0..=1.0).contains(&p) {
                return Err("internal cut bias must lie in [0, 1]".into());
            }
        }
        if self.limits.max_depth < 1 || self.limits.max_length < 1 {
            return Err("tree limits must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Individual {
    pub vertex: VertexId,
    pub tree: ExpressionTree,
    pub quality: Fitness,
    pub generation: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub population: Vec<Individual>,
    pub best: Individual,
    /// Generations actually run; less than `max_generations` only when
    /// offspring selection hit its pressure limit.
    pub generations: usize,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

const STREAM_INIT: u64 = 0;
const STREAM_CHILD: u64 = 1;

fn stream(seed: u64, context: u64, generation: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[context, generation, index]))
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    grammar: Grammar,
}

/// One produced (not yet accepted) offspring with everything needed to log
/// its reproduction event.
struct Candidate {
    p0: usize,
    p1: usize,
    xo: Crossover,
    mutation: Option<(ExpressionTree, MutationRecord)>,
    intermediate_quality: Option<Fitness>,
    quality: Fitness,
}

impl Candidate {
    fn tree(&self) -> &ExpressionTree {
        self.mutation.as_ref().map_or(&self.xo.child, |(t, _)| t)
    }
}

fn make_candidate<R: Rng>(
    ctx: &Ctx,
    population: &[Individual],
    qualities: &[Fitness],
    rng: &mut R,
) -> Candidate {
    let cfg = ctx.cfg;
    let (p0, p1) = match cfg.algorithm {
        Algorithm::Sgp => (
            operators::tournament_select(rng, qualities, cfg.tournament_size),
            operators::tournament_select(rng, qualities, cfg.tournament_size),
        ),
        Algorithm::Osgp => operators::gender_specific_select(rng, qualities),
    };
    let xo =
        subtree_crossover(rng, &population[p0].tree, &population[p1].tree, &cfg.limits, cfg.cut_bias);
    let mutation = if cfg.mutation_rate > 0.0 && rng.gen_bool(cfg.mutation_rate) {
        Some(mutate(rng, &xo.child, &ctx.grammar, &cfg.limits, cfg.mutation_sigma))
    } else {
        None
    };
    let quality = match &mutation {
        Some((tree, _)) => fitness(tree, &ctx.data.matrix, &ctx.data.target),
        None => fitness(&xo.child, &ctx.data.matrix, &ctx.data.target),
    };
    let intermediate_quality =
        if cfg.evaluate_intermediates && mutation.is_some() && !xo.degenerate {
            Some(fitness(&xo.child, &ctx.data.matrix, &ctx.data.target))
        } else {
            None
        };
    Candidate { p0, p1, xo, mutation, intermediate_quality, quality }
}

/// Appends one candidate's vertices and arcs:
///
/// * crossover only: child vertex plus a root/non-root arc pair,
/// * crossover then mutation: intermediate vertex at rank `g - 0.5`, the
///   arc pair into it, then the child and its mutation arc,
/// * degenerate crossover: either a marker arc (record without a non-root
///   arc) or, if a mutation follows, a plain mutation event off the root
///   parent, since the crossover contributed nothing.
fn append_candidate(
    recorder: &mut GenealogyRecorder,
    population: &[Individual],
    generation: usize,
    next_id: &mut u64,
    cand: &Candidate,
    flags: VertexFlags,
) -> Result<Individual, LogError> {
    let p0 = population[cand.p0].vertex;
    let p1 = population[cand.p1].vertex;
    let rank = generation as f64;
    let mut alloc = || {
        let id = VertexId(*next_id);
        *next_id += 1;
        id
    };
    let child_id;
    match (&cand.mutation, cand.xo.degenerate) {
        (None, false) => {
            child_id = alloc();
            recorder.append_vertex(GenealogyVertex {
                id: child_id,
                rank,
                tree: cand.xo.child.clone(),
                quality: Some(cand.quality.quality),
                flags,
            })?;
            for (kind, from) in [(ArcKind::RootParent, p0), (ArcKind::NonRootParent, p1)] {
                recorder.append_arc(GenealogyArc {
                    kind,
                    from,
                    to: child_id,
                    crossover: Some(cand.xo.rec),
                    mutation: None,
                })?;
            }
        }
        (None, true) => {
            child_id = alloc();
            recorder.append_vertex(GenealogyVertex {
                id: child_id,
                rank,
                tree: cand.xo.child.clone(),
                quality: Some(cand.quality.quality),
                flags,
            })?;
            recorder.append_arc(GenealogyArc {
                kind: ArcKind::RootParent,
                from: p0,
                to: child_id,
                crossover: Some(cand.xo.rec),
                mutation: None,
            })?;
        }
        (Some((tree, mrec)), degenerate) => {
            let mutation_source = if degenerate {
                p0
            } else {
                let inter_id = alloc();
                recorder.append_vertex(GenealogyVertex {
                    id: inter_id,
                    rank: rank - 0.5,
                    tree: cand.xo.child.clone(),
                    quality: cand.intermediate_quality.map(|f| f.quality),
                    flags: VertexFlags { intermediate: true, ..VertexFlags::NONE },
                })?;
                for (kind, from) in [(ArcKind::RootParent, p0), (ArcKind::NonRootParent, p1)] {
                    recorder.append_arc(GenealogyArc {
                        kind,
                        from,
                        to: inter_id,
                        crossover: Some(cand.xo.rec),
                        mutation: None,
                    })?;
                }
                inter_id
            };
            child_id = alloc();
            recorder.append_vertex(GenealogyVertex {
                id: child_id,
                rank,
                tree: tree.clone(),
                quality: Some(cand.quality.quality),
                flags,
            })?;
            recorder.append_arc(GenealogyArc {
                kind: ArcKind::Mutation,
                from: mutation_source,
                to: child_id,
                crossover: None,
                mutation: Some(*mrec),
            })?;
        }
    }
    Ok(Individual {
        vertex: child_id,
        tree: cand.tree().clone(),
        quality: cand.quality,
        generation,
    })
}

/// Indices of the `n` best individuals, ties broken towards lower vertex id.
fn elite_indices(population: &[Individual], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..population.len()).collect();
    idx.sort_by(|&a, &b| {
        population[b]
            .quality
            .quality
            .partial_cmp(&population[a].quality.quality)
            .unwrap()
            .then(population[a].vertex.cmp(&population[b].vertex))
    });
    idx.truncate(n);
    idx
}

fn append_elites(
    recorder: &mut GenealogyRecorder,
    population: &[Individual],
    elite_idx: &[usize],
    generation: usize,
    next_id: &mut u64,
) -> Result<Vec<Individual>, LogError> {
    let mut out = Vec::with_capacity(elite_idx.len());
    for &i in elite_idx {
        let src = &population[i];
        let id = VertexId(*next_id);
        *next_id += 1;
        recorder.append_vertex(GenealogyVertex {
            id,
            rank: generation as f64,
            tree: src.tree.clone(),
            quality: Some(src.quality.quality),
            flags: VertexFlags { elite: true, ..VertexFlags::NONE },
        })?;
        recorder.append_arc(GenealogyArc {
            kind: ArcKind::RootParent,
            from: src.vertex,
            to: id,
            crossover: None,
            mutation: None,
        })?;
        out.push(Individual {
            vertex: id,
            tree: src.tree.clone(),
            quality: src.quality,
            generation,
        });
    }
    Ok(out)
}

fn best_of(population: &[Individual]) -> Individual {
    population
        .iter()
        .max_by(|a, b| {
            a.quality
                .quality
                .partial_cmp(&b.quality.quality)
                .unwrap()
                .then(b.vertex.cmp(&a.vertex))
        })
        .expect("population is never empty")
        .clone()
}

/// Runs the configured algorithm to completion, streaming all events into
/// `recorder`. Deterministic for a given config and dataset.
pub fn run(
    cfg: &RunConfig,
    data: &Dataset,
    recorder: &mut GenealogyRecorder,
) -> Result<RunOutcome, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    let ctx = Ctx { cfg, data, grammar: Grammar::for_variables(data.matrix.cols()) };
    let mut next_id = 0u64;

    let init: Vec<(ExpressionTree, Fitness)> = par::map_indexed(cfg.population_size, |slot| {
        let mut rng = stream(cfg.seed, STREAM_INIT, 0, slot as u64);
        let tree = random_tree(&mut rng, &ctx.grammar, &cfg.limits);
        let q = fitness(&tree, &data.matrix, &data.target);
        (tree, q)
    });
    let mut population = Vec::with_capacity(cfg.population_size);
    for (tree, quality) in init {
        let id = VertexId(next_id);
        next_id += 1;
        recorder.append_vertex(GenealogyVertex {
            id,
            rank: 0.0,
            tree: tree.clone(),
            quality: Some(quality.quality),
            flags: VertexFlags::NONE,
        })?;
        population.push(Individual { vertex: id, tree, quality, generation: 0 });
    }
    recorder.flush()?;

    let mut generations = 0;
    for g in 1..=cfg.max_generations {
        let (next, pressure_exceeded) = match cfg.algorithm {
            Algorithm::Sgp => (sgp_generation(&ctx, recorder, &population, g, &mut next_id)?, false),
            Algorithm::Osgp => osgp_generation(&ctx, recorder, &population, g, &mut next_id)?,
        };
        debug_assert_eq!(next.len(), cfg.population_size);
        population = next;
        generations = g;
        recorder.flush()?;
        if pressure_exceeded {
            break;
        }
    }
    let best = best_of(&population);
    Ok(RunOutcome { population, best, generations })
}

fn sgp_generation(
    ctx: &Ctx,
    recorder: &mut GenealogyRecorder,
    population: &[Individual],
    g: usize,
    next_id: &mut u64,
) -> Result<Vec<Individual>, LogError> {
    let cfg = ctx.cfg;
    let qualities: Vec<Fitness> = population.iter().map(|i| i.quality).collect();
    let elite_idx = elite_indices(population, cfg.elites);
    let slots = cfg.population_size - elite_idx.len();
    let candidates: Vec<Candidate> = par::map_indexed(slots, |slot| {
        let mut rng = stream(cfg.seed, STREAM_CHILD, g as u64, slot as u64);
        make_candidate(ctx, population, &qualities, &mut rng)
    });
    let mut next = append_elites(recorder, population, &elite_idx, g, next_id)?;
    for cand in &candidates {
        next.push(append_candidate(recorder, population, g, next_id, cand, VertexFlags::NONE)?);
    }
    Ok(next)
}

fn success_threshold(cfg: &RunConfig, q0: Fitness, q1: Fitness) -> f64 {
    let lo = q0.quality.min(q1.quality);
    let hi = q0.quality.max(q1.quality);
    lo + cfg.comparison_factor * (hi - lo)
}

/// Candidates per parallel round when offspring selection keeps rejecting.
const OSGP_BATCH_FLOOR: usize = 32;

fn osgp_generation(
    ctx: &Ctx,
    recorder: &mut GenealogyRecorder,
    population: &[Individual],
    g: usize,
    next_id: &mut u64,
) -> Result<(Vec<Individual>, bool), LogError> {
    let cfg = ctx.cfg;
    let qualities: Vec<Fitness> = population.iter().map(|i| i.quality).collect();
    let elite_idx = elite_indices(population, cfg.elites);
    let slots = cfg.population_size - elite_idx.len();
    let budget = (cfg.max_selection_pressure * cfg.population_size as f64) as usize;

    let mut decided: Vec<(Candidate, bool)> = Vec::new();
    let mut accepted = 0usize;
    let mut consumed = 0usize;
    while accepted < slots && consumed < budget {
        let want = (slots - accepted).max(OSGP_BATCH_FLOOR.min(slots));
        let batch = want.min(budget - consumed);
        let base = consumed;
        let produced: Vec<Candidate> = par::map_indexed(batch, |i| {
            let mut rng = stream(cfg.seed, STREAM_CHILD, g as u64, (base + i) as u64);
            make_candidate(ctx, population, &qualities, &mut rng)
        });
        for cand in produced {
            if accepted >= slots {
                break; // surplus of the batch is discarded, not consumed
            }
            consumed += 1;
            let thr = success_threshold(cfg, population[cand.p0].quality, population[cand.p1].quality);
            let ok = cand.quality.quality > thr;
            if ok {
                accepted += 1;
            }
            decided.push((cand, ok));
        }
    }

    let pressure_exceeded = accepted < slots;
    let mut fill: Vec<usize> = Vec::new();
    if pressure_exceeded {
        // promote the best rejected candidates so the population stays full
        let mut rejected: Vec<usize> =
            decided.iter().enumerate().filter(|(_, (_, ok))| !ok).map(|(i, _)| i).collect();
        rejected.sort_by(|&a, &b| {
            decided[b]
                .0
                .quality
                .quality
                .partial_cmp(&decided[a].0.quality.quality)
                .unwrap()
                .then(a.cmp(&b))
        });
        fill = rejected.into_iter().take(slots - accepted).collect();
        fill.sort_unstable();
    }

    let mut next = append_elites(recorder, population, &elite_idx, g, next_id)?;
    for (i, (cand, ok)) in decided.iter().enumerate() {
        let promoted = fill.binary_search(&i).is_ok();
        let flags = if *ok {
            VertexFlags::NONE
        } else {
            VertexFlags { rejected: true, excluded: !promoted, ..VertexFlags::NONE }
        };
        let individual = append_candidate(recorder, population, g, next_id, cand, flags)?;
        if *ok || promoted {
            next.push(individual);
        }
    }
    Ok((next, pressure_exceeded))
}
