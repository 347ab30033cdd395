//! The `data | run | trace | analyze` subcommands, exposed as library
//! functions so experiments can also be driven programmatically.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{self, EngineError, RunConfig};
use crate::exprtree::SubtreeRef;
use crate::genealogy::{GenealogyGraph, GenealogyRecorder, LogError, RunMeta, VertexId};
use crate::metrics::{
    contribution_ratio, run_stats, AnalysisOptions, GenerationStats, STATS_CSV_HEADER,
};
use crate::par;
use crate::problems::{generate_dataset, write_dataset_csv, Problem, ProblemId};
use crate::splitmix64;
use crate::trace::{trace, write_dot, TraceTask};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl CliError {
    /// Process exit code: 1 for configuration errors, 2 for I/O and
    /// log-integrity errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    fn io(path: &Path, err: io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(msg) => CliError::Config(msg),
            EngineError::Log(err) => CliError::Log(err),
        }
    }
}

/// A full experiment: one run configuration, repeated.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub config: RunConfig,
    pub problem: ProblemId,
    pub repetitions: usize,
    pub out_dir: PathBuf,
    pub analysis: AnalysisOptions,
}

/// Seed of repetition `r`: the base seed plus the repetition index, passed
/// through the splitmix64 scrambler so the streams are independent.
pub fn repetition_seed(base: u64, repetition: usize) -> u64 {
    splitmix64(base.wrapping_add(repetition as u64))
}

/// Generates and writes a problem's dataset CSV; returns the path.
pub fn cmd_data(problem_id: ProblemId, seed: u64, out_dir: &Path) -> Result<PathBuf, CliError> {
    let problem = Problem::standard(problem_id);
    let dataset = generate_dataset(&problem, seed);
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let path = out_dir.join(format!("{problem_id}.csv"));
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_dataset_csv(&problem, &dataset, BufWriter::new(file))
        .map_err(|e| CliError::io(&path, e))?;
    println!(
        "wrote {} ({} rows, {} columns)",
        path.display(),
        dataset.rows(),
        problem.dimension + 1
    );
    Ok(path)
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub dataset_path: PathBuf,
    pub log_paths: Vec<PathBuf>,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// Executes all repetitions, writing `run-<r>.log` and `run-<r>.csv` per
/// repetition plus `dataset.csv` and a cross-run `summary.csv`.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunArtifacts, CliError> {
    spec.config.validate().map_err(CliError::Config)?;
    if spec.repetitions < 1 {
        return Err(CliError::Config("repetition count must be at least 1".into()));
    }
    let out = &spec.out_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let problem = Problem::standard(spec.problem);
    let data_seed = spec.config.seed;
    let dataset = generate_dataset(&problem, data_seed);
    let dataset_path = out.join("dataset.csv");
    let file = File::create(&dataset_path).map_err(|e| CliError::io(&dataset_path, e))?;
    write_dataset_csv(&problem, &dataset, BufWriter::new(file))
        .map_err(|e| CliError::io(&dataset_path, e))?;

    let results: Vec<Result<Vec<GenerationStats>, CliError>> =
        par::map_indexed(spec.repetitions, |r| {
            let mut config = spec.config.clone();
            config.seed = repetition_seed(spec.config.seed, r);
            let meta = RunMeta {
                problem: spec.problem,
                algorithm: config.algorithm,
                seed: config.seed,
                data_seed,
                population_size: config.population_size,
                max_generations: config.max_generations,
                eval_intermediates: config.evaluate_intermediates,
            };
            let log_path = out.join(format!("run-{r}.log"));
            let file = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
            let mut recorder = GenealogyRecorder::with_writer(meta, Box::new(BufWriter::new(file)))
                .map_err(CliError::Log)?;
            engine::run(&config, &dataset, &mut recorder)?;
            let graph = recorder.finish()?;
            let stats = run_stats(&graph, &dataset.matrix, &spec.analysis)?;
            let csv_path = out.join(format!("run-{r}.csv"));
            write_stats_csv(&csv_path, &stats)?;
            Ok(stats)
        });
    let mut per_run = Vec::with_capacity(spec.repetitions);
    for r in results {
        per_run.push(r?);
    }

    let summary_path = out.join("summary.csv");
    write_summary_csv(&summary_path, &per_run)?;
    println!("wrote {} runs to {}", spec.repetitions, out.display());
    Ok(RunArtifacts {
        dataset_path,
        log_paths: (0..spec.repetitions).map(|r| out.join(format!("run-{r}.log"))).collect(),
        csv_paths: (0..spec.repetitions).map(|r| out.join(format!("run-{r}.csv"))).collect(),
        summary_path,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum TraceSelector {
    Best,
    Id(u64),
}

#[derive(Debug)]
pub struct TraceReport {
    pub vertex: VertexId,
    pub generation: usize,
    pub quality: Option<f64>,
    pub trace_vertices: usize,
    pub trace_arcs: usize,
    pub ancestry_size: usize,
    pub contribution: Option<f64>,
    pub dot_path: PathBuf,
}

impl TraceReport {
    pub fn render(&self) -> String {
        let ratio = match self.contribution {
            Some(r) => format!("{r}"),
            None => "NA".into(),
        };
        format!(
            "traced vertex {} (generation {}, quality {})\n\
             trace graph: {} vertices, {} arcs\n\
             ancestry: {} vertices\n\
             contribution ratio: {ratio}\n\
             dot file: {}",
            self.vertex,
            self.generation,
            self.quality.map_or("NA".into(), |q| format!("{q}")),
            self.trace_vertices,
            self.trace_arcs,
            self.ancestry_size,
            self.dot_path.display()
        )
    }
}

/// Traces one individual of a recorded run and exports the trace graph as
/// DOT plus a text report.
pub fn cmd_trace(
    log: &Path,
    selector: TraceSelector,
    out_dir: &Path,
    opts: &AnalysisOptions,
) -> Result<TraceReport, CliError> {
    let graph = GenealogyGraph::read_log_file(log)?;
    let id = match selector {
        TraceSelector::Best => graph
            .best_of(graph.max_generation())
            .ok_or_else(|| CliError::Config("log has no evaluated individuals".into()))?,
        TraceSelector::Id(raw) => {
            let id = VertexId(raw);
            if !graph.contains(id) {
                return Err(CliError::Config(format!("vertex {raw} not present in {}", log.display())));
            }
            id
        }
    };
    let vertex = graph.vertex(id);
    let tg = trace(&graph, &TraceTask { vertex: id, subtree: SubtreeRef::new(0, vertex.tree.len()) })?;
    let contribution = contribution_ratio(&graph, id, opts)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let dot_path = out_dir.join(format!("trace-{id}.dot"));
    let file = File::create(&dot_path).map_err(|e| CliError::io(&dot_path, e))?;
    write_dot(&graph, &tg, BufWriter::new(file)).map_err(|e| CliError::io(&dot_path, e))?;
    Ok(TraceReport {
        vertex: id,
        generation: graph.generation_of(id),
        quality: vertex.quality,
        trace_vertices: tg.vertices().len(),
        trace_arcs: tg.arcs().len(),
        ancestry_size: graph.ancestry(id).len(),
        contribution,
        dot_path,
    })
}

#[derive(Debug)]
pub struct AnalyzeArtifacts {
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    /// Contribution ratio of each log's best individual.
    pub contributions: Vec<(String, Option<f64>)>,
}

/// Recomputes the full stats suite from logs alone, proving the logs are
/// self-sufficient. Writes `<stem>.stats.csv` per log and a cross-log
/// `analyze-summary.csv`.
pub fn cmd_analyze(
    logs: &[PathBuf],
    out_dir: &Path,
    opts: &AnalysisOptions,
) -> Result<AnalyzeArtifacts, CliError> {
    if logs.is_empty() {
        return Err(CliError::Config("no log files given".into()));
    }
    let mut graphs = Vec::with_capacity(logs.len());
    for path in logs {
        let graph = GenealogyGraph::read_log_file(path)?;
        if graph.meta().is_none() {
            return Err(CliError::Config(format!(
                "{} carries no run metadata; cannot recover its problem and dataset",
                path.display()
            )));
        }
        graphs.push(graph);
    }
    let problems: Vec<ProblemId> = graphs.iter().map(|g| g.meta().unwrap().problem).collect();
    if problems.iter().any(|p| *p != problems[0]) {
        return Err(CliError::Config(format!(
            "logs mix problems ({}); analyze one problem at a time",
            problems.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    type LogStats = (Vec<GenerationStats>, Option<f64>);
    let per_log: Vec<Result<LogStats, CliError>> = par::map_slice(&graphs, |graph| {
        let meta = graph.meta().unwrap();
        let dataset = generate_dataset(&Problem::standard(meta.problem), meta.data_seed);
        let stats = run_stats(graph, &dataset.matrix, opts)?;
        let best = graph.best_of(graph.max_generation());
        let contribution = match best {
            Some(id) => contribution_ratio(graph, id, opts)?,
            None => None,
        };
        Ok((stats, contribution))
    });

    let mut csv_paths = Vec::new();
    let mut all_stats = Vec::new();
    let mut contributions = Vec::new();
    for (path, result) in logs.iter().zip(per_log) {
        let (stats, contribution) = result?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let csv_path = out_dir.join(format!("{stem}.stats.csv"));
        write_stats_csv(&csv_path, &stats)?;
        csv_paths.push(csv_path);
        contributions.push((stem, contribution));
        all_stats.push(stats);
    }
    let summary_path = out_dir.join("analyze-summary.csv");
    write_summary_csv(&summary_path, &all_stats)?;
    Ok(AnalyzeArtifacts { csv_paths, summary_path, contributions })
}

pub fn write_stats_csv(path: &Path, rows: &[GenerationStats]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> io::Result<()> {
        writeln!(w, "{STATS_CSV_HEADER}")?;
        for row in rows {
            writeln!(w, "{}", row.csv_row())?;
        }
        w.flush()
    })()
    .map_err(|e| CliError::io(path, e))
}

/// Per-generation means across runs; cells with no defined values stay NA.
pub fn write_summary_csv(path: &Path, runs: &[Vec<GenerationStats>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let generations = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    (|| -> io::Result<()> {
        writeln!(w, "{STATS_CSV_HEADER}")?;
        for g in 0..generations {
            let mut row = g.to_string();
            for col in 0..11 {
                let values: Vec<f64> =
                    runs.iter().filter_map(|r| r.get(g)).filter_map(|s| s.columns()[col]).collect();
                row.push(',');
                if values.is_empty() {
                    row.push_str("NA");
                } else {
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    row.push_str(&format!("{mean}"));
                }
            }
            writeln!(w, "{row}")?;
        }
        w.flush()
    })()
    .map_err(|e| CliError::io(path, e))
}

/// Flat `key=value` config file; `#` starts a comment line.
pub fn read_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected key=value, found `{line}`", path.display(), i + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}
