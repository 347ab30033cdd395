use std::collections::HashMap;
use std::path::PathBuf;
use std::process;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gptrace::cli::{
    self, read_config_file, CliError, ExperimentSpec, TraceSelector,
};
use gptrace::engine::{Algorithm, RunConfig};
use gptrace::operators::CutBias;
use gptrace::metrics::AnalysisOptions;
use gptrace::par;
use gptrace::problems::ProblemId;

#[derive(Parser)]
#[command(
    name = "gptrace",
    about = "Symbolic-regression GP with genealogy recording and subtree provenance tracing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset CSV
    Data {
        #[arg(long)]
        problem: ProblemId,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (defaults to $GPTRACE_OUT or .)
        #[arg(long, env = "GPTRACE_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Run repeated GP experiments, writing genealogy logs and stats CSVs
    Run(Box<RunArgs>),
    /// Trace an individual of a recorded run and export the trace graph
    Trace {
        /// Genealogy log file
        #[arg(long)]
        log: PathBuf,
        /// Trace the best individual of the final generation
        #[arg(long, conflicts_with = "id")]
        best: bool,
        /// Trace a specific vertex id
        #[arg(long)]
        id: Option<u64>,
        #[arg(long, env = "GPTRACE_OUT", default_value = ".")]
        out: PathBuf,
        /// Count intermediate vertices in trace and ancestry sets
        #[arg(long)]
        count_intermediates: bool,
    },
    /// Recompute the full metric suite from genealogy logs alone
    Analyze {
        /// Genealogy log files
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, env = "GPTRACE_OUT", default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pair_budget: usize,
        /// Include rejected offspring in improvement statistics
        #[arg(long)]
        include_rejected: bool,
        #[arg(long)]
        count_intermediates: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemId>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Population size
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    /// Number of repetitions
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, env = "GPTRACE_OUT")]
    out: Option<PathBuf>,
    /// Tournament size (standard GP selection)
    #[arg(long)]
    tournament: Option<usize>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    #[arg(long)]
    elites: Option<usize>,
    /// Offspring selection: stop once candidates per slot exceed this
    #[arg(long)]
    max_sel_pressure: Option<f64>,
    /// Offspring selection: where the success threshold sits between the
    /// worse (0) and better (1) parent quality
    #[arg(long)]
    comparison_factor: Option<f64>,
    #[arg(long)]
    mutation_sigma: Option<f64>,
    /// Crossover cut-point choice: `uniform` or an internal-node probability
    #[arg(long)]
    cut_bias: Option<CutBias>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
    /// Evaluate post-crossover, pre-mutation trees (true/false)
    #[arg(long)]
    eval_intermediates: Option<bool>,
    #[arg(long)]
    pair_budget: Option<usize>,
    /// Include rejected offspring in improvement statistics
    #[arg(long)]
    include_rejected: bool,
}

fn file_value<T: FromStr>(file: &HashMap<String, String>, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("config key `{key}`: {e}"))),
    }
}

fn build_spec(args: &RunArgs) -> Result<(ExperimentSpec, Option<usize>), CliError> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => HashMap::new(),
    };
    macro_rules! pick {
        ($cli:expr, $key:literal) => {
            match $cli.clone() {
                Some(v) => Some(v),
                None => file_value(&file, $key)?,
            }
        };
    }

    let problem: ProblemId = pick!(args.problem, "problem")
        .ok_or_else(|| CliError::Config("missing --problem (or `problem=` in the config file)".into()))?;
    let algorithm = pick!(args.algorithm, "algorithm").unwrap_or(Algorithm::Sgp);
    let seed = pick!(args.seed, "seed").unwrap_or(1);

    let mut config = RunConfig::new(algorithm, seed);
    if let Some(v) = pick!(args.pop, "pop") {
        config.population_size = v;
    }
    if let Some(v) = pick!(args.generations, "generations") {
        config.max_generations = v;
    }
    if let Some(v) = pick!(args.tournament, "tournament") {
        config.tournament_size = v;
    }
    if let Some(v) = pick!(args.mutation_rate, "mutation-rate") {
        config.mutation_rate = v;
    }
    if let Some(v) = pick!(args.elites, "elites") {
        config.elites = v;
    }
    if let Some(v) = pick!(args.max_sel_pressure, "max-sel-pressure") {
        config.max_selection_pressure = v;
    }
    if let Some(v) = pick!(args.comparison_factor, "comparison-factor") {
        config.comparison_factor = v;
    }
    if let Some(v) = pick!(args.mutation_sigma, "mutation-sigma") {
        config.mutation_sigma = v;
    }
    if let Some(v) = pick!(args.cut_bias, "cut-bias") {
        config.cut_bias = v;
    }
    if let Some(v) = pick!(args.max_depth, "max-depth") {
        config.limits.max_depth = v;
    }
    if let Some(v) = pick!(args.max_length, "max-length") {
        config.limits.max_length = v;
    }
    if let Some(v) = pick!(args.eval_intermediates, "eval-intermediates") {
        config.evaluate_intermediates = v;
    }

    let repetitions = pick!(args.reps, "reps").unwrap_or(1);
    let out_dir = match args.out.clone() {
        Some(p) => p,
        None => file_value::<PathBuf>(&file, "out")?.unwrap_or_else(|| PathBuf::from(".")),
    };
    let mut analysis = AnalysisOptions::default();
    if let Some(v) = pick!(args.pair_budget, "pair-budget") {
        analysis.pair_budget = v;
    }
    analysis.include_rejected =
        args.include_rejected || file_value(&file, "include-rejected")?.unwrap_or(false);
    let jobs = pick!(args.jobs, "jobs");

    Ok((ExperimentSpec { config, problem, repetitions, out_dir, analysis }, jobs))
}

fn real_main(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Data { problem, seed, out } => {
            cli::cmd_data(problem, seed, &out)?;
        }
        Command::Run(args) => {
            let (spec, jobs) = build_spec(&args)?;
            par::configure_jobs(jobs);
            cli::cmd_run(&spec)?;
        }
        Command::Trace { log, best, id, out, count_intermediates } => {
            let selector = match (best, id) {
                (_, Some(id)) => TraceSelector::Id(id),
                _ => TraceSelector::Best,
            };
            let opts = AnalysisOptions { count_intermediates, ..AnalysisOptions::default() };
            let report = cli::cmd_trace(&log, selector, &out, &opts)?;
            println!("{}", report.render());
        }
        Command::Analyze { logs, out, pair_budget, include_rejected, count_intermediates, jobs } => {
            par::configure_jobs(jobs);
            let opts = AnalysisOptions { include_rejected, count_intermediates, pair_budget };
            let artifacts = cli::cmd_analyze(&logs, &out, &opts)?;
            for (stem, contribution) in &artifacts.contributions {
                match contribution {
                    Some(r) => println!("{stem}: contribution ratio of best = {r}"),
                    None => println!("{stem}: contribution ratio of best = NA"),
                }
            }
            println!("wrote {}", artifacts.summary_path.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = real_main(cli) {
        eprintln!("error: {err}");
        process::exit(err.exit_code());
    }
}
