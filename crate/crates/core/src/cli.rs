//! Command-line front end: `decompose`, `gen`, `sweep` and `report`.
//!
//! Exit codes: 0 converged (or success for commands without a solve), 2 hit
//! the outer-iteration cap, 3 canceled by the time limit, 1 usage or data
//! error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use crate::config::{Method, Parameter, SolverConfig};
use crate::cpapr::{decompose, SolveStatus, WallClock};
use crate::error::{Error, Result};
use crate::kruskal::{random_init, synthetic};
use crate::report::{outcomes_csv, render_heatmap, summarize, summarize_outcomes, summary_csv};
use crate::sptensor::{parse_frostt, write_frostt, ParseOptions};
use crate::sweep::{read_records, run_plan, write_records_csv, ExperimentPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITERATIONS: i32 = 2;
pub const EXIT_CANCELED: i32 = 3;

pub fn exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged => EXIT_OK,
        SolveStatus::MaxIterations => EXIT_MAX_ITERATIONS,
        SolveStatus::Canceled => EXIT_CANCELED,
    }
}

#[derive(Debug, Parser)]
#[command(name = "cpapr", version, about = "Poisson CP decomposition of sparse count tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a CP model to a .tns file.
    Decompose(DecomposeArgs),
    /// Sample a synthetic count tensor from a random low-rank model.
    Gen(GenArgs),
    /// Run a one-factor-at-a-time parameter sweep.
    Sweep(SweepArgs),
    /// Summarize sweep records into tables and heatmaps.
    Report(ReportArgs),
}

/// One flag per tunable parameter. Unset flags keep the method's default.
#[derive(Debug, Default, Args)]
pub struct ParameterArgs {
    #[arg(long)]
    pub max_outer_iterations: Option<u64>,
    #[arg(long)]
    pub max_inner_iterations: Option<u32>,
    #[arg(long)]
    pub max_backtrack_steps: Option<u32>,
    #[arg(long)]
    pub min_variable_nonzero_tolerance: Option<f64>,
    #[arg(long)]
    pub step_reduction_factor: Option<f64>,
    #[arg(long)]
    pub suff_decrease_tolerance: Option<f64>,
    #[arg(long)]
    pub mu_initial: Option<f64>,
    #[arg(long)]
    pub damping_increase_factor: Option<f64>,
    #[arg(long)]
    pub damping_decrease_factor: Option<f64>,
    #[arg(long)]
    pub damping_increase_tolerance: Option<f64>,
    #[arg(long)]
    pub damping_decrease_tolerance: Option<f64>,
    #[arg(long = "size-lbfgs")]
    pub size_lbfgs: Option<usize>,
    #[arg(long)]
    pub eps_div_zero_grad: Option<f64>,
    #[arg(long)]
    pub log_zero_safeguard: Option<f64>,
    #[arg(long)]
    pub eps_active_set: Option<f64>,
}

impl ParameterArgs {
    fn values(&self) -> Vec<(Parameter, Option<f64>)> {
        use Parameter::*;
        vec![
            (MaxOuterIterations, self.max_outer_iterations.map(|v| v as f64)),
            (MaxInnerIterations, self.max_inner_iterations.map(f64::from)),
            (MaxBacktrackSteps, self.max_backtrack_steps.map(f64::from)),
            (MinVariableNonzeroTolerance, self.min_variable_nonzero_tolerance),
            (StepReductionFactor, self.step_reduction_factor),
            (SuffDecreaseTolerance, self.suff_decrease_tolerance),
            (MuInitial, self.mu_initial),
            (DampingIncreaseFactor, self.damping_increase_factor),
            (DampingDecreaseFactor, self.damping_decrease_factor),
            (DampingIncreaseTolerance, self.damping_increase_tolerance),
            (DampingDecreaseTolerance, self.damping_decrease_tolerance),
            (SizeLbfgs, self.size_lbfgs.map(|v| v as f64)),
            (EpsDivZeroGrad, self.eps_div_zero_grad),
            (LogZeroSafeguard, self.log_zero_safeguard),
            (EpsActiveSet, self.eps_active_set),
        ]
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Input tensor in FROSTT .tns format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// KKT tolerance.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Threads for the per-mode row map.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed of the random initial model.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the fitted model JSON.
    #[arg(long)]
    pub output_model: Option<PathBuf>,
    /// Where to write the solve summary JSON.
    #[arg(long)]
    pub output_result: Option<PathBuf>,
    /// Sum repeated coordinates instead of rejecting them.
    #[arg(long)]
    pub sum_duplicates: bool,
    /// Declared extents, e.g. `30,25,20`; must cover every index.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// JSON file of settings; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective solver configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    #[command(flatten)]
    pub params: ParameterArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target mean count per cell.
    #[arg(long)]
    pub mean: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the ground-truth model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Plan JSON.
    #[arg(long)]
    pub plan: PathBuf,
    /// JSONL record log, appended as trials finish.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Sorted CSV of all records.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Records as JSONL, or CSV when the extension is `.csv`.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Settings a decompose config file may carry besides solver settings.
#[derive(Debug, Default)]
struct FileSettings {
    input: Option<PathBuf>,
    seed: Option<u64>,
    output_model: Option<PathBuf>,
    output_result: Option<PathBuf>,
    sum_duplicates: bool,
    dims: Option<Vec<usize>>,
}

/// Splits a config file into I/O settings and solver overrides. Keys may use
/// hyphens or underscores.
fn read_config_file(path: &Path) -> Result<(FileSettings, Map<String, Value>)> {
    let text = fs::read_to_string(path)?;
    let map: Map<String, Value> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut settings = FileSettings::default();
    let mut solver = Map::new();
    for (key, value) in map {
        let key = key.replace('-', "_");
        let bad = |what: &str| Error::Config(format!("`{key}` must be {what}"));
        match key.as_str() {
            "input" | "output_model" | "output_result" => {
                let p = PathBuf::from(value.as_str().ok_or_else(|| bad("a path string"))?);
                match key.as_str() {
                    "input" => settings.input = Some(p),
                    "output_model" => settings.output_model = Some(p),
                    _ => settings.output_result = Some(p),
                }
            }
            "seed" => settings.seed = Some(value.as_u64().ok_or_else(|| bad("a nonnegative integer"))?),
            "sum_duplicates" => settings.sum_duplicates = value.as_bool().ok_or_else(|| bad("a boolean"))?,
            "dims" => settings.dims = Some(serde_json::from_value(value).map_err(|_| bad("a list of extents"))?),
            _ => {
                solver.insert(key, value);
            }
        }
    }
    Ok((settings, solver))
}

/// Effective configuration: method defaults, then the config file, then flags.
fn resolve_config(args: &DecomposeArgs, file: &Map<String, Value>) -> Result<SolverConfig> {
    let file_method = match file.get("method") {
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| Error::Config("`method` must be a string".into()))?
                .parse::<Method>()?,
        ),
        None => None,
    };
    let method = args.method.or(file_method).unwrap_or(Method::Pdnr);
    let mut cfg = SolverConfig::new(method);
    let mut file = file.clone();
    file.remove("method");
    crate::sweep::apply_overrides(&mut cfg, &file)?;
    if let Some(r) = args.rank {
        cfg.rank = r;
    }
    if let Some(t) = args.tau {
        cfg.tau = t;
    }
    if let Some(t) = args.time_limit {
        cfg.time_limit = Some(t);
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    for (p, v) in args.params.values() {
        if let Some(v) = v {
            p.set(&mut cfg, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<i32> {
    let (file, solver_file) = match &args.config {
        Some(p) => read_config_file(p)?,
        None => Default::default(),
    };
    let cfg = resolve_config(args, &solver_file)?;
    if args.dump_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(EXIT_OK);
    }
    let input = args
        .input
        .clone()
        .or(file.input)
        .ok_or_else(|| Error::Config("--input is required".into()))?;
    let opts = ParseOptions {
        sum_duplicates: args.sum_duplicates || file.sum_duplicates,
        dims: args.dims.clone().or(file.dims),
    };
    let x = parse_frostt(BufReader::new(File::open(&input)?), &opts)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let k0 = random_init(x.dims(), cfg.rank, seed)?;
    let (model, result) = decompose(&x, &k0, &cfg, &WallClock::start())?;

    if let Some(p) = args.output_model.clone().or(file.output_model) {
        fs::write(p, model.to_json())?;
    }
    if let Some(p) = args.output_result.clone().or(file.output_result) {
        fs::write(p, serde_json::to_string_pretty(&result)?)?;
    }
    eprintln!(
        "{:?}: {} outer iterations, {} function evaluations, objective {:.10e}, kkt {:.3e}",
        result.status,
        result.outer_iterations,
        result.function_evaluations,
        result.final_objective,
        result.final_kkt_violation
    );
    Ok(exit_code(result.status))
}

fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let (truth, sample) = synthetic(&args.dims, args.rank, args.seed, args.mean)?;
    let mut out = BufWriter::new(File::create(&args.output)?);
    write_frostt(&sample, &mut out)?;
    out.flush()?;
    if let Some(p) = &args.model {
        fs::write(p, truth.to_json())?;
    }
    if sample.nnz() == 0 {
        eprintln!("error: sampled tensor has no nonzeros; {} is empty", args.output.display());
        return Ok(EXIT_ERROR);
    }
    eprintln!("wrote {} nonzeros to {}", sample.nnz(), args.output.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let plan = ExperimentPlan::from_json(&fs::read_to_string(&args.plan)?)?;
    let records = run_plan(&plan, args.workers, args.log.as_deref())?;
    if let Some(p) = &args.csv {
        write_records_csv(&records, BufWriter::new(File::create(p)?))?;
    }
    eprintln!("{} trials recorded", records.len());
    Ok(EXIT_OK)
}

fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let records = read_records(&args.log)?;
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("summary.csv"), summary_csv(&summarize(&records)))?;
    fs::write(args.out_dir.join("outcomes.csv"), outcomes_csv(&summarize_outcomes(&records)))?;
    let mut pairs: Vec<(String, Method)> = records.iter().map(|r| (r.dataset.clone(), r.solver)).collect();
    pairs.sort();
    pairs.dedup();
    for (dataset, solver) in pairs {
        let (svg, csv) = render_heatmap(&records, &dataset, solver)?;
        let stem = format!("heatmap_{}_{}", sanitize(&dataset), solver.to_string().to_lowercase());
        fs::write(args.out_dir.join(format!("{stem}.svg")), svg)?;
        fs::write(args.out_dir.join(format!("{stem}.csv")), csv)?;
    }
    Ok(EXIT_OK)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Decompose(a) => cmd_decompose(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
