//! One-factor-at-a-time parameter sweeps.
//!
//! A plan names one parameter, a list of values and a list of seeds. Every
//! `(value, seed)` pair is a trial: the base configuration with that single
//! override, fitted from `random_init(seed)`. Records are appended to a
//! JSON Lines log as trials finish and returned sorted by
//! `(parameter, value, seed)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{Method, Parameter, SolverConfig};
use crate::cpapr::{decompose, SolveResult, SolveStatus, WallClock};
use crate::error::{Error, Result};
use crate::kruskal::{random_init, synthetic};
use crate::sptensor::{parse_frostt, ParseOptions, SparseTensor};

pub const DEFAULT_SEED_COUNT: u64 = 30;

fn default_seeds() -> Vec<u64> {
    (0..DEFAULT_SEED_COUNT).collect()
}

fn default_platform() -> String {
    "local".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
    pub mean: f64,
    #[serde(default)]
    pub name: Option<String>,
}

impl SyntheticSpec {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
            format!("synthetic-{}-r{}-s{}-m{}", dims.join("x"), self.rank, self.seed, self.mean)
        })
    }
}

/// Either a `.tns` path or `{"synthetic": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Path(PathBuf),
    Synthetic { synthetic: SyntheticSpec },
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DatasetSpec::Synthetic { synthetic } => synthetic.name(),
        }
    }

    pub fn load(&self) -> Result<SparseTensor> {
        match self {
            DatasetSpec::Path(p) => {
                let file = File::open(p)?;
                parse_frostt(BufReader::new(file), &ParseOptions::default())
            }
            DatasetSpec::Synthetic { synthetic: s } => {
                let (_, x) = synthetic(&s.dims, s.rank, s.seed, s.mean)?;
                if x.nnz() == 0 {
                    return Err(Error::EmptyTensor);
                }
                Ok(x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub dataset: DatasetSpec,
    pub solver: Method,
    pub parameter: String,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Settings applied to the solver defaults before the swept parameter.
    #[serde(default)]
    pub base_overrides: Map<String, Value>,
    /// Per-trial wall-clock budget in seconds.
    #[serde(default)]
    pub time_limit: Option<f64>,
    #[serde(default = "default_platform")]
    pub platform_tag: String,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Plan(e.to_string()))
    }

    /// Solver defaults for the plan's method with `base_overrides` and the
    /// time limit applied.
    pub fn base_config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.solver);
        apply_overrides(&mut cfg, &self.base_overrides)?;
        if self.time_limit.is_some() {
            cfg.time_limit = self.time_limit;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies `{name: value}` settings. Keys are parameter names plus `rank`,
/// `tau`, `time_limit` and `workers`.
pub fn apply_overrides(cfg: &mut SolverConfig, overrides: &Map<String, Value>) -> Result<()> {
    for (key, value) in overrides {
        let number = || {
            value
                .as_f64()
                .ok_or_else(|| Error::Config(format!("`{key}` must be a number, got {value}")))
        };
        let count = || {
            value
                .as_u64()
                .ok_or_else(|| Error::Config(format!("`{key}` must be a nonnegative integer, got {value}")))
        };
        match key.as_str() {
            "method" => {
                let m: Method = value
                    .as_str()
                    .ok_or_else(|| Error::Config("`method` must be a string".into()))?
                    .parse()?;
                if m != cfg.method {
                    return Err(Error::Config(format!("method {m} conflicts with {}", cfg.method)));
                }
            }
            "rank" => cfg.rank = count()? as usize,
            "tau" => cfg.tau = number()?,
            "workers" => cfg.workers = count()? as usize,
            "time_limit" => {
                cfg.time_limit = if value.is_null() { None } else { Some(number()?) };
            }
            other => other.parse::<Parameter>()?.set(cfg, number()?)?,
        }
    }
    Ok(())
}

/// One `(value, seed)` pair of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub parameter: Parameter,
    pub value: f64,
    pub seed: u64,
    pub config: SolverConfig,
}

/// Expands a plan value-major, seed-minor.
pub fn expand_plan(plan: &ExperimentPlan) -> Result<Vec<Trial>> {
    let parameter: Parameter = plan.parameter.parse()?;
    if plan.values.is_empty() {
        return Err(Error::Plan("values list is empty".into()));
    }
    if plan.seeds.is_empty() {
        return Err(Error::Plan("seeds list is empty".into()));
    }
    let base = plan.base_config()?;
    let mut trials = Vec::with_capacity(plan.values.len() * plan.seeds.len());
    for &value in &plan.values {
        let mut config = base.clone();
        parameter.set(&mut config, value)?;
        config.validate()?;
        for &seed in &plan.seeds {
            trials.push(Trial {
                parameter,
                value,
                seed,
                config: config.clone(),
            });
        }
    }
    Ok(trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    MaxIterations,
    Canceled,
    /// The trial produced no result.
    Missing,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Converged,
        Outcome::MaxIterations,
        Outcome::Canceled,
        Outcome::Missing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::MaxIterations => "max_iterations",
            Outcome::Canceled => "canceled",
            Outcome::Missing => "missing",
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Plan(format!("unknown outcome `{s}`")))
    }
}

pub fn classify_outcome(r: &SolveResult) -> Outcome {
    match r.status {
        SolveStatus::Converged => Outcome::Converged,
        SolveStatus::MaxIterations => Outcome::MaxIterations,
        SolveStatus::Canceled => Outcome::Canceled,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub platform_tag: String,
    pub solver: Method,
    pub dataset: String,
    pub parameter: String,
    pub value: f64,
    pub seed: u64,
    pub outcome: Outcome,
    pub function_evaluations: Option<u64>,
    pub outer_iterations: Option<u64>,
    pub final_objective: Option<f64>,
    pub final_kkt: Option<f64>,
    pub elapsed: Option<f64>,
}

impl ExperimentRecord {
    /// Every field except `elapsed` and `platform_tag`.
    pub fn deterministic_fields(&self) -> impl PartialEq + std::fmt::Debug {
        (
            self.solver,
            self.dataset.clone(),
            self.parameter.clone(),
            self.value.to_bits(),
            self.seed,
            self.outcome,
            self.function_evaluations,
            self.outer_iterations,
            self.final_objective.map(f64::to_bits),
            self.final_kkt.map(f64::to_bits),
        )
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "platform",
    "solver",
    "dataset",
    "parameter",
    "value",
    "seed",
    "outcome",
    "fevals",
    "outer_iters",
    "final_objective",
    "final_kkt",
    "elapsed",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.platform_tag.clone(),
            r.solver.to_string(),
            r.dataset.clone(),
            r.parameter.clone(),
            r.value.to_string(),
            r.seed.to_string(),
            r.outcome.as_str().to_string(),
            opt(r.function_evaluations),
            opt(r.outer_iterations),
            opt(r.final_objective),
            opt(r.final_kkt),
            opt(r.elapsed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Plan(format!("unexpected CSV header {:?}", headers)));
    }
    let bad = |field: &str, v: &str| Error::Plan(format!("bad {field} `{v}`"));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<Option<f64>> {
            match f(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(CSV_HEADER[i], s)),
            }
        };
        let int = |i: usize| -> Result<Option<u64>> {
            match f(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(CSV_HEADER[i], s)),
            }
        };
        out.push(ExperimentRecord {
            platform_tag: f(0).to_string(),
            solver: f(1).parse()?,
            dataset: f(2).to_string(),
            parameter: f(3).to_string(),
            value: f(4).parse().map_err(|_| bad("value", f(4)))?,
            seed: f(5).parse().map_err(|_| bad("seed", f(5)))?,
            outcome: f(6).parse()?,
            function_evaluations: int(7)?,
            outer_iterations: int(8)?,
            final_objective: num(9)?,
            final_kkt: num(10)?,
            elapsed: num(11)?,
        });
    }
    Ok(out)
}

pub fn read_records_jsonl<R: BufRead>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Reads a record log, choosing CSV for a `.csv` extension and JSON Lines
/// otherwise.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_records_csv(file)
    } else {
        read_records_jsonl(BufReader::new(file))
    }
}

/// Canonical record order: parameter (table order), value, seed, then solver.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    let key = |p: &str| p.parse::<Parameter>().map(Parameter::table_position).unwrap_or(usize::MAX);
    records.sort_by(|a, b| {
        key(&a.parameter)
            .cmp(&key(&b.parameter))
            .then_with(|| a.parameter.cmp(&b.parameter))
            .then_with(|| a.value.total_cmp(&b.value))
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.solver.cmp(&b.solver))
            .then_with(|| a.dataset.cmp(&b.dataset))
    });
}

/// Default trial body: uniform random start, then a full fit.
pub fn run_trial(x: &SparseTensor, trial: &Trial) -> Result<SolveResult> {
    let k0 = random_init(x.dims(), trial.config.rank, trial.seed)?;
    let (_, result) = decompose(x, &k0, &trial.config, &WallClock::start())?;
    Ok(result)
}

/// Runs a plan against its dataset with the default trial body.
pub fn run_plan(plan: &ExperimentPlan, workers: usize, log: Option<&Path>) -> Result<Vec<ExperimentRecord>> {
    let x = plan.dataset.load()?;
    run_trials(plan, &x, workers, log, &run_trial)
}

type TrialFn = dyn Fn(&SparseTensor, &Trial) -> Result<SolveResult> + Sync;

/// Runs every trial of `plan` on `x` with `workers` threads. A trial that
/// errors or panics becomes a `missing` record.
pub fn run_trials(
    plan: &ExperimentPlan,
    x: &SparseTensor,
    workers: usize,
    log: Option<&Path>,
    body: &TrialFn,
) -> Result<Vec<ExperimentRecord>> {
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let trials = expand_plan(plan)?;
    let dataset = plan.dataset.name();
    let writer = match log {
        Some(p) => Some(Mutex::new(BufWriter::new(
            std::fs::OpenOptions::new().create(true).append(true).open(p)?,
        ))),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let run_one = |trial: &Trial| -> Result<ExperimentRecord> {
        let mut trial = trial.clone();
        trial.config.workers = 1;
        let result = catch_unwind(AssertUnwindSafe(|| body(x, &trial)));
        let record = match result {
            Ok(Ok(r)) => ExperimentRecord {
                platform_tag: plan.platform_tag.clone(),
                solver: plan.solver,
                dataset: dataset.clone(),
                parameter: trial.parameter.name().to_string(),
                value: trial.value,
                seed: trial.seed,
                outcome: classify_outcome(&r),
                function_evaluations: Some(r.function_evaluations),
                outer_iterations: Some(r.outer_iterations),
                final_objective: Some(r.final_objective),
                final_kkt: Some(r.final_kkt_violation),
                elapsed: Some(r.elapsed),
            },
            Ok(Err(_)) | Err(_) => missing_record(plan, &dataset, &trial),
        };
        if let Some(w) = &writer {
            let mut w = w.lock().expect("record log lock poisoned");
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(record)
    };

    let mut records = pool.install(|| trials.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;
    sort_records(&mut records);
    Ok(records)
}

fn missing_record(plan: &ExperimentPlan, dataset: &str, trial: &Trial) -> ExperimentRecord {
    ExperimentRecord {
        platform_tag: plan.platform_tag.clone(),
        solver: plan.solver,
        dataset: dataset.to_string(),
        parameter: trial.parameter.name().to_string(),
        value: trial.value,
        seed: trial.seed,
        outcome: Outcome::Missing,
        function_evaluations: None,
        outer_iterations: None,
        final_objective: None,
        final_kkt: None,
        elapsed: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(parameter: &str, values: Vec<f64>, seeds: Vec<u64>) -> ExperimentPlan {
        ExperimentPlan {
            dataset: DatasetSpec::Synthetic {
                synthetic: SyntheticSpec {
                    dims: vec![4, 3, 2],
                    rank: 2,
                    seed: 1,
                    mean: 20.0,
                    name: None,
                },
            },
            solver: Method::Pdnr,
            parameter: parameter.into(),
            values,
            seeds,
            base_overrides: Map::new(),
            time_limit: None,
            platform_tag: "test".into(),
        }
    }

    #[test]
    fn expands_value_major() {
        let p = plan("mu_initial", vec![1e-2, 1e-5, 1e-8], default_seeds());
        let trials = expand_plan(&p).unwrap();
        assert_eq!(trials.len(), 90);
        assert_eq!(trials[0].value, 1e-2);
        assert_eq!(trials[29].seed, 29);
        assert_eq!(trials[30].value, 1e-5);
        assert_eq!(trials[30].seed, 0);
        assert_eq!(trials[45].config.pdnr.mu_initial, 1e-5);
    }

    #[test]
    fn single_trial_is_base_plus_override() {
        let p = plan("size_LBFGS", vec![7.0], vec![4]);
        let trials = expand_plan(&p).unwrap();
        assert_eq!(trials.len(), 1);
        let mut expected = SolverConfig::new(Method::Pdnr);
        expected.pqnr.size_lbfgs = 7;
        assert_eq!(trials[0].config, expected);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(matches!(expand_plan(&plan("mu_initial", vec![], vec![0])), Err(Error::Plan(_))));
        assert!(matches!(expand_plan(&plan("bogus", vec![1.0], vec![0])), Err(Error::UnknownParameter(_))));
        assert!(matches!(
            expand_plan(&plan("step_reduction_factor", vec![1.5], vec![0])),
            Err(Error::InvalidParameterValue { .. })
        ));
        // legal alone, but inverts the damping tolerances
        assert!(expand_plan(&plan("damping_increase_tolerance", vec![0.8], vec![0])).is_err());
    }

    #[test]
    fn plan_json_defaults_and_overrides() {
        let p = ExperimentPlan::from_json(
            r#"{"dataset": {"synthetic": {"dims": [4,3], "rank": 2, "seed": 1, "mean": 5}},
                "solver": "PQNR", "parameter": "size_LBFGS", "values": [1, 2],
                "base_overrides": {"rank": 2, "max_outer_iterations": 50}}"#,
        )
        .unwrap();
        assert_eq!(p.seeds.len(), 30);
        assert_eq!(p.platform_tag, "local");
        let base = p.base_config().unwrap();
        assert_eq!(base.rank, 2);
        assert_eq!(base.max_outer_iterations, 50);
        assert_eq!(base.numerical.eps_active_set, 1e-8);
        assert!(ExperimentPlan::from_json(r#"{"dataset": "x.tns"}"#).is_err());
        let p = ExperimentPlan::from_json(
            r#"{"dataset": "data/x.tns", "solver": "PDNR", "parameter": "mu_initial", "values": [1e-5], "extra": 1}"#,
        );
        assert!(p.is_err());
    }

    #[test]
    fn classify_is_total() {
        let mut r = SolveResult {
            status: SolveStatus::Converged,
            outer_iterations: 3,
            total_inner_iterations: 0,
            function_evaluations: 0,
            model_evaluations: 0,
            line_search_failures: 0,
            factorization_failures: 0,
            final_objective: 0.0,
            final_kkt_violation: 5e-5,
            elapsed: 0.0,
            log: vec![],
        };
        assert_eq!(classify_outcome(&r), Outcome::Converged);
        r.status = SolveStatus::MaxIterations;
        assert_eq!(classify_outcome(&r), Outcome::MaxIterations);
        r.status = SolveStatus::Canceled;
        assert_eq!(classify_outcome(&r), Outcome::Canceled);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            ExperimentRecord {
                platform_tag: "a".into(),
                solver: Method::Pdnr,
                dataset: "d".into(),
                parameter: "mu_initial".into(),
                value: 1e-5,
                seed: 3,
                outcome: Outcome::Converged,
                function_evaluations: Some(120),
                outer_iterations: Some(9),
                final_objective: Some(-12.5),
                final_kkt: Some(3e-5),
                elapsed: Some(0.25),
            },
            missing_record(&plan("mu_initial", vec![1e-2], vec![4]), "d", &expand_plan(&plan("mu_initial", vec![1e-2], vec![4])).unwrap()[0]),
        ];
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("platform,solver,dataset,parameter,value,seed,outcome,fevals,outer_iters,final_objective,final_kkt,elapsed\n"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], recs[0]);
        assert_eq!(back[1].outcome, Outcome::Missing);
        assert_eq!(back[1].function_evaluations, None);
    }
}
