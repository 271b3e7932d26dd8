//! Scenario files, checks and reports for the `toruskam` command line tool.
//!
//! A scenario is a JSON object `{name, command, seed, params}`.  Running it
//! gives a [`Report`] listing every numeric check with its threshold, plus
//! artifact files (CSV tables, raw JSON).  Reports hold no timing so that a
//! rerun with the same seed is byte-identical; wall time goes to a separate
//! timing file.

pub mod commands;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Subcommands that run a single scenario.
pub const COMMANDS: [&str; 7] = ["calculus-check", "dn", "linop", "reduce", "flow", "kam", "measure"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(#[from] toruskam::error::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value < threshold`
    Below,
    /// `value <= threshold`
    AtMost,
    /// `value > threshold`
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Self {
        let pass = match relation {
            Relation::Below => value < threshold,
            Relation::AtMost => value <= threshold,
            Relation::Above => value > threshold,
        };
        Check { name: name.into(), value, threshold, relation, pass }
    }

    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::Below, threshold)
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::AtMost, threshold)
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::Above, threshold)
    }

    /// Boolean predicate as `value = 0` (holds) or `1` against `threshold = 0.5`.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::below(name, if ok { 0.0 } else { 1.0 }, 0.5)
    }

    /// Structural predicate checks, aggregated across scenarios.
    pub fn is_structure(&self) -> bool {
        self.name.starts_with("structure.")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl Scenario {
    pub fn from_value(v: Value) -> CliResult<Self> {
        let s: Scenario = serde_json::from_value(v).map_err(|e| CliError::Config(format!("scenario schema: {e}")))?;
        if !COMMANDS.contains(&s.command.as_str()) {
            return Err(CliError::Config(format!("unknown command `{}`", s.command)));
        }
        if s.name.is_empty() || s.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("bad scenario name `{}`", s.name)));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_value(read_json(path)?)
    }
}

pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parses the `params` block into a command's parameter type.
pub fn parse_params<T: serde::de::DeserializeOwned>(s: &Scenario) -> CliResult<T> {
    serde_json::from_value(s.params.clone()).map_err(|e| CliError::Config(format!("{} params: {e}", s.command)))
}

/// Result of one command: checks, a JSON payload and named artifacts.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub data: Value,
    pub artifacts: Vec<(String, String)>,
    /// numerical failure that stopped the command after some checks ran
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub failures: Vec<String>,
    /// diagnostic of a numerical failure that stopped the run
    pub error: Option<String>,
    pub data: Value,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_NUMERIC
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// A finished scenario: report, artifacts and wall time.
#[derive(Clone, Debug)]
pub struct Run {
    pub report: Report,
    pub artifacts: Vec<(String, String)>,
    pub seconds: f64,
}

/// Runs a validated scenario.  Numerical errors become failed reports; only
/// configuration errors are returned as `Err`.
pub fn run_scenario(s: &Scenario, threads: usize) -> CliResult<Run> {
    let t0 = Instant::now();
    let res = commands::dispatch(s, threads);
    let seconds = t0.elapsed().as_secs_f64();
    let (mut outcome, error) = match res {
        Ok(o) => (o, None),
        Err(CliError::Numeric(e)) => (Outcome::default(), Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let error = error.or(outcome.error.take());
    let failures: Vec<String> = outcome.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let pass = error.is_none() && failures.is_empty();
    let data = if outcome.data.is_null() { empty_object() } else { outcome.data };
    let report = Report { scenario: s.clone(), pass, checks: outcome.checks, failures, error, data };
    Ok(Run { report, artifacts: outcome.artifacts, seconds })
}

/// Output directory: `TORUSKAM_OUT` wins over the flag.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os("TORUSKAM_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out")),
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

pub fn to_pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Writes `<name>.json`, the artifacts `<name>.<artifact>` and `<name>.timing.json`.
pub fn write_run(dir: &Path, run: &Run) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    let name = &run.report.scenario.name;
    let path = dir.join(format!("{name}.json"));
    write(&path, &to_pretty(&run.report))?;
    for (suffix, body) in &run.artifacts {
        write(&dir.join(format!("{name}.{suffix}")), body)?;
    }
    write(&dir.join(format!("{name}.timing.json")), &to_pretty(&serde_json::json!({ "seconds": run.seconds })))?;
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub command: String,
    pub pass: bool,
    pub checks: usize,
    pub failures: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub failed: usize,
    pub pass: bool,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_NUMERIC
        }
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["name", "command", "pass", "checks", "failures", "error"]).expect("csv");
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.command.clone(),
                r.pass.to_string(),
                r.checks.to_string(),
                r.failures.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .expect("csv");
        }
        String::from_utf8(w.into_inner().expect("csv")).expect("utf8")
    }
}

/// Reads a manifest `{"scenarios": [...]}` whose entries are scenario objects
/// or paths relative to the manifest.
pub fn load_manifest(path: &Path) -> CliResult<Vec<Scenario>> {
    let v = read_json(path)?;
    let list = v
        .get("scenarios")
        .and_then(Value::as_array)
        .ok_or_else(|| CliError::Config(format!("{}: manifest needs a `scenarios` array", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = vec![];
    for item in list {
        out.push(match item {
            Value::String(p) => Scenario::load(&base.join(p))?,
            other => Scenario::from_value(other.clone())?,
        });
    }
    let mut names: Vec<&str> = out.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("duplicate scenario names in manifest".into()));
    }
    Ok(out)
}

/// Runs the scenarios over `threads` workers; results keep manifest order.
pub fn run_all(scenarios: &[Scenario], threads: usize) -> CliResult<Vec<Run>> {
    let threads = threads.max(1).min(scenarios.len().max(1));
    let results: Vec<CliResult<Run>> = if threads == 1 {
        scenarios.iter().map(|s| run_scenario(s, 1)).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<CliResult<Run>>>> = scenarios.iter().map(|_| Default::default()).collect();
        std::thread::scope(|sc| {
            for _ in 0..threads {
                sc.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= scenarios.len() {
                        break;
                    }
                    let r = run_scenario(&scenarios[i], 1);
                    *slots[i].lock().expect("slot") = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("slot").expect("every slot is filled")).collect()
    };
    results.into_iter().collect()
}

pub fn summarize(runs: &[Run]) -> Summary {
    let rows: Vec<SummaryRow> = runs
        .iter()
        .map(|r| SummaryRow {
            name: r.report.scenario.name.clone(),
            command: r.report.scenario.command.clone(),
            pass: r.report.pass,
            checks: r.report.checks.len(),
            failures: r.report.failures.len(),
            error: r.report.error.clone(),
        })
        .collect();
    let failed = rows.iter().filter(|r| !r.pass).count();
    Summary { pass: failed == 0, failed, rows }
}

/// Runs a manifest and writes every report plus `summary.json` and `summary.csv`.
pub fn suite(manifest: &Path, out: &Path, threads: usize, seed: Option<u64>) -> CliResult<(Summary, Vec<Run>)> {
    let mut scenarios = load_manifest(manifest)?;
    if let Some(seed) = seed {
        scenarios.iter_mut().for_each(|s| s.seed = seed);
    }
    let runs = run_all(&scenarios, threads)?;
    for r in &runs {
        write_run(out, r)?;
    }
    let summary = summarize(&runs);
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })?;
    write(&out.join("summary.json"), &to_pretty(&summary))?;
    write(&out.join("summary.csv"), &summary.csv())?;
    Ok((summary, runs))
}
