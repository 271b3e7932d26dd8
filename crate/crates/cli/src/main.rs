use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use toruskam_cli::{self as cli, CliError, CliResult, Scenario};

#[derive(Parser)]
#[command(name = "toruskam", version, about = "Reducibility and measure diagnostics for quasi-periodic water waves")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// output directory (`TORUSKAM_OUT` takes precedence)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// overrides the scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct One {
    /// scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Cmd {
    /// symbol calculus oracles, remainder decay, Hilbert identities
    CalculusCheck(One),
    /// Dirichlet-Neumann operator diagnostics
    Dn(One),
    /// linearized operator at an approximate torus
    Linop(One),
    /// conjugation chain to the diagonal normal form
    Reduce(One),
    /// pseudo-differential flow checks
    Flow(One),
    /// KAM reducibility iteration
    Kam(One),
    /// excluded parameter measure and non-degeneracy
    Measure(One),
    /// any scenario, dispatched on its `command` field
    Run(One),
    /// a manifest of scenarios
    Suite {
        /// manifest JSON file
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn single(expected: Option<&str>, one: &One) -> CliResult<i32> {
    let mut s: Scenario = Scenario::load(&one.scenario)?;
    if let Some(cmd) = expected {
        if s.command != cmd {
            return Err(CliError::Config(format!("scenario `{}` is a `{}` scenario, not `{cmd}`", s.name, s.command)));
        }
    }
    if let Some(seed) = one.common.seed {
        s.seed = seed;
    }
    let run = cli::run_scenario(&s, one.common.threads)?;
    let dir = cli::output_dir(one.common.out.as_deref());
    let path = cli::write_run(&dir, &run)?;
    let r = &run.report;
    for c in &r.checks {
        println!("{:<4} {} = {:.3e} (threshold {:.3e})", if c.pass { "ok" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    if let Some(e) = &r.error {
        println!("error: {e}");
    }
    println!("{}: {} ({:.2} s) -> {}", r.scenario.name, if r.pass { "pass" } else { "fail" }, run.seconds, path.display());
    Ok(r.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::CalculusCheck(o) => single(Some("calculus-check"), o),
        Cmd::Dn(o) => single(Some("dn"), o),
        Cmd::Linop(o) => single(Some("linop"), o),
        Cmd::Reduce(o) => single(Some("reduce"), o),
        Cmd::Flow(o) => single(Some("flow"), o),
        Cmd::Kam(o) => single(Some("kam"), o),
        Cmd::Measure(o) => single(Some("measure"), o),
        Cmd::Run(o) => single(None, o),
        Cmd::Suite { manifest, common } => {
            let dir = cli::output_dir(common.out.as_deref());
            cli::suite(manifest, &dir, common.threads, common.seed).map(|(summary, runs)| {
                for (row, run) in summary.rows.iter().zip(&runs) {
                    let tail = row.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default();
                    println!("{:<4} {} ({} checks, {} failed, {:.2} s){tail}", if row.pass { "ok" } else { "FAIL" }, row.name, row.checks, row.failures, run.seconds);
                }
                println!("{} of {} scenarios failed -> {}", summary.failed, summary.rows.len(), dir.display());
                summary.exit_code()
            })
        }
    };
    match res {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
