//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invariant violation, 2 usage or validation error.

use crate::audit::{Audit, AuditError, ConservationReport};
use crate::kbp::{enumerate_maximal_states, KbpError};
use crate::link::digest;
use crate::netsim::metrics::{write_csv, Metrics};
use crate::netsim::{self, Protocol, RunOutput, Scenario, ScenarioError, TopologyError};
use crate::trace::{read_jsonl, write_jsonl, EventKind, TraceError};
use clap::{Parser, Subcommand};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "leibniz-link", version, about = "Bilateral link protocol simulator and auditors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write trace.jsonl and metrics.csv.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a scenario under several protocols and seeds and tabulate.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "oae,fireforget,lww")]
        protocols: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Also write the per-cell rows to <out>/compare.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a trace file against the node and loop laws.
    CheckConservation { trace: PathBuf },
    /// Count maximal-knowledge states for one or two elementary systems.
    EnumerateKbp {
        #[arg(long, default_value_t = 2)]
        systems: u32,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("trace {path}: {source}")]
    Trace { path: String, source: TraceError },
    #[error("audit: {0}")]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Kbp(#[from] KbpError),
    #[error("unknown protocol {0:?} (valid: oae, fireforget, lww)")]
    UnknownProtocol(String),
    #[error("compare needs at least two protocols")]
    TooFewProtocols,
    #[error("compare needs at least one seed")]
    NoSeeds,
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Audit failures on a well-formed trace are findings, everything else is misuse.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Audit(AuditError::NoRunStart) => 2,
            CliError::Audit(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Violation,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Violation => 1,
        }
    }

    fn and(self, other: Status) -> Status {
        if self == Status::Violation || other == Status::Violation {
            Status::Violation
        } else {
            Status::Ok
        }
    }
}

/// Parse the process arguments, execute, and map the result to an exit code.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LEIBNIZ_LINK_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(s) => ExitCode::from(s.code()),
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<Status, CliError> {
    match &cli.command {
        Command::Run { scenario, seed, out: dir } => cmd_run(scenario, *seed, dir, out),
        Command::Compare {
            scenario,
            protocols,
            seeds,
            out: dir,
        } => cmd_compare(scenario, protocols, seeds, dir.as_deref(), out),
        Command::CheckConservation { trace } => cmd_check_conservation(trace, out),
        Command::EnumerateKbp { systems } => cmd_enumerate_kbp(*systems, out),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Safety checks applied to every finished run.
#[derive(Clone, Debug)]
pub struct InlineChecks {
    pub conservation: ConservationReport,
    pub divergent: Vec<String>,
    pub internal_errors: Vec<String>,
    /// Silent corruptions only violate an invariant under the bilateral protocol.
    pub corruption_is_violation: bool,
    pub silent_corruptions: u64,
}

impl InlineChecks {
    pub fn of(run: &RunOutput, protocol: Protocol) -> Result<Self, AuditError> {
        let conservation = Audit::from_trace(&run.trace)?.check();
        let mut divergent: Vec<String> = run
            .trace
            .iter()
            .filter(|e| e.kind == EventKind::DivergenceDetected)
            .map(|e| {
                let txn = e.txn_id.map_or("?".into(), |t| t.to_string());
                match e.reason.as_deref() {
                    Some(r) => format!("{txn} at slot {} ({r})", e.slot),
                    None => format!("{txn} at slot {}", e.slot),
                }
            })
            .collect();
        divergent.dedup();
        Ok(InlineChecks {
            conservation,
            divergent,
            internal_errors: run.internal_errors.clone(),
            corruption_is_violation: protocol == Protocol::Oae,
            silent_corruptions: run.metrics.silent_corruptions,
        })
    }

    pub fn status(&self) -> Status {
        let bad = !self.conservation.passed()
            || !self.divergent.is_empty()
            || !self.internal_errors.is_empty()
            || (self.corruption_is_violation && self.silent_corruptions > 0);
        if bad {
            Status::Violation
        } else {
            Status::Ok
        }
    }

    fn report(&self, out: &mut dyn Write) -> io::Result<()> {
        let verdict = |ok: bool| if ok { "ok" } else { "VIOLATED" };
        writeln!(out, "conservation: {}", verdict(self.conservation.passed()))?;
        if !self.conservation.passed() {
            for line in self.conservation.to_string().lines() {
                writeln!(out, "  {line}")?;
            }
        }
        writeln!(out, "divergence: {}", verdict(self.divergent.is_empty()))?;
        for d in &self.divergent {
            writeln!(out, "  divergent transaction {d}")?;
        }
        if self.corruption_is_violation {
            writeln!(
                out,
                "silent corruption: {} ({})",
                verdict(self.silent_corruptions == 0),
                self.silent_corruptions
            )?;
        } else {
            writeln!(out, "silent corruption: {} (baseline finding)", self.silent_corruptions)?;
        }
        for e in &self.internal_errors {
            writeln!(out, "internal error: {e}")?;
        }
        Ok(())
    }
}

fn load_scenario(path: &Path) -> Result<(Scenario, String), CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let scenario = Scenario::load(path)?;
    Ok((scenario, digest(&bytes).to_string()))
}

fn cmd_run(path: &Path, seed: Option<u64>, dir: &Path, out: &mut dyn Write) -> Result<Status, CliError> {
    let (mut scenario, scenario_digest) = load_scenario(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    log::info!("running {} with seed {}", scenario.name, scenario.seed);
    let run = netsim::run(&scenario)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace_path = dir.join("trace.jsonl");
    let metrics_path = dir.join("metrics.csv");
    let f = File::create(&trace_path).map_err(io_err(&trace_path))?;
    write_jsonl(BufWriter::new(f), &run.trace).map_err(io_err(&trace_path))?;
    let f = File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    write_csv(f, std::slice::from_ref(&run.metrics))?;

    let checks = InlineChecks::of(&run, scenario.protocol)?;
    let m = &run.metrics;
    let w = |e| CliError::Io {
        path: "stdout".into(),
        source: e,
    };
    (|| -> io::Result<()> {
        writeln!(out, "scenario {} ({}) digest {}", scenario.name, scenario.protocol, scenario_digest)?;
        writeln!(out, "seed {}", scenario.seed)?;
        writeln!(
            out,
            "transactions {} commits {} aborts {} divergences {} silent-corruptions {} relay-uses {} entropy {} bits",
            m.transactions,
            m.commits,
            m.aborts,
            m.detected_divergences,
            m.silent_corruptions,
            m.relay_uses,
            m.entropy_produced
        )?;
        writeln!(out, "trace {}", trace_path.display())?;
        writeln!(out, "metrics {}", metrics_path.display())?;
        checks.report(out)
    })()
    .map_err(w)?;
    Ok(checks.status())
}

fn parse_protocols(names: &[String]) -> Result<Vec<Protocol>, CliError> {
    let mut v = Vec::new();
    for n in names {
        let p = Protocol::parse(n.trim()).ok_or_else(|| CliError::UnknownProtocol(n.clone()))?;
        if !v.contains(&p) {
            v.push(p);
        }
    }
    if v.len() < 2 {
        return Err(CliError::TooFewProtocols);
    }
    Ok(v)
}

/// Per-protocol means over the seeds of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRow {
    pub protocol: Protocol,
    pub commits: f64,
    pub aborts: f64,
    pub silent_corruptions: f64,
    pub entropy_produced: f64,
}

pub fn compare_rows(base: &Scenario, protocols: &[Protocol], seeds: &[u64]) -> Result<Vec<(RunOutput, Status)>, CliError> {
    let mut rows = Vec::new();
    for &p in protocols {
        for &seed in seeds {
            let mut s = base.clone();
            s.protocol = p;
            s.seed = seed;
            let run = netsim::run(&s)?;
            let status = InlineChecks::of(&run, p)?.status();
            rows.push((run, status));
        }
    }
    Ok(rows)
}

pub fn means(rows: &[Metrics], protocol: Protocol) -> MeanRow {
    let sel: Vec<&Metrics> = rows.iter().filter(|m| m.protocol == protocol).collect();
    let n = sel.len().max(1) as f64;
    let mean = |f: fn(&Metrics) -> u64| sel.iter().map(|m| f(m) as f64).sum::<f64>() / n;
    MeanRow {
        protocol,
        commits: mean(|m| m.commits),
        aborts: mean(|m| m.aborts),
        silent_corruptions: mean(|m| m.silent_corruptions),
        entropy_produced: mean(|m| m.entropy_produced),
    }
}

fn cmd_compare(
    path: &Path,
    protocols: &[String],
    seeds: &[u64],
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    let protocols = parse_protocols(protocols)?;
    if seeds.is_empty() {
        return Err(CliError::NoSeeds);
    }
    let (base, _) = load_scenario(path)?;
    let cells = compare_rows(&base, &protocols, seeds)?;
    let metrics: Vec<Metrics> = cells.iter().map(|(r, _)| r.metrics.clone()).collect();
    let status = cells.iter().fold(Status::Ok, |acc, (_, s)| acc.and(*s));
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("compare.csv");
        let f = File::create(&p).map_err(io_err(&p))?;
        write_csv(f, &metrics)?;
    }
    let mut table = || -> io::Result<()> {
        writeln!(
            out,
            "{:<11} {:>6} {:>8} {:>8} {:>8} {:>12} {:>19} {:>10} {:>6}",
            "protocol", "seed", "txns", "commits", "aborts", "divergences", "silent-corruptions", "entropy", "check"
        )?;
        for ((_, s), m) in cells.iter().zip(&metrics) {
            writeln!(
                out,
                "{:<11} {:>6} {:>8} {:>8} {:>8} {:>12} {:>19} {:>10} {:>6}",
                m.protocol.as_str(),
                m.seed,
                m.transactions,
                m.commits,
                m.aborts,
                m.detected_divergences,
                m.silent_corruptions,
                m.entropy_produced,
                if *s == Status::Ok { "ok" } else { "FAIL" }
            )?;
        }
        for &p in &protocols {
            let r = means(&metrics, p);
            writeln!(
                out,
                "{:<11} {:>6} {:>8} {:>8.2} {:>8.2} {:>12} {:>19.2} {:>10.1} {:>6}",
                p.as_str(),
                "mean",
                "",
                r.commits,
                r.aborts,
                "",
                r.silent_corruptions,
                r.entropy_produced,
                ""
            )?;
        }
        Ok(())
    };
    table().map_err(|e| CliError::Io {
        path: "stdout".into(),
        source: e,
    })?;
    Ok(status)
}

fn cmd_check_conservation(path: &Path, out: &mut dyn Write) -> Result<Status, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    let events = read_jsonl(BufReader::new(f)).map_err(|source| CliError::Trace {
        path: path.display().to_string(),
        source,
    })?;
    let report = Audit::from_trace(&events)?.check();
    writeln!(out, "{report}").map_err(io_err(Path::new("stdout")))?;
    Ok(if report.passed() { Status::Ok } else { Status::Violation })
}

fn cmd_enumerate_kbp(systems: u32, out: &mut dyn Write) -> Result<Status, CliError> {
    let c = enumerate_maximal_states(systems)?;
    let mut w = || -> io::Result<()> {
        writeln!(out, "{:<10} {:>5}", "kind", "count")?;
        writeln!(out, "{:<10} {:>5}", "single", c.single)?;
        if systems == 2 {
            writeln!(out, "{:<10} {:>5}", "product", c.product)?;
            writeln!(out, "{:<10} {:>5}", "entangled", c.entangled)?;
        }
        Ok(())
    };
    w().map_err(io_err(Path::new("stdout")))?;
    Ok(Status::Ok)
}
