//! Command-line front end: argument parsing, dispatch and exit codes.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or input, 2 for numerical
//! failures (including failed verification checks).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Result, RggmError};
use crate::fit::{fit_params, FitOptions, FitResult};
use crate::io::{
    load_graph, load_snapshots, write_metadata_comment, write_metadata_line, write_table_csv, write_wide_table_csv,
    LabelledGraph, Metadata,
};
use crate::model::ModelParams;
use crate::oracle::enumerate;
use crate::sampler::{run, ChainKind, RecordSink, RunSettings, SampleSummary, ScanOrder};
use crate::verify::{render_table, run_suite, suite_passed, CheckReport, Suite, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "RGGM_THREADS";

#[derive(Parser, Debug, Serialize)]
#[command(name = "rggm", version, about = "Random Gaussian graphical model toolkit")]
pub struct Cli {
    #[serde(flatten)]
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Exact edge measure as CSV: config_hex, config_bits, half_logdet, prob.
    Enumerate(TableArgs),
    /// Exact edge measure as plot-ready CSV with one column per edge.
    ExportTable(TableArgs),
    /// Run a sampler and stream retained states as JSONL.
    Sample(SampleArgs),
    /// The coupled edge/node dynamics with node values in the stream.
    Dynamics(ChainArgs),
    /// Run the property-check suite.
    Verify(VerifyArgs),
    /// Pseudo-likelihood fit of (alpha, beta) to JSONL snapshots.
    Fit(FitArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.alpha, self.beta)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TableArgs {
    /// Edge list file: two labels per line, `#` comments.
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output file (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Coupled,
    Edges,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanArg {
    Systematic,
    Random,
}

#[derive(Args, Debug, Serialize)]
pub struct ChainArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub sweeps: u64,
    /// Sweeps discarded before recording (default: 10% of sweeps).
    #[arg(long)]
    pub burnin: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub thin: u64,
    /// Rank-one updates between full refactorisations.
    #[arg(long, default_value_t = crate::linalg::DEFAULT_REFRESH_PERIOD)]
    pub refresh_period: usize,
    #[arg(long, value_enum, default_value_t = ScanArg::Systematic)]
    pub scan: ScanArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ChainArgs {
    fn settings(&self) -> RunSettings {
        let mut s = RunSettings::new(self.sweeps)
            .with_seed(self.seed)
            .with_scan(match self.scan {
                ScanArg::Systematic => ScanOrder::Systematic,
                ScanArg::Random => ScanOrder::Random,
            });
        if let Some(b) = self.burnin {
            s.burnin = b;
        }
        s.thin = self.thin;
        s.refresh_period = self.refresh_period;
        s
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Edges)]
    pub kind: KindArg,
    /// Include node values in the stream (coupled chains only).
    #[arg(long)]
    pub with_x: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    /// One of: all, lemma1, lemma2, prop2, fkg, monotone, variance, martingale.
    #[arg(long, default_value = "all", value_parser = parse_suite)]
    pub suite: Suite,
    /// Skip catalog graphs with more edges than this.
    #[arg(long, default_value_t = 4)]
    pub max_edges: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random instances per randomised check and graph.
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: RggmError| e.to_string())
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// JSONL snapshots: {"config_bits_hex": .., "x": [..], "weight": ..}.
    #[arg(long)]
    pub snapshots: PathBuf,
    /// Starting point of the search.
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            RggmError::Data(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_config(cli: &Cli) -> serde_json::Value {
    serde_json::to_value(cli).unwrap_or(serde_json::Value::Null)
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a SampleSummary,
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    metadata: &'a Metadata,
    passed: bool,
    reports: &'a [CheckReport],
}

#[derive(Serialize)]
struct FitOutput<'a> {
    metadata: &'a Metadata,
    snapshots: usize,
    result: &'a FitResult,
}

fn cmd_table(cli: &Cli, args: &TableArgs, wide: bool) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let table = enumerate(&graph.topology, &args.model.params()?)?;
    let meta = Metadata::new(run_config(cli), None, Some(&graph));
    let mut w = open_output(args.out.as_deref())?;
    write_metadata_comment(&mut w, &meta)?;
    if wide {
        write_wide_table_csv(&mut w, &table, &graph)?;
    } else {
        write_table_csv(&mut w, &table)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sample(cli: &Cli, chain: &ChainArgs, kind: ChainKind, with_x: bool) -> Result<()> {
    if with_x && kind != ChainKind::Coupled {
        return Err(RggmError::Config("--with-x needs --kind coupled".into()));
    }
    let graph = load_graph(&chain.graph)?;
    let p = chain.model.params()?;
    let settings = chain.settings();
    settings.validate()?;
    let meta = Metadata::new(run_config(cli), Some(chain.seed), Some(&graph));
    let mut w = open_output(chain.out.as_deref())?;
    write_metadata_line(&mut w, &meta)?;
    let sink = RecordSink {
        writer: &mut w,
        with_x,
    };
    let summary = run(&graph.topology, &p, &settings, kind, Some(sink))?;
    serde_json::to_writer(&mut w, &SummaryLine { summary: &summary })?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn cmd_verify(cli: &Cli, args: &VerifyArgs) -> Result<bool> {
    let mut opts = SuiteOptions::new(args.suite, args.max_edges, args.model.params()?, args.seed);
    opts.trials = args.trials;
    let reports = run_suite(&opts)?;
    let passed = suite_passed(&reports);
    let meta = Metadata::new(run_config(cli), Some(args.seed), None);
    let out = VerifyOutput {
        metadata: &meta,
        passed,
        reports: &reports,
    };
    let table = render_table(&reports);
    match &args.out {
        Some(path) => {
            let mut w = open_output(Some(path))?;
            serde_json::to_writer_pretty(&mut w, &out)?;
            w.write_all(b"\n")?;
            w.flush()?;
            print!("{table}");
        }
        None => {
            let mut w = open_output(None)?;
            serde_json::to_writer_pretty(&mut w, &out)?;
            w.write_all(b"\n")?;
            w.flush()?;
            eprint!("{table}");
        }
    }
    Ok(passed)
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let graph: LabelledGraph = load_graph(&args.graph)?;
    let snaps = load_snapshots(&args.snapshots, &graph.topology)?;
    let opts = FitOptions {
        init: args.model.params()?,
        max_iterations: args.max_iterations,
        ..FitOptions::default()
    };
    let result = fit_params(&graph.topology, &snaps, &opts)?;
    let meta = Metadata::new(run_config(cli), None, Some(&graph));
    let mut w = open_output(args.out.as_deref())?;
    serde_json::to_writer_pretty(
        &mut w,
        &FitOutput {
            metadata: &meta,
            snapshots: snaps.len(),
            result: &result,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Runs an already parsed command line.
pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Enumerate(a) => cmd_table(cli, a, false),
        Command::ExportTable(a) => cmd_table(cli, a, true),
        Command::Sample(a) => {
            let kind = match a.kind {
                KindArg::Coupled => ChainKind::Coupled,
                KindArg::Edges => ChainKind::EdgeOnly,
            };
            cmd_sample(cli, &a.chain, kind, a.with_x)
        }
        Command::Dynamics(a) => cmd_sample(cli, a, ChainKind::Coupled, true),
        Command::Verify(a) => {
            if cmd_verify(cli, a)? {
                Ok(())
            } else {
                Err(RggmError::Numerical("one or more property checks failed".into()))
            }
        }
        Command::Fit(a) => cmd_fit(cli, a),
    }
}

pub fn exit_code(err: &RggmError) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

/// Caps the global worker pool from [`THREADS_ENV`] if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| RggmError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool that is already initialised (e.g. by an earlier call in the same process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn report(err: &RggmError) -> i32 {
    let code = exit_code(err);
    let kind = if code == EXIT_NUMERICAL { "numerical" } else { "invalid input" };
    let body = serde_json::json!({ "error": { "kind": kind, "message": err.to_string(), "exit_code": code } });
    eprintln!("{body}");
    code
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        return report(&e);
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e),
    }
}
