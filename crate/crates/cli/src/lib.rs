//! Command-line pipeline: synthetic cohorts, gene-group labels, graph
//! building, cross-validated training, evaluation, comparison and heatmaps.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use sha2::{Digest, Sha256};

use args::{Cli, Command};
use commands::Outcome;
use config::{Globals, Resolver, RunConfigFile};
use error::{CliError, CliResult};

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    globals: Globals,
    config: serde_json::Value,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn records(paths: &[PathBuf], base: &Path) -> CliResult<Vec<FileRecord>> {
    paths
        .iter()
        .map(|p| {
            let shown = p.strip_prefix(base).unwrap_or(p);
            Ok(FileRecord { path: shown.to_string_lossy().replace('\\', "/"), sha256: sha256_file(p)? })
        })
        .collect()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::GroupLabels(_) => "group-labels",
        Command::BuildGraphs(_) => "build-graphs",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Compare(_) => "compare",
        Command::Heatmap(_) => "heatmap",
    }
}

fn dispatch(cli: &Cli, file: &RunConfigFile, globals: &Globals, r: &mut Resolver) -> CliResult<Outcome> {
    match &cli.command {
        Command::Synth(a) => commands::synth(globals, file, a, r),
        Command::GroupLabels(a) => commands::group_labels(globals, file, a, r),
        Command::BuildGraphs(a) => commands::build_graphs(globals, file, a, r),
        Command::Train(a) => commands::train(globals, file, a, r),
        Command::Eval(a) => commands::eval(globals, file, a, r),
        Command::Compare(a) => commands::compare(globals, file, a, r),
        Command::Heatmap(a) => commands::heatmap(globals, file, a, r),
    }
}

/// Runs a parsed command line and writes `run_manifest.<command>.json`.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    let mut r = Resolver::default();
    let strict = r.pick("strict_deterministic", cli.strict_deterministic.then_some(true), file.strict_deterministic, false);
    let default_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = if strict { 1 } else { r.pick("threads", cli.threads, file.threads, default_threads) };
    let globals = Globals {
        seed: r.pick("seed", cli.seed, file.seed, 0),
        threads,
        strict_deterministic: strict,
        out: r.pick("out", cli.out.clone(), file.out.clone(), PathBuf::from("run")),
    };
    if threads == 0 {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| dispatch(cli, &file, &globals, &mut r))?;

    let name = command_name(&cli.command);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        globals: globals.clone(),
        config: outcome.config,
        inputs: records(&outcome.inputs, &globals.out)?,
        outputs: records(&outcome.outputs, &globals.out)?,
    };
    std::fs::create_dir_all(&globals.out).map_err(|e| CliError::io(&globals.out, e))?;
    let path = globals.out.join(format!("run_manifest.{name}.json"));
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    methylgraph::io::write_atomic(&path, text.as_bytes())?;
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
