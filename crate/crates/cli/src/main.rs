mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::Resolver;

/// DynBERG: graph-transformer node classification over dynamic transaction
/// graphs.
#[derive(Parser, Debug)]
#[command(name = "dynberg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Load, validate and cache the graph and its subgraph batches.
    Preprocess,
    /// Pre-train and fine-tune one model per seed.
    Train,
    /// Train and evaluate for each subgraph size in a list.
    SweepK,
    /// Score a saved checkpoint on the test timesteps.
    Evaluate,
    /// Shutdown statistics, PCA timestep clusters and autocorrelations.
    Analyze,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::SweepK => "sweep-k",
            Command::Evaluate => "evaluate",
            Command::Analyze => "analyze",
        }
    }
}

fn parse_k(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("k must be at least 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(format!("{s:?}: {e}")),
    }
}

/// `N` means seeds `0..N`; a comma list names them.
fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if s.contains(',') {
        s.split(',')
            .map(|x| x.trim().parse::<u64>().map_err(|e| format!("{x:?}: {e}")))
            .collect()
    } else {
        match s.trim().parse::<u64>() {
            Ok(0) => Err("need at least one seed".into()),
            Ok(n) => Ok((0..n).collect()),
            Err(e) => Err(format!("{s:?}: {e}")),
        }
    }
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON file of dotted keys, e.g. {"model.d_h": 32}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with the Elliptic CSV files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Use the synthetic generator instead of files.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Seed count N (seeds 0..N) or a comma list.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Freeze the fusion weights at w_BERG = 1, w_GRU = 0.
    #[arg(long, global = true)]
    ablation: bool,
    #[arg(long, global = true)]
    skip_pretrain: bool,
    /// Subgraph context size; a comma list for sweep-k.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_k)]
    k: Vec<usize>,
    /// First timestep after the market shutdown.
    #[arg(long, global = true)]
    boundary: Option<usize>,
    /// Evaluation windows, e.g. "35-37,38-40".
    #[arg(long, global = true)]
    windows: Option<String>,
    /// Exact output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    parallel_seeds: bool,
    /// Checkpoint to evaluate.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Directory for graph and batch caches.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Any config key, as key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data.
    Config(String),
    Core(dynberg::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<dynberg::Error> for CliError {
    fn from(e: dynberg::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use dynberg::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Invariant(_) | E::Numeric(_) | E::Dimension { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn build_config(cmd: Command, c: &Common) -> Result<(config::RunConfig, Resolver), CliError> {
    let mut r = Resolver::new();
    if let Some(path) = &c.config {
        r.load_file(path)?;
    }
    for pair in &c.sets {
        r.set_pair(pair)?;
    }
    let path = |p: &PathBuf| Value::String(p.display().to_string());
    if let Some(d) = &c.data_dir {
        r.set("data.dir", path(d))?;
    }
    if c.synthetic {
        r.set("data.synthetic", Value::Bool(true))?;
    }
    if let Some(s) = &c.seeds {
        let seeds = parse_seeds(s).map_err(CliError::Config)?;
        r.set("run.seeds", serde_json::to_value(seeds).expect("seeds"))?;
    }
    if c.ablation {
        r.set("train.ablation_no_gru", Value::Bool(true))?;
    }
    if c.skip_pretrain {
        r.set("run.skip_pretrain", Value::Bool(true))?;
    }
    if c.parallel_seeds {
        r.set("run.parallel_seeds", Value::Bool(true))?;
    }
    match (cmd, c.k.as_slice()) {
        (_, []) => {}
        (Command::SweepK, ks) => r.set("sweep.k", serde_json::to_value(ks).expect("k"))?,
        (_, [k]) => r.set("batching.k", (*k).into())?,
        (_, _) => {
            return Err(CliError::Config(format!(
                "{} takes a single --k; lists are for sweep-k",
                cmd.name()
            )))
        }
    }
    if let Some(b) = c.boundary {
        r.set("train.shutdown_boundary", b.into())?;
    }
    if let Some(w) = &c.windows {
        let parsed = dynberg::training::Window::parse_list(w)?;
        r.set("train.windows", serde_json::to_value(parsed).expect("windows"))?;
    }
    if let Some(o) = &c.out {
        r.set("run.out", path(o))?;
    }
    if let Some(p) = &c.checkpoint {
        r.set("run.checkpoint", path(p))?;
    }
    if let Some(p) = &c.cache_dir {
        r.set("data.cache_dir", path(p))?;
    }
    let cfg = r.resolve()?;
    Ok((cfg, r))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = build_config(cli.command, &cli.common).and_then(|(cfg, r)| commands::run(cli.command.name(), cfg, &r));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
