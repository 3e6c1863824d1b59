//! The `polymerlab` command line.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use config::RunConfig;
use output::Output;

#[derive(Parser, Debug)]
#[command(name = "polymerlab", version, about = "Directed polymers in random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Log moment generating function lambda(beta) and chi(beta).
    Lambda(Common),
    /// Solve chi(beta) pi = 1.
    Beta2(Common),
    /// Dump partition-function trajectories.
    Evolve(Common),
    /// Hill tail fits of sup W_n and sup What_n; supermultiplicativity.
    Tail(Common),
    /// Overshoot moments at the levels run.A.
    Overshoot(Common),
    /// Endpoint localization at overshoot times.
    Localize(Common),
    /// Exact E[W_n^2] by the pinning recursion, with a Monte Carlo comparison.
    SecondMoment(Common),
    /// Growth exponent of E[W_n^2] at the critical point chi pi = 1.
    CriticalGrowth(Common),
    /// Growth rate of E[W_n^p].
    MomentGrowth(Common),
    /// Variance scaling of the fluctuation field.
    Fluct(Common),
    /// Size-biased identity through the spine construction.
    SpineCheck(Common),
    /// Field evolution against exact path sums and replica moments against renewal.
    OracleCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// key = value config file, or a manifest.json to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// walk.kind
    #[arg(long)]
    walk: Option<String>,
    /// walk.d
    #[arg(long, allow_hyphen_values = true)]
    d: Option<String>,
    /// env.family
    #[arg(long)]
    env: Option<String>,
    /// run.beta
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    /// field.nmax
    #[arg(long, allow_hyphen_values = true)]
    n: Option<String>,
    /// run.R
    #[arg(long = "R", allow_hyphen_values = true)]
    r: Option<String>,
    /// run.A
    #[arg(long = "A", allow_hyphen_values = true)]
    a: Option<String>,
    /// run.p
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    /// run.seed
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// out.dir
    #[arg(long)]
    out: Option<String>,
    /// Any key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
}

impl Common {
    fn layers(&self) -> Result<Vec<Vec<(String, String)>>> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(config::read_file(path)?);
        }
        let mut flags = Vec::new();
        let aliases = [
            ("walk.kind", &self.walk),
            ("walk.d", &self.d),
            ("env.family", &self.env),
            ("run.beta", &self.beta),
            ("field.nmax", &self.n),
            ("run.R", &self.r),
            ("run.A", &self.a),
            ("run.p", &self.p),
            ("run.seed", &self.seed),
            ("out.dir", &self.out),
        ];
        for (key, value) in aliases {
            if let Some(v) = value {
                flags.push((key.to_string(), v.clone()));
            }
        }
        for s in &self.set {
            let Some((k, v)) = s.split_once('=') else {
                return Err(Error::invalid("--set", format!("expected KEY=VALUE, got {s:?}")));
            };
            flags.push((k.trim().to_string(), v.trim().to_string()));
        }
        layers.push(flags);
        Ok(layers)
    }
}

fn split(command: Command) -> (&'static str, Common) {
    match command {
        Command::Lambda(c) => ("lambda", c),
        Command::Beta2(c) => ("beta2", c),
        Command::Evolve(c) => ("evolve", c),
        Command::Tail(c) => ("tail", c),
        Command::Overshoot(c) => ("overshoot", c),
        Command::Localize(c) => ("localize", c),
        Command::SecondMoment(c) => ("second-moment", c),
        Command::CriticalGrowth(c) => ("critical-growth", c),
        Command::MomentGrowth(c) => ("moment-growth", c),
        Command::Fluct(c) => ("fluct", c),
        Command::SpineCheck(c) => ("spine-check", c),
        Command::OracleCheck(c) => ("oracle-check", c),
    }
}

/// Worker count from `POLYMERLAB_WORKERS`, or all available cores.
fn workers() -> Result<usize> {
    match std::env::var("POLYMERLAB_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::invalid(
                "POLYMERLAB_WORKERS",
                format!("need a positive integer, got {v:?}"),
            )),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn execute(command: &str, common: &Common) -> Result<()> {
    let cfg = RunConfig::resolve(command, &common.layers()?)?;
    let workers = workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("POLYMERLAB_WORKERS", e.to_string()))?;
    let mut out = Output::create(&PathBuf::from(cfg.raw("out.dir")))?;
    let status = pool.install(|| commands::run(&cfg, &mut out, workers));
    let (label, err) = match status {
        Ok(commands::Status::Complete) => ("complete", None),
        Ok(commands::Status::Halted) => ("halted", None),
        Err(e @ Error::CheckFailed { .. }) => ("check-failed", Some(e)),
        Err(e) => return Err(e),
    };
    let results = out.finish(&cfg, label, workers)?;
    println!("{}", serde_json::to_string_pretty(&results)?);
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Runs the command line `args` (including the program name) and returns the exit code.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = split(cli.command);
    match execute(name, &common) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("polymerlab {name}: {e}");
            e.exit_code()
        }
    }
}
