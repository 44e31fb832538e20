//! `blgi` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod strategy_file;

use std::path::{Path, PathBuf};

use blgi_core::lhv::RandomStrategyOptions;
use blgi_core::protocol::SweepAxis;
use clap::{Args, Parser, Subcommand};

use crate::commands::execute;
use crate::config::{resolve_seed, Document, ExperimentDraft, MeterKind, SEED_ENV};
use crate::error::{CliError, CliResult};
use crate::manifest::{Invocation, LhvRun, LhvSource, RunManifest};
use crate::output::{emit, manifest_path};

#[derive(Debug, Parser)]
#[command(name = "blgi", version, about = "Hybrid Bell-Leggett-Garg correlator simulator")]
pub struct Cli {
    /// Experiment file (`key = value` with [meter], [meter1], [meter2], [b], [angles], [run]).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// RNG seed; overrides BLGI_SEED and the config file.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output file (stdout if absent); a `.manifest.json` is written next to it.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Re-run a recorded manifest instead of a subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo estimate of the correlator with its exact and closed-form values.
    Simulate(SimulateArgs),
    /// The same, over a list of values of one parameter.
    Sweep(SweepArgs),
    /// Classical hidden-variable strategies against the bound of 2.
    Lhv(LhvArgs),
    /// Cross-checks between the independent evaluations.
    Verify,
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Weak meter type on both arms.
    #[arg(long, value_parser = ["gaussian", "ancilla"])]
    pub meter: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub v_total: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub u: Option<f64>,
    /// Visibility of the final readout.
    #[arg(long, allow_negative_numbers = true)]
    pub v: Option<f64>,
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub a1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub a2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub b1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub b2: Option<f64>,
}

impl ExperimentArgs {
    fn draft(&self) -> ExperimentDraft {
        let kind = self.meter.as_deref().map(|m| m.parse::<MeterKind>().expect("restricted by clap"));
        let meter = config::MeterDraft { kind, sigma: self.sigma, eta: self.eta, v_total: self.v_total, u: self.u };
        ExperimentDraft {
            meters: [meter; 2],
            v: self.v,
            angles: config::AngleDraft { a1: self.a1, a2: self.a2, b1: self.b1, b2: self.b2 },
            shots: self.shots,
            seed: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Also write every shot's record.
    #[arg(long, value_name = "PATH")]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("grid").required(true).args(["values", "linspace", "logspace"])))]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// sigma, eta, v, v_total or u
    #[arg(long)]
    pub axis: String,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Vec<f64>,
    /// START,STOP,COUNT
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub linspace: Option<Vec<f64>>,
    /// START,STOP,COUNT with logarithmic spacing
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub logspace: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["strategy", "random", "brute_force"])))]
pub struct LhvArgs {
    /// File with one or more [strategy] sections.
    #[arg(long, value_name = "PATH")]
    pub strategy: Option<PathBuf>,
    /// Number of random calibrated strategies.
    #[arg(long, value_name = "N")]
    pub random: Option<u64>,
    /// Enumerate deterministic strategies instead of sampling.
    #[arg(long)]
    pub brute_force: bool,
    /// Hidden-state count for --random and --brute-force.
    #[arg(long, default_value_t = 4)]
    pub hidden_states: usize,
    #[arg(long, default_value_t = 100_000)]
    pub shots: u64,
    /// Samples per hidden state and detector for the calibration check; 0 skips it.
    #[arg(long, default_value_t = 10_000)]
    pub calibration_shots: u64,
    /// Detector noise of random strategies.
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    /// Largest invasiveness gain of random strategies.
    #[arg(long, default_value_t = 0.5)]
    pub max_gain: f64,
}

fn grid(args: &SweepArgs) -> CliResult<Vec<f64>> {
    let spaced = |spec: &[f64], log: bool| -> CliResult<Vec<f64>> {
        let [start, stop, count] = spec else {
            return Err(CliError::Usage("spacing takes START,STOP,COUNT".into()));
        };
        if count.fract() != 0.0 || *count < 1.0 {
            return Err(CliError::Usage(format!("COUNT must be a positive integer, got {count}")));
        }
        if log && (*start <= 0.0 || *stop <= 0.0) {
            return Err(CliError::Usage("logspace needs positive START and STOP".into()));
        }
        let n = *count as usize;
        let (a, b) = if log { (start.ln(), stop.ln()) } else { (*start, *stop) };
        Ok((0..n)
            .map(|i| match i {
                0 => *start,
                i if i + 1 == n => *stop,
                i => {
                    let x = a + (b - a) * i as f64 / (n - 1) as f64;
                    if log {
                        x.exp()
                    } else {
                        x
                    }
                }
            })
            .collect())
    };
    match (&args.linspace, &args.logspace) {
        (Some(l), _) => spaced(l, false),
        (_, Some(l)) => spaced(l, true),
        _ => Ok(args.values.clone()),
    }
}

/// Everything needed to run: the invocation and its seed.
fn resolve(cli: &Cli) -> CliResult<(Invocation, u64)> {
    let file = match &cli.config {
        Some(path) => ExperimentDraft::from_document(&Document::read(path)?)?,
        None => ExperimentDraft::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env.as_deref(), file.seed)?;
    let experiment = |args: &ExperimentArgs, swept: Option<(SweepAxis, f64)>| {
        let mut draft = file;
        draft.overlay(&args.draft());
        // the template takes the first grid value so that defaults of the
        // swept parameter cannot make it invalid
        if let Some((axis, value)) = swept {
            for m in &mut draft.meters {
                match axis {
                    SweepAxis::Sigma => m.sigma = Some(value),
                    SweepAxis::Eta => m.eta = Some(value),
                    SweepAxis::VTotal => m.v_total = Some(value),
                    SweepAxis::U => m.u = Some(value),
                    SweepAxis::V => {}
                }
            }
            if axis == SweepAxis::V {
                draft.v = Some(value);
            }
        }
        draft.resolve(seed)
    };
    let invocation = match &cli.command {
        None => {
            return Err(CliError::Usage("a subcommand (simulate, sweep, lhv, verify) or --manifest is required".into()))
        }
        Some(Command::Simulate(a)) => Invocation::Simulate { config: experiment(&a.experiment, None)? },
        Some(Command::Sweep(a)) => {
            let axis: SweepAxis = a.axis.parse()?;
            let values = grid(a)?;
            if values.is_empty() {
                return Err(CliError::Usage("sweep needs at least one value".into()));
            }
            Invocation::Sweep { config: experiment(&a.experiment, Some((axis, values[0])))?, axis, values }
        }
        Some(Command::Lhv(a)) => {
            let source = if let Some(path) = &a.strategy {
                LhvSource::Strategies(strategy_file::read_strategies(path)?)
            } else if let Some(count) = a.random {
                LhvSource::Random {
                    count,
                    options: RandomStrategyOptions {
                        hidden_states: a.hidden_states,
                        noise_sigma: a.noise_sigma,
                        max_gain: a.max_gain,
                    },
                }
            } else {
                LhvSource::BruteForce { hidden_states: a.hidden_states }
            };
            Invocation::Lhv(LhvRun { source, shots: a.shots, calibration_shots: a.calibration_shots })
        }
        Some(Command::Verify) => Invocation::Verify,
    };
    Ok((invocation, seed))
}

fn run_resolved(invocation: &Invocation, seed: u64, out: Option<&Path>, records: Option<&Path>) -> CliResult<()> {
    let outcome = execute(invocation, seed, records)?;
    emit(out, &outcome.text)?;
    if let Some(out) = out {
        let mut outputs = vec![out.display().to_string()];
        outputs.extend(records.map(|r| r.display().to_string()));
        RunManifest::new(seed, invocation.clone(), outputs).write(&manifest_path(out))?;
    }
    match outcome.violation {
        Some(msg) => Err(CliError::BoundViolation(msg)),
        None => Ok(()),
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let records = match &cli.command {
        Some(Command::Simulate(a)) => a.records.clone(),
        _ => None,
    };
    let work = || -> CliResult<()> {
        if let Some(path) = &cli.manifest {
            if cli.command.is_some() {
                return Err(CliError::Usage("--manifest replays a recorded run; drop the subcommand".into()));
            }
            let m = RunManifest::read(path)?;
            return run_resolved(&m.invocation, m.seed, cli.out.as_deref(), None);
        }
        let (invocation, seed) = resolve(&cli)?;
        run_resolved(&invocation, seed, cli.out.as_deref(), records.as_deref())
    };
    match cli.threads {
        None => work(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
    }
}
