//! `lcsim`: scenario generation, routing, simulation, planner training,
//! evaluation and timing from the command line.
//!
//! Exit codes: 0 success, 1 invalid input (nothing written), 2 runtime
//! failure.

mod commands;
mod error;
mod io;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcsim_core::policy::PolicyKind;
use lcsim_core::scenario::GridParams;

use commands::{BenchArgs, EvalInput, GenerateArgs, RouteArgs, TrainArgs};
use error::CliError;

#[derive(Parser)]
#[command(name = "lcsim", version, about = "Controllable traffic simulation with a guided diffusion planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a grid-city scenario.
    Generate(GenerateCmd),
    /// Fill empty reference routes from waypoints.
    Route(RouteCmd),
    /// Run the rollouts of a run configuration.
    Simulate(SimulateCmd),
    /// Train the motion planner.
    TrainPlanner(TrainCmd),
    /// Report metrics over records or a configured batch of runs.
    Evaluate(EvaluateCmd),
    /// Time 9 s scenario rollouts.
    Bench(BenchCmd),
}

#[derive(Args)]
struct GenerateCmd {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    /// Block edge length, metres.
    #[arg(long, default_value_t = 150.0)]
    block: f64,
    /// Lanes per direction.
    #[arg(long, default_value_t = 1)]
    lanes: usize,
    #[arg(long, default_value_t = 50)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Departures are spread over this many seconds.
    #[arg(long)]
    departure_window: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RouteCmd {
    scenario: PathBuf,
    /// Comma-separated agent ids; all agents when omitted.
    #[arg(long, value_delimiter = ',')]
    agents: Option<Vec<u64>>,
    /// Cruise speed of the completed routes, m/s.
    #[arg(long, default_value_t = 10.0)]
    speed: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rewrite the input scenario.
    #[arg(long)]
    in_place: bool,
}

#[derive(Args)]
struct SimulateCmd {
    config: PathBuf,
    /// Seeds run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainCmd {
    /// Directory of scenario files; a synthetic straight-road corpus is
    /// used when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Loss curve output; defaults next to the checkpoint.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Record files or directories of them.
    #[arg(long, num_args = 1.., conflicts_with = "config", required_unless_present = "config")]
    records: Vec<PathBuf>,
    /// Run configuration to execute instead of reading records.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat the configured seeds this many times with shifted seeds.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Expert,
    BicycleExpert,
    LaneIdm,
    TrajIdm,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Expert => PolicyKind::Expert,
            PolicyArg::BicycleExpert => PolicyKind::BicycleExpert,
            PolicyArg::LaneIdm => PolicyKind::LaneIdm,
            PolicyArg::TrajIdm => PolicyKind::TrajIdm,
        }
    }
}

#[derive(Args)]
struct BenchCmd {
    /// Scenario files or directories; grid scenarios are generated when
    /// none are given.
    scenarios: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 9.0)]
    duration: f64,
    /// Defaults to expert replay for files and lane IDM for generated grids.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            let mut params = GridParams::new(c.rows, c.cols, c.block, c.lanes, c.agents, c.seed);
            if let Some(w) = c.departure_window {
                params.departure_window = w;
            }
            commands::generate(&GenerateArgs { params, out: c.out })
        }
        Command::Route(c) => commands::route(&RouteArgs {
            scenario: c.scenario,
            agents: c.agents,
            speed: c.speed,
            out: c.out,
            in_place: c.in_place,
        }),
        Command::Simulate(c) => commands::simulate(&c.config, c.jobs),
        Command::TrainPlanner(c) => commands::train_planner(&TrainArgs {
            corpus: c.corpus,
            config: c.config,
            out: c.out,
            losses: c.losses,
        }),
        Command::Evaluate(c) => {
            let input = match c.config {
                Some(path) => EvalInput::Config(path),
                None => EvalInput::Records(c.records),
            };
            commands::evaluate(&input, c.repeat, c.jobs, c.out.as_deref())
        }
        Command::Bench(c) => commands::bench(&BenchArgs {
            scenarios: c.scenarios,
            count: c.count,
            agents: c.agents,
            seed: c.seed,
            duration: c.duration,
            policy: c.policy.map(Into::into),
            out: c.out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
