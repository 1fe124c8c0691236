use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use vpp_cli::{
    build_env, load_dataset, RunConfig, ScenarioSource, DEFAULT_SWEEP_ARRIVALS, DEFAULT_SWEEP_EPISODES,
};
use vpp_core::bridge::{serve, serve_tcp, EnvFactory};
use vpp_core::controllers::{ParamBounds, SearchConfig, ThresholdPolicyParams};
use vpp_core::events::EventConfig;
use vpp_core::timeseries::NoiseSpec;

#[derive(Parser)]
#[command(name = "vpp-sim", version, about = "Residential microgrid simulator with EV charging stations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode under a policy and write trace and reports.
    Simulate(SimulateArgs),
    /// Run the uncontrolled charging baseline.
    Baseline(CommonArgs),
    /// Average metrics over several weekly arrival rates.
    SweepArrivals(SweepArgs),
    /// Cross-entropy search over greedy policy thresholds.
    Search(SearchArgs),
    /// Serve the environment over line-delimited JSON.
    Serve(ServeArgs),
    /// Write the reward shaping curves as CSV.
    DumpRewardShapes(CommonArgs),
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// Scenario CSV (one year at 15-minute resolution).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Generate a synthetic scenario from this seed instead.
    #[arg(long)]
    synthetic_seed: Option<u64>,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Event configuration (key: value lines).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Episode seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Episode length in steps.
    #[arg(long)]
    horizon: Option<usize>,
    /// Override the weekly arrival count of the event configuration.
    #[arg(long)]
    weekly_arrivals: Option<u32>,
    /// Disable per-episode noise on renewables and price.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args, Clone)]
struct PolicyArgs {
    /// uncontrolled, random or greedy.
    #[arg(long, default_value = "greedy")]
    policy: String,
    /// Greedy policy: keep at least this much energy (kWh) when discharging.
    #[arg(long)]
    discharge_reserve: Option<f64>,
    /// Greedy policy: stop charging from surplus above this energy (kWh).
    #[arg(long)]
    charge_target: Option<f64>,
    /// Greedy policy: ignore residual load smaller than this (kW).
    #[arg(long)]
    deadband: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Comma-separated weekly arrival counts.
    #[arg(long, value_delimiter = ',')]
    arrivals: Option<Vec<u32>>,
    /// Episodes per arrival rate.
    #[arg(long, default_value_t = DEFAULT_SWEEP_EPISODES)]
    episodes: usize,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 5)]
    generations: usize,
    /// Candidates per generation.
    #[arg(long, default_value_t = 8)]
    population: usize,
    /// Share of each generation used to refit the sampler.
    #[arg(long, default_value_t = 0.25)]
    elite_fraction: f64,
    /// Number of episode seeds each candidate is scored on.
    #[arg(long, default_value_t = 1)]
    eval_episodes: u64,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TransportArgs {
    /// Serve one session on standard input/output.
    #[arg(long)]
    stdio: bool,
    /// Listen on 127.0.0.1:<port>; 0 picks a free port.
    #[arg(long)]
    socket: Option<u16>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    transport: TransportArgs,
    /// Stop accepting after this many connections.
    #[arg(long)]
    max_connections: Option<usize>,
}

fn run_config(common: &CommonArgs, policy: Option<&PolicyArgs>) -> Result<RunConfig> {
    let source = match (&common.source.scenario, common.source.synthetic_seed) {
        (Some(p), None) => ScenarioSource::File(p.clone()),
        (None, Some(s)) => ScenarioSource::Synthetic(s),
        _ => unreachable!("clap enforces exactly one scenario source"),
    };
    let mut cfg = RunConfig::new(source, common.out.clone());
    if let Some(path) = &common.events {
        cfg.events = EventConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        cfg.env.n_stations = cfg.events.n_stations;
        cfg.env.ev_capacity = cfg.events.ev_capacity;
    }
    if let Some(w) = common.weekly_arrivals {
        cfg.events.weekly_arrivals = w;
    }
    if let Some(h) = common.horizon {
        cfg.env.horizon = h;
    }
    if common.no_noise {
        cfg.noise = NoiseSpec::none();
    }
    cfg.seed = common.seed;
    if let Some(p) = policy {
        cfg.policy = p.policy.clone();
        let d = ThresholdPolicyParams::default();
        cfg.params = ThresholdPolicyParams {
            discharge_reserve: p.discharge_reserve.unwrap_or(d.discharge_reserve),
            charge_target: p.charge_target.unwrap_or(d.charge_target),
            surplus_deadband: p.deadband.unwrap_or(d.surplus_deadband),
            order: d.order,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = io::stdout();
    match cli.command {
        Command::Simulate(a) => {
            let cfg = run_config(&a.common, Some(&a.policy))?;
            let s = vpp_cli::simulate(&cfg)?;
            write!(stdout, "{}", s.key_parameters.to_key_values())?;
        }
        Command::Baseline(a) => {
            let cfg = run_config(&a, None)?;
            let kp = vpp_cli::baseline(&cfg)?;
            write!(stdout, "{}", kp.to_key_values())?;
        }
        Command::SweepArrivals(a) => {
            let cfg = run_config(&a.common, Some(&a.policy))?;
            let arrivals = a.arrivals.unwrap_or_else(|| DEFAULT_SWEEP_ARRIVALS.to_vec());
            let rows = vpp_cli::sweep_arrivals(&cfg, &arrivals, a.episodes)?;
            vpp_cli::write_sweep_csv(&rows, &mut stdout)?;
        }
        Command::Search(a) => {
            let cfg = run_config(&a.common, None)?;
            let search = SearchConfig {
                bounds: ParamBounds::default(),
                generations: a.generations,
                population: a.population,
                elite_fraction: a.elite_fraction,
                seed: cfg.seed,
                eval_seeds: (0..a.eval_episodes.max(1)).map(|i| cfg.seed + i).collect(),
                ..SearchConfig::default()
            };
            let r = vpp_cli::search(&cfg, &search)?;
            writeln!(stdout, "{}best_score: {}", r.best_params.to_key_values(), r.best_score)?;
        }
        Command::Serve(a) => {
            let cfg = run_config(&a.common, None)?;
            let data = Arc::new(load_dataset(&cfg.scenario, cfg.env.horizon)?);
            if a.transport.stdio {
                let env = build_env(&cfg, data)?;
                let stdin = io::stdin();
                serve(env, BufReader::new(stdin.lock()), stdout.lock())?;
            } else {
                let port = a.transport.socket.expect("clap enforces a transport");
                let listener = TcpListener::bind(("127.0.0.1", port))
                    .with_context(|| format!("binding 127.0.0.1:{port}"))?;
                writeln!(stdout, "listening on {}", listener.local_addr()?)?;
                stdout.flush()?;
                let factory: EnvFactory = Arc::new(move || {
                    build_env(&cfg, data.clone()).map_err(|e| vpp_core::VppError::Config(e.to_string()))
                });
                serve_tcp(listener, factory, a.max_connections)?;
            }
        }
        Command::DumpRewardShapes(a) => {
            let cfg = run_config(&a, None)?;
            vpp_cli::dump_reward_shapes(&cfg)?;
            writeln!(stdout, "{}", cfg.out.join("reward_shapes.csv").display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
