//! Run orchestration behind the `vpp-sim` binary: scenario loading, episode
//! runs, the arrivals sweep, policy search and report writing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vpp_core::controllers::{
    cross_entropy_search, policy_by_name, run_episode, write_history_csv, SearchConfig, SearchResult,
    ThresholdPolicyParams,
};
use vpp_core::env::{EnvConfig, EpisodeSummary, VppEnv};
use vpp_core::events::{
    assign_stations, generate_events, uncontrolled_baseline, write_events_csv, EventConfig,
};
use vpp_core::metrics::{
    battery_band, default_load_edges, departure_summary, flow_decomposition, key_parameters, load_histogram,
    self_consumption_autarky, write_departures_csv, write_trace_csv, DepartureSummary, KeyParameters,
    LoadHistogram, SimulationTrace,
};
use vpp_core::rewards::{all_shapes, write_shapes_csv};
use vpp_core::timeseries::{
    apply_episode_noise, dataset_goal, load_scenario, synthesize_scenario, LeapDayPolicy, NoiseSpec,
    ScenarioDataset, SynthConfig,
};

pub const DEFAULT_SWEEP_ARRIVALS: [u32; 6] = [10, 15, 20, 25, 30, 35];
pub const DEFAULT_SWEEP_EPISODES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScenarioSource {
    File(PathBuf),
    Synthetic(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    pub events: EventConfig,
    pub env: EnvConfig,
    pub noise: NoiseSpec,
    pub policy: String,
    pub params: ThresholdPolicyParams,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(scenario: ScenarioSource, out: impl Into<PathBuf>) -> Self {
        Self {
            scenario,
            events: EventConfig::default(),
            env: EnvConfig::default(),
            noise: NoiseSpec::default(),
            policy: "greedy".into(),
            params: ThresholdPolicyParams::default(),
            seed: 0,
            out: out.into(),
        }
    }

    /// SHA-256 of the canonical JSON form. The output directory is not part of it.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

pub fn load_dataset(source: &ScenarioSource, horizon: usize) -> Result<ScenarioDataset> {
    match source {
        ScenarioSource::File(path) => load_scenario(path, LeapDayPolicy::Drop)
            .with_context(|| format!("loading scenario {}", path.display())),
        ScenarioSource::Synthetic(seed) => Ok(synthesize_scenario(
            *seed,
            &SynthConfig {
                steps: horizon,
                ..SynthConfig::default()
            },
        )?),
    }
}

pub fn build_env(cfg: &RunConfig, dataset: Arc<ScenarioDataset>) -> Result<VppEnv> {
    Ok(VppEnv::new(dataset, cfg.events.clone(), cfg.env.clone(), cfg.noise.clone())?)
}

pub fn run_policy(cfg: &RunConfig, dataset: Arc<ScenarioDataset>, seed: u64) -> Result<EpisodeSummary> {
    cfg.params.validate(&cfg.env)?;
    let mut env = build_env(cfg, dataset)?;
    let mut policy = policy_by_name(&cfg.policy, seed, cfg.params)?;
    Ok(run_episode(&mut env, policy.as_mut(), seed)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub dataset_checksum: String,
    pub config: RunConfig,
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, seeds: Vec<u64>, data: &ScenarioDataset) -> Result<()> {
    let m = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash(),
        seeds,
        dataset_checksum: format!("{:016x}", data.checksum()),
        config: cfg.clone(),
    };
    let mut w = create(dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &m)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Flat report of everything derived from one trace.
pub struct TraceReport {
    pub key_parameters: KeyParameters,
    pub histogram: LoadHistogram,
    pub self_consumption: Option<f64>,
    pub autarky: Option<f64>,
}

pub fn trace_report(trace: &SimulationTrace) -> Result<TraceReport> {
    let (self_consumption, autarky) = self_consumption_autarky(trace);
    Ok(TraceReport {
        key_parameters: key_parameters(trace)?,
        histogram: load_histogram(trace, &default_load_edges())?,
        self_consumption,
        autarky,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn write_trace_outputs(dir: &Path, trace: &SimulationTrace, report: &TraceReport) -> Result<()> {
    write_trace_csv(trace, create(dir, "trace.csv")?)?;
    write_departures_csv(trace, create(dir, "departures.csv")?)?;

    let mut hist = create(dir, "histogram.csv")?;
    writeln!(hist, "lower_kw,upper_kw,count")?;
    let h = &report.histogram;
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(hist, "{},{},{}", h.edges[i], h.edges[i + 1], c)?;
    }
    hist.flush()?;

    let flows = flow_decomposition(trace);
    let mut text = report.key_parameters.to_key_values();
    text.push_str(&format!(
        "self_consumption: {}\nautarky: {}\nbalanced_steps_005: {}\nbalanced_steps_01: {}\n\
         steps: {}\ndropped_events: {}\ndischarged_energy: {}\n",
        opt(report.self_consumption),
        opt(report.autarky),
        h.balanced_005,
        h.balanced_01,
        trace.len(),
        trace.dropped_events,
        trace.discharged_energy()
    ));
    text.push_str(&format!(
        "re2house: {}\nre2ev: {}\nev2house: {}\nev2ev: {}\nre2grid: {}\nev2grid: {}\ngrid2house: {}\ngrid2ev: {}\n",
        flows.re2house,
        flows.re2ev,
        flows.ev2house,
        flows.ev2ev,
        flows.re2grid,
        flows.ev2grid,
        flows.grid2house,
        flows.grid2ev
    ));
    write_text(dir, "metrics.txt", &text)
}

pub fn simulate(cfg: &RunConfig) -> Result<EpisodeSummary> {
    let data = Arc::new(load_dataset(&cfg.scenario, cfg.env.horizon)?);
    let summary = run_policy(cfg, data.clone(), cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let report = trace_report(&summary.trace)?;
    write_trace_outputs(&cfg.out, &summary.trace, &report)?;
    write_text(&cfg.out, "reward_breakdown.txt", &summary.breakdown.to_key_values())?;
    let table = serde_json::json!({
        "policy": cfg.policy,
        "controlled": summary.key_parameters,
        "uncontrolled": summary.baseline,
        "goal": summary.goal,
    });
    let mut w = create(&cfg.out, "metrics.json")?;
    serde_json::to_writer_pretty(&mut w, &table)?;
    w.write_all(b"\n")?;
    w.flush()?;
    write_manifest(&cfg.out, "simulate", cfg, vec![cfg.seed], &data)?;
    Ok(summary)
}

/// Charging events and the uncontrolled trace of one episode seed.
pub fn baseline_trace(cfg: &RunConfig, data: &ScenarioDataset, seed: u64) -> Result<(SimulationTrace, ScenarioDataset, usize)> {
    let (event_seed, noise_seed) = vpp_core::env::episode_seeds(seed);
    let mut noisy = apply_episode_noise(data, &cfg.noise, noise_seed)?;
    if noisy.len() > cfg.env.horizon {
        noisy = noisy.truncated(cfg.env.horizon)?;
    }
    let events = generate_events(&cfg.events, cfg.env.horizon, event_seed)?;
    let schedule = assign_stations(&events, cfg.env.n_stations, cfg.env.horizon)?;
    let mut trace = uncontrolled_baseline(&schedule, &noisy, &cfg.events)?;
    trace.seed = seed;
    Ok((trace, noisy, schedule.assigned_count()))
}

pub fn baseline(cfg: &RunConfig) -> Result<KeyParameters> {
    let data = load_dataset(&cfg.scenario, cfg.env.horizon)?;
    let (trace, noisy, assigned) = baseline_trace(cfg, &data, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let (event_seed, _) = vpp_core::env::episode_seeds(cfg.seed);
    write_events_csv(
        &generate_events(&cfg.events, cfg.env.horizon, event_seed)?,
        create(&cfg.out, "events.csv")?,
    )?;
    let report = trace_report(&trace)?;
    write_trace_outputs(&cfg.out, &trace, &report)?;
    let goal = dataset_goal(&noisy, assigned.max(1), cfg.events.mean_soc, cfg.env.ev_capacity)?;
    write_text(
        &cfg.out,
        "goal.txt",
        &format!(
            "total_supply_energy: {}\ntotal_demand_energy: {}\nsurplus_energy: {}\n\
             max_avg_departure_energy: {}\nevent_count: {}\n",
            goal.total_supply_energy,
            goal.total_demand_energy,
            goal.surplus_energy,
            goal.max_avg_departure_energy,
            goal.event_count
        ),
    )?;
    write_manifest(&cfg.out, "baseline", cfg, vec![cfg.seed], &data)?;
    Ok(report.key_parameters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub weekly_arrivals: u32,
    pub episodes: usize,
    pub total_evs: usize,
    pub departures: DepartureSummary,
    /// Share of departures per battery band, percent.
    pub band_percent: [f64; 4],
    /// Mean departure energy per battery band, kWh; `None` for empty bands.
    pub band_mean: [Option<f64>; 4],
    pub mean_key_parameters: KeyParameters,
    pub balanced_01_fraction: f64,
    pub balanced_005_fraction: f64,
    pub mean_cumulative_reward: f64,
}

fn mean_key_parameters(all: &[KeyParameters]) -> KeyParameters {
    let n = all.len() as f64;
    let avg = |f: fn(&KeyParameters) -> f64| all.iter().map(f).sum::<f64>() / n;
    KeyParameters {
        grid_energy_used: avg(|k| k.grid_energy_used),
        re2v_unused: avg(|k| k.re2v_unused),
        grid_cost: avg(|k| k.grid_cost),
        avg_departure_energy: avg(|k| k.avg_departure_energy),
        cumulative_reward: avg(|k| k.cumulative_reward),
        charging_event_count: (all.iter().map(|k| k.charging_event_count).sum::<usize>() as f64 / n).round() as usize,
        net_energy: avg(|k| k.net_energy),
        total_cost_signed: avg(|k| k.total_cost_signed),
    }
}

/// Runs `episodes` seeded episodes per arrivals value (seeds `seed..seed+episodes`)
/// and aggregates them into one row per value.
pub fn sweep_rows(cfg: &RunConfig, data: Arc<ScenarioDataset>, arrivals: &[u32], episodes: usize) -> Result<Vec<SweepRow>> {
    if episodes == 0 || arrivals.is_empty() {
        anyhow::bail!("sweep needs at least one arrivals value and one episode");
    }
    let jobs: Vec<(u32, u64)> = arrivals
        .iter()
        .flat_map(|&w| (0..episodes as u64).map(move |i| (w, cfg.seed + i)))
        .collect();
    let results: Vec<(EpisodeSummary, LoadHistogram)> = jobs
        .par_iter()
        .map(|&(w, seed)| {
            let mut c = cfg.clone();
            c.events.weekly_arrivals = w;
            let s = run_policy(&c, data.clone(), seed)?;
            let h = load_histogram(&s.trace, &default_load_edges())?;
            Ok((s, h))
        })
        .collect::<Result<_>>()?;

    let cap = cfg.env.ev_capacity;
    let rows = arrivals
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let chunk = &results[k * episodes..(k + 1) * episodes];
            let energies: Vec<f64> = chunk
                .iter()
                .flat_map(|(s, _)| s.trace.departures.iter().map(|d| d.energy))
                .collect();
            let departures = departure_summary(&energies, cap);
            let mut sums = [0.0; 4];
            for &e in &energies {
                sums[battery_band(e, cap)] += e;
            }
            let total = energies.len().max(1) as f64;
            let steps: usize = chunk.iter().map(|(s, _)| s.trace.len()).sum();
            let kps: Vec<KeyParameters> = chunk.iter().map(|(s, _)| s.key_parameters.clone()).collect();
            SweepRow {
                weekly_arrivals: w,
                episodes,
                total_evs: energies.len(),
                band_percent: std::array::from_fn(|b| 100.0 * departures.band_counts[b] as f64 / total),
                band_mean: std::array::from_fn(|b| {
                    (departures.band_counts[b] > 0).then(|| sums[b] / departures.band_counts[b] as f64)
                }),
                departures,
                mean_key_parameters: mean_key_parameters(&kps),
                balanced_01_fraction: chunk.iter().map(|(_, h)| h.balanced_01).sum::<usize>() as f64 / steps as f64,
                balanced_005_fraction: chunk.iter().map(|(_, h)| h.balanced_005).sum::<usize>() as f64 / steps as f64,
                mean_cumulative_reward: chunk.iter().map(|(s, _)| s.breakdown.cumulative).sum::<f64>() / episodes as f64,
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "weekly_arrivals,episodes,total_evs,q1_kwh,median_kwh,q3_kwh,lower_fence_kwh,upper_fence_kwh,\
         band0_pct,band1_pct,band2_pct,band3_pct,band0_mean_kwh,band1_mean_kwh,band2_mean_kwh,band3_mean_kwh,\
         avg_departure_energy_kwh,grid_import_kwh,re2v_unused_kwh,grid_cost_eur,balanced_01_fraction,\
         balanced_005_fraction,mean_cumulative_reward"
    )?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        let d = &r.departures;
        let k = &r.mean_key_parameters;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.weekly_arrivals,
            r.episodes,
            r.total_evs,
            d.q1,
            d.median,
            d.q3,
            d.lower_fence,
            d.upper_fence,
            r.band_percent[0],
            r.band_percent[1],
            r.band_percent[2],
            r.band_percent[3],
            cell(r.band_mean[0]),
            cell(r.band_mean[1]),
            cell(r.band_mean[2]),
            cell(r.band_mean[3]),
            k.avg_departure_energy,
            k.grid_energy_used,
            k.re2v_unused,
            k.grid_cost,
            r.balanced_01_fraction,
            r.balanced_005_fraction,
            r.mean_cumulative_reward
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_arrivals(cfg: &RunConfig, arrivals: &[u32], episodes: usize) -> Result<Vec<SweepRow>> {
    let data = Arc::new(load_dataset(&cfg.scenario, cfg.env.horizon)?);
    let rows = sweep_rows(cfg, data.clone(), arrivals, episodes)?;
    fs::create_dir_all(&cfg.out)?;
    write_sweep_csv(&rows, create(&cfg.out, "sweep.csv")?)?;
    write_manifest(
        &cfg.out,
        "sweep-arrivals",
        cfg,
        (0..episodes as u64).map(|i| cfg.seed + i).collect(),
        &data,
    )?;
    Ok(rows)
}

pub fn search(cfg: &RunConfig, search: &SearchConfig) -> Result<SearchResult> {
    let data = Arc::new(load_dataset(&cfg.scenario, cfg.env.horizon)?);
    let factory = || build_env(cfg, data.clone()).map_err(|e| vpp_core::VppError::Config(e.to_string()));
    let result = cross_entropy_search(search, factory)?;
    fs::create_dir_all(&cfg.out)?;
    write_history_csv(&result.history, create(&cfg.out, "search_history.csv")?)?;
    let mut text = result.best_params.to_key_values();
    text.push_str(&format!("best_score: {}\n", result.best_score));
    write_text(&cfg.out, "best_params.txt", &text)?;
    write_manifest(&cfg.out, "search", cfg, search.eval_seeds.clone(), &data)?;
    Ok(result)
}

pub fn dump_reward_shapes(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(&cfg.scenario, cfg.env.horizon)?;
    let (trace, noisy, assigned) = baseline_trace(cfg, &data, cfg.seed)?;
    let baseline = key_parameters(&trace)?;
    let goal = dataset_goal(&noisy, assigned.max(1), cfg.events.mean_soc, cfg.env.ev_capacity)?;
    fs::create_dir_all(&cfg.out)?;
    write_shapes_csv(
        &all_shapes(&baseline, &goal, cfg.env.ev_capacity),
        create(&cfg.out, "reward_shapes.csv")?,
    )?;
    write_manifest(&cfg.out, "dump-reward-shapes", cfg, vec![cfg.seed], &data)?;
    Ok(())
}
