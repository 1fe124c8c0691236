//! Step-based microgrid environment with EV charging stations.

mod action;

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use action::{
    action_index, adaptive_power, max_action_index, next_energy, station_mask, substitute, Action,
    ActionCode, ActionMask, PowerPlan, N_ACTION_VALUES,
};

use crate::error::{Result, VppError};
use crate::events::{assign_stations, generate_events, uncontrolled_baseline, EventConfig, StationSchedule};
use crate::metrics::{key_parameters, DepartureRecord, KeyParameters, SimulationTrace, TraceStep};
use crate::rewards::{departure_reward, final_reward, load_reward, FinalReward, RewardBreakdown};
use crate::timeseries::{apply_episode_noise, dataset_goal, DatasetGoal, NoiseSpec, ScenarioDataset};
use crate::{STEP_HOURS, YEAR_STEPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_stations: usize,
    pub station_min_power: f64,
    pub station_rated_power: f64,
    pub station_max_power: f64,
    pub dt: f64,
    pub ev_capacity: f64,
    pub energy_floor: f64,
    pub energy_ceiling: f64,
    /// Below this an EV must charge.
    pub force_charge_below: f64,
    /// Below this an EV may not discharge.
    pub no_discharge_below: f64,
    /// Number of observation rows per episode.
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_stations: 4,
            station_min_power: 1.0,
            station_rated_power: 3.7,
            station_max_power: 11.0,
            dt: STEP_HOURS,
            ev_capacity: 100.0,
            energy_floor: 0.1,
            energy_ceiling: 99.9,
            force_charge_below: 10.0,
            no_discharge_below: 20.0,
            horizon: YEAR_STEPS,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VppError::Config(m.to_string()));
        if self.n_stations == 0 {
            return bad("n_stations must be at least 1");
        }
        if !(0.0 < self.station_min_power
            && self.station_min_power <= self.station_rated_power
            && self.station_rated_power <= self.station_max_power)
        {
            return bad("station powers must satisfy 0 < min <= rated <= max");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(0.0 <= self.energy_floor
            && self.energy_floor < self.force_charge_below
            && self.force_charge_below < self.no_discharge_below
            && self.no_discharge_below < self.energy_ceiling
            && self.energy_ceiling < self.ev_capacity)
        {
            return bad("need 0 <= floor < force_charge < no_discharge < ceiling < capacity");
        }
        if self.horizon < 2 {
            return bad("horizon must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Summed station power, kW.
    pub ev_power: f64,
    /// Grid exchange after EV power, kW.
    pub total_load: f64,
    /// Battery energy per station, kWh; 0 for an empty station.
    pub available_energies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureInfo {
    pub ev_id: u32,
    pub station: usize,
    pub energy: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: usize,
    pub station_power: Vec<f64>,
    pub applied_action: Vec<u8>,
    pub action_valid: Vec<bool>,
    pub load_reward: f64,
    pub departure_reward: f64,
    pub departures: Vec<DepartureInfo>,
    /// Signed cost of this step's grid exchange, EUR.
    pub total_cost: f64,
    pub grid_import: f64,
    pub grid_export: f64,
    pub grid_cost: f64,
    pub final_reward: Option<FinalReward>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
struct Seated {
    event: usize,
    energy: f64,
}

#[derive(Debug, Clone)]
struct Episode {
    seed: u64,
    t: usize,
    done: bool,
    data: ScenarioDataset,
    schedule: StationSchedule,
    arrivals: Vec<Vec<(usize, usize)>>,
    slots: Vec<Option<Seated>>,
    grid_import: f64,
    grid_export: f64,
    grid_cost: f64,
    breakdown: RewardBreakdown,
    baseline: KeyParameters,
    goal: DatasetGoal,
    trace: SimulationTrace,
    observation: Observation,
    final_metrics: Option<KeyParameters>,
}

/// Outcome of a finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub trace: SimulationTrace,
    pub key_parameters: KeyParameters,
    pub baseline: KeyParameters,
    pub goal: DatasetGoal,
    pub breakdown: RewardBreakdown,
}

/// Derives independent event and noise seeds from one episode seed.
pub fn episode_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

pub struct VppEnv {
    dataset: Arc<ScenarioDataset>,
    events: EventConfig,
    config: EnvConfig,
    noise: NoiseSpec,
    episode: Option<Episode>,
}

impl VppEnv {
    pub fn new(
        dataset: Arc<ScenarioDataset>,
        events: EventConfig,
        config: EnvConfig,
        noise: NoiseSpec,
    ) -> Result<Self> {
        config.validate()?;
        events.validate()?;
        if events.n_stations != config.n_stations {
            return Err(VppError::Config(format!(
                "event config has {} stations, env config {}",
                events.n_stations, config.n_stations
            )));
        }
        if (events.ev_capacity - config.ev_capacity).abs() > 1e-9 {
            return Err(VppError::Config(format!(
                "event config capacity {} differs from env capacity {}",
                events.ev_capacity, config.ev_capacity
            )));
        }
        if dataset.len() < config.horizon {
            return Err(VppError::Config(format!(
                "dataset has {} rows, horizon needs {}",
                dataset.len(),
                config.horizon
            )));
        }
        Ok(Self {
            dataset,
            events,
            config,
            noise,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn event_config(&self) -> &EventConfig {
        &self.events
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn dataset(&self) -> &Arc<ScenarioDataset> {
        &self.dataset
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let cfg = &self.config;
        let horizon = cfg.horizon;
        let (event_seed, noise_seed) = episode_seeds(seed);

        let mut data = apply_episode_noise(&self.dataset, &self.noise, noise_seed)?;
        if data.len() > horizon {
            data = data.truncated(horizon)?;
        }
        let events = generate_events(&self.events, horizon, event_seed)?;
        let schedule = assign_stations(&events, cfg.n_stations, horizon)?;
        let baseline_trace = uncontrolled_baseline(&schedule, &data, &self.events)?;
        let baseline = key_parameters(&baseline_trace)?;
        let goal = dataset_goal(
            &data,
            schedule.assigned_count().max(1),
            self.events.mean_soc,
            cfg.ev_capacity,
        )?;

        let mut arrivals = vec![Vec::new(); horizon];
        for (i, (e, s)) in schedule.events().iter().zip(schedule.assignments()).enumerate() {
            if let Some(s) = s {
                arrivals[e.arrival_step].push((i, *s));
            }
        }

        let mut ep = Episode {
            seed,
            t: 0,
            done: false,
            data,
            schedule,
            arrivals,
            slots: vec![None; cfg.n_stations],
            grid_import: 0.0,
            grid_export: 0.0,
            grid_cost: 0.0,
            breakdown: RewardBreakdown::default(),
            baseline,
            goal,
            trace: SimulationTrace {
                dt: cfg.dt,
                n_stations: cfg.n_stations,
                seed,
                steps: Vec::with_capacity(horizon),
                departures: Vec::new(),
                dropped_events: 0,
            },
            observation: Observation {
                ev_power: 0.0,
                total_load: 0.0,
                available_energies: vec![0.0; cfg.n_stations],
            },
            final_metrics: None,
        };
        ep.trace.dropped_events = ep.schedule.dropped_count();
        seat_arrivals(&mut ep, 0, cfg);
        let total_load = ep.data.house_rw_load().values()[0];
        let power = vec![0.0; cfg.n_stations];
        account_grid(&mut ep, total_load, 0, cfg.dt);
        record_step(&mut ep, 0, 0.0, total_load, 0.0, power);
        self.episode = Some(ep);
        Ok(self.observation().expect("episode just started").clone())
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let cfg = &self.config;
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| VppError::Lifecycle("step called before reset".into()))?;
        if ep.done {
            return Err(VppError::Lifecycle("episode is done; call reset".into()));
        }
        if action.len() != cfg.n_stations {
            return Err(VppError::Argument(format!(
                "action has {} entries, expected {}",
                action.len(),
                cfg.n_stations
            )));
        }
        let t = ep.t + 1;
        let net = ep.data.house_rw_load().values()[t];
        let energies: Vec<Option<f64>> = ep.slots.iter().map(|s| s.as_ref().map(|s| s.energy)).collect();
        let plan = adaptive_power(net, &energies, action, cfg)?;
        for (slot, &p) in ep.slots.iter_mut().zip(&plan.power) {
            if let Some(s) = slot {
                s.energy = next_energy(s.energy, p, cfg);
            }
        }
        let ev_power: f64 = plan.power.iter().sum();
        let total_load = net + ev_power;
        account_grid(ep, total_load, t, cfg.dt);
        let total_cost = step_cost(total_load, cfg.dt, ep.data.price().values()[t]);
        let load_r = load_reward(total_load);

        let mut departures = Vec::new();
        let mut departure_r = 0.0;
        for (station, slot) in ep.slots.iter_mut().enumerate() {
            let leaving = matches!(slot, Some(s) if ep.schedule.events()[s.event].departure_step == t);
            if !leaving {
                continue;
            }
            let s = slot.take().expect("checked above");
            let e = &ep.schedule.events()[s.event];
            let r = departure_reward(s.energy.clamp(0.0, cfg.ev_capacity), cfg.ev_capacity)?;
            departure_r += r;
            departures.push(DepartureInfo {
                ev_id: e.ev_id,
                station,
                energy: s.energy,
                reward: r,
            });
            ep.trace.departures.push(DepartureRecord {
                ev_id: e.ev_id,
                station,
                arrival_step: e.arrival_step,
                departure_step: t,
                arrival_energy: e.arrival_energy,
                energy: s.energy,
            });
        }
        seat_arrivals(ep, t, cfg);

        ep.t = t;
        ep.done = t + 1 >= cfg.horizon;
        let mut reward = load_r + departure_r;
        ep.breakdown.load_reward_total += load_r;
        ep.breakdown.departure_reward_total += departure_r;
        record_step(ep, t, ev_power, total_load, reward, plan.power.clone());

        let mut final_part = None;
        if ep.done {
            let metrics = key_parameters(&ep.trace)?;
            let f = final_reward(&metrics, Some(&ep.baseline), &ep.goal, cfg.ev_capacity)?;
            reward += f.total();
            ep.trace.steps.last_mut().expect("row recorded").reward = reward;
            ep.breakdown = ep.breakdown.with_final(&f);
            let mut metrics = metrics;
            metrics.cumulative_reward = ep.trace.cumulative_reward();
            ep.final_metrics = Some(metrics);
            final_part = Some(f);
        }
        ep.breakdown.cumulative += reward;

        Ok(StepResult {
            observation: ep.observation.clone(),
            reward,
            done: ep.done,
            info: StepInfo {
                t,
                station_power: plan.power,
                applied_action: plan.applied.iter().map(|c| *c as u8).collect(),
                action_valid: plan.valid,
                load_reward: load_r,
                departure_reward: departure_r,
                departures,
                total_cost,
                grid_import: ep.grid_import,
                grid_export: ep.grid_export,
                grid_cost: ep.grid_cost,
                final_reward: final_part,
            },
        })
    }

    /// Valid codes per station for the next step.
    pub fn action_mask(&self) -> Option<ActionMask> {
        let ep = self.episode.as_ref()?;
        Some(ActionMask(
            ep.slots
                .iter()
                .map(|s| station_mask(s.as_ref().map(|s| s.energy), &self.config))
                .collect(),
        ))
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.episode.as_ref().map(|e| &e.observation)
    }

    pub fn t(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.t)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    /// Net load (household minus renewables) the next step will see.
    pub fn next_net_load(&self) -> Option<f64> {
        let ep = self.episode.as_ref()?;
        ep.data.house_rw_load().values().get(ep.t + 1).copied()
    }

    pub fn episode_dataset(&self) -> Option<&ScenarioDataset> {
        self.episode.as_ref().map(|e| &e.data)
    }

    pub fn schedule(&self) -> Option<&StationSchedule> {
        self.episode.as_ref().map(|e| &e.schedule)
    }

    pub fn trace(&self) -> Option<&SimulationTrace> {
        self.episode.as_ref().map(|e| &e.trace)
    }

    pub fn breakdown(&self) -> Option<&RewardBreakdown> {
        self.episode.as_ref().map(|e| &e.breakdown)
    }

    pub fn baseline(&self) -> Option<&KeyParameters> {
        self.episode.as_ref().map(|e| &e.baseline)
    }

    pub fn goal(&self) -> Option<&DatasetGoal> {
        self.episode.as_ref().map(|e| &e.goal)
    }

    /// Summary of the finished episode; `None` while it is still running.
    pub fn summary(&self) -> Option<EpisodeSummary> {
        let ep = self.episode.as_ref()?;
        Some(EpisodeSummary {
            seed: ep.seed,
            trace: ep.trace.clone(),
            key_parameters: ep.final_metrics.clone()?,
            baseline: ep.baseline.clone(),
            goal: ep.goal.clone(),
            breakdown: ep.breakdown,
        })
    }

    /// Like [`summary`](Self::summary) but hands over the trace without copying.
    pub fn take_summary(&mut self) -> Option<EpisodeSummary> {
        if !self.is_done() {
            return None;
        }
        let ep = self.episode.take()?;
        Some(EpisodeSummary {
            seed: ep.seed,
            key_parameters: ep.final_metrics?,
            trace: ep.trace,
            baseline: ep.baseline,
            goal: ep.goal,
            breakdown: ep.breakdown,
        })
    }
}

fn seat_arrivals(ep: &mut Episode, t: usize, cfg: &EnvConfig) {
    for &(i, s) in &ep.arrivals[t] {
        let e = ep.schedule.events()[i].arrival_energy;
        ep.slots[s] = Some(Seated {
            event: i,
            energy: e.clamp(cfg.energy_floor, cfg.energy_ceiling),
        });
    }
}

/// Signed cost of exchanging `total_load` with the grid for one step.
pub fn step_cost(total_load: f64, dt: f64, price: f64) -> f64 {
    total_load * dt * price
}

fn account_grid(ep: &mut Episode, total_load: f64, t: usize, dt: f64) {
    let energy = total_load * dt;
    let price = ep.data.price().values()[t];
    if energy > 0.0 {
        ep.grid_import += energy;
        ep.grid_cost += energy * price.max(0.0);
    } else {
        ep.grid_export -= energy;
    }
}

fn record_step(ep: &mut Episode, t: usize, ev_power: f64, total_load: f64, reward: f64, power: Vec<f64>) {
    let energies: Vec<f64> = ep.slots.iter().map(|s| s.as_ref().map_or(0.0, |s| s.energy)).collect();
    ep.trace.steps.push(TraceStep {
        household: ep.data.household_power().values()[t],
        renewable: ep.data.renewable_power().values()[t],
        ev_power,
        total_load,
        price: ep.data.price().values()[t],
        reward,
        station_power: power,
        station_energy: energies.clone(),
    });
    ep.observation = Observation {
        ev_power,
        total_load,
        available_energies: energies,
    };
}
