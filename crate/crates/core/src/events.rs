//! Stochastic charging events, station assignment and the uncontrolled
//! charging baseline.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VppError};
use crate::metrics::{DepartureRecord, SimulationTrace, TraceStep};
use crate::timeseries::ScenarioDataset;
use crate::STEP_HOURS;

/// Quarter-hour bins in one week.
pub const WEEK_BINS: usize = 672;
/// Upper bound on a single parking duration, hours.
pub const MAX_PARK_HOURS: f64 = 24.0;
pub const MAX_EV_ID: u32 = i32::MAX as u32;

/// Parameters of the charging-event generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    pub weekly_arrivals: u32,
    pub mean_park: f64,
    pub std_park: f64,
    pub mean_soc: f64,
    pub std_soc: f64,
    pub ev_capacity: f64,
    pub n_stations: usize,
    /// Power used by the uncontrolled baseline, kW.
    pub max_charging_power: f64,
    /// Weekly arrival probability per quarter-hour bin; bin 0 is the first row
    /// of the dataset.
    pub arrival_profile: Vec<f64>,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            weekly_arrivals: 20,
            mean_park: 23.99,
            std_park: 1.0,
            mean_soc: 0.5,
            std_soc: 0.1,
            ev_capacity: 100.0,
            n_stations: 4,
            max_charging_power: 11.0,
            arrival_profile: uniform_profile(),
        }
    }
}

pub fn uniform_profile() -> Vec<f64> {
    vec![1.0 / WEEK_BINS as f64; WEEK_BINS]
}

impl EventConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VppError::Config(m.to_string()));
        if self.arrival_profile.len() != WEEK_BINS {
            return bad("arrival_profile must have 672 bins");
        }
        if self.arrival_profile.iter().any(|p| !(*p >= 0.0)) {
            return bad("arrival_profile entries must be non-negative");
        }
        let total: f64 = self.arrival_profile.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(VppError::Config(format!(
                "arrival_profile sums to {total}, expected 1"
            )));
        }
        if !(self.mean_park > 0.0 && self.mean_park <= MAX_PARK_HOURS) {
            return bad("mean_park must be in (0, 24] hours");
        }
        if !(self.std_park >= 0.0 && self.std_soc >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.mean_soc) {
            return bad("mean_soc must be in [0, 1]");
        }
        if !(self.ev_capacity > 0.0 && self.max_charging_power > 0.0) {
            return bad("ev_capacity and max_charging_power must be positive");
        }
        if self.n_stations == 0 {
            return bad("n_stations must be at least 1");
        }
        Ok(())
    }

    /// Parses a flat `key: value` document using the Elvis key names
    /// (`num_charging_events, mean_park, std_deviation_park, mean_soc,
    /// std_deviation_soc`). Unknown keys are ignored. `arrival_profile` may
    /// name a file of weights (one per line), resolved against `base_dir`.
    pub fn from_key_values(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .or_else(|| line.split_once('='))
                .ok_or_else(|| {
                    VppError::Parse(format!("line {}: expected `key: value`", lineno + 1))
                })?;
            let key = key.trim();
            let value = value.trim().trim_matches('"');
            let num = || {
                value.parse::<f64>().map_err(|_| {
                    VppError::Parse(format!("line {}: `{key}` is not a number", lineno + 1))
                })
            };
            match key {
                "num_charging_events" => cfg.weekly_arrivals = num()? as u32,
                "mean_park" => cfg.mean_park = num()?,
                "std_deviation_park" => cfg.std_park = num()?,
                "mean_soc" => cfg.mean_soc = num()?,
                "std_deviation_soc" => cfg.std_soc = num()?,
                "ev_capacity" => cfg.ev_capacity = num()?,
                "n_stations" | "num_charging_stations" => cfg.n_stations = num()? as usize,
                "max_charging_power" => cfg.max_charging_power = num()?,
                "arrival_profile" => {
                    let path = match base_dir {
                        Some(dir) => dir.join(value),
                        None => value.into(),
                    };
                    cfg.arrival_profile = read_profile(&std::fs::read_to_string(path)?)?;
                }
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_key_values(&text, path.parent())
    }
}

/// Reads 672 non-negative weights and normalises them to probabilities.
pub fn read_profile(text: &str) -> Result<Vec<f64>> {
    let weights = text
        .split(['\n', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| VppError::Parse(format!("bad arrival weight {s:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if weights.len() != WEEK_BINS {
        return Err(VppError::Config(format!(
            "arrival profile has {} bins, expected {WEEK_BINS}",
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(VppError::Config("arrival weights must be non-negative with positive sum".into()));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// One EV visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingEvent {
    pub ev_id: u32,
    pub arrival_step: usize,
    pub departure_step: usize,
    pub arrival_energy: f64,
}

/// Draws a year of charging events, sorted by arrival.
///
/// The number of arrivals in each step is Poisson with rate
/// `weekly_arrivals * profile[step % 672]`. Park times are normal, truncated
/// to (0, 24] h and rounded to whole steps; arrival energy is a clamped normal
/// state of charge times capacity. Departures never exceed `horizon - 1`.
pub fn generate_events(config: &EventConfig, horizon: usize, seed: u64) -> Result<Vec<ChargingEvent>> {
    config.validate()?;
    if horizon < 2 || config.weekly_arrivals == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let park = Normal::new(config.mean_park, config.std_park)
        .map_err(|e| VppError::Config(e.to_string()))?;
    let soc = Normal::new(config.mean_soc, config.std_soc)
        .map_err(|e| VppError::Config(e.to_string()))?;
    let rates: Vec<Option<Poisson<f64>>> = config
        .arrival_profile
        .iter()
        .map(|p| {
            let lambda = config.weekly_arrivals as f64 * p;
            (lambda > 0.0).then(|| Poisson::new(lambda).expect("finite positive rate"))
        })
        .collect();

    let last = horizon - 1;
    let mut events = Vec::new();
    for step in 0..last {
        let Some(dist) = &rates[step % WEEK_BINS] else {
            continue;
        };
        let count = dist.sample(&mut rng) as usize;
        for _ in 0..count {
            let hours = sample_park_hours(&park, config.mean_park, &mut rng);
            let stay = ((hours / STEP_HOURS).round() as usize).max(1);
            let energy = soc.sample(&mut rng).clamp(0.0, 1.0) * config.ev_capacity;
            let ev_id = events.len() as u32 + 1;
            if ev_id > MAX_EV_ID {
                return Err(VppError::Config("too many events for 31-bit EV ids".into()));
            }
            events.push(ChargingEvent {
                ev_id,
                arrival_step: step,
                departure_step: (step + stay).min(last),
                arrival_energy: energy,
            });
        }
    }
    Ok(events)
}

fn sample_park_hours(dist: &Normal<f64>, mean: f64, rng: &mut impl Rng) -> f64 {
    for _ in 0..1000 {
        let h = dist.sample(rng);
        if h > 0.0 && h <= MAX_PARK_HOURS {
            return h;
        }
    }
    mean
}

/// Station occupancy per step and the station (if any) each event took.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSchedule {
    n_stations: usize,
    horizon: usize,
    events: Vec<ChargingEvent>,
    assignments: Vec<Option<usize>>,
    occupancy: Vec<u32>,
}

impl StationSchedule {
    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn events(&self) -> &[ChargingEvent] {
        &self.events
    }

    /// Station per event, `None` when the event was dropped.
    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    /// EV id occupying `station` at `step`, 0 when empty.
    pub fn occupant(&self, step: usize, station: usize) -> u32 {
        self.occupancy[step * self.n_stations + station]
    }

    pub fn dropped_count(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_none()).count()
    }

    pub fn assigned_count(&self) -> usize {
        self.assignments.len() - self.dropped_count()
    }

    /// Assigned events with their station.
    pub fn assigned(&self) -> impl Iterator<Item = (&ChargingEvent, usize)> {
        self.events
            .iter()
            .zip(&self.assignments)
            .filter_map(|(e, a)| a.map(|s| (e, s)))
    }
}

/// Seats each event at the lowest-index station that is free at its arrival
/// step, dropping it when all stations are busy. A station is occupied over
/// `[arrival_step, departure_step)`.
pub fn assign_stations(
    events: &[ChargingEvent],
    n_stations: usize,
    horizon: usize,
) -> Result<StationSchedule> {
    if n_stations == 0 {
        return Err(VppError::Config("n_stations must be at least 1".into()));
    }
    if events.windows(2).any(|w| w[1].arrival_step < w[0].arrival_step) {
        return Err(VppError::Argument("events must be sorted by arrival".into()));
    }
    if let Some(e) = events
        .iter()
        .find(|e| e.departure_step >= horizon || e.arrival_step >= e.departure_step)
    {
        return Err(VppError::Argument(format!(
            "event {} does not fit in horizon {horizon}",
            e.ev_id
        )));
    }
    let mut free_from = vec![0usize; n_stations];
    let mut occupancy = vec![0u32; horizon * n_stations];
    let mut assignments = Vec::with_capacity(events.len());
    for e in events {
        let slot = (0..n_stations).find(|&s| free_from[s] <= e.arrival_step);
        if let Some(s) = slot {
            free_from[s] = e.departure_step;
            for step in e.arrival_step..e.departure_step {
                occupancy[step * n_stations + s] = e.ev_id;
            }
        }
        assignments.push(slot);
    }
    Ok(StationSchedule {
        n_stations,
        horizon,
        events: events.to_vec(),
        assignments,
        occupancy,
    })
}

/// Runs the uncontrolled baseline: every connected EV charges at
/// `max_charging_power` until it reaches capacity, then idles.
///
/// Timeline per step `t > 0`: seated EVs charge for the interval, the net
/// load of row `t` is recorded, then departures and arrivals of step `t` are
/// processed. Arrivals at step 0 are seated before the first row.
pub fn uncontrolled_baseline(
    schedule: &StationSchedule,
    dataset: &ScenarioDataset,
    config: &EventConfig,
) -> Result<SimulationTrace> {
    let horizon = schedule.horizon();
    if dataset.len() < horizon {
        return Err(VppError::Argument(format!(
            "dataset has {} rows, schedule needs {horizon}",
            dataset.len()
        )));
    }
    let n = schedule.n_stations();
    let cap = config.ev_capacity;
    let pmax = config.max_charging_power;
    let household = dataset.household_power().values();
    let renewable = dataset.renewable_power().values();
    let net = dataset.house_rw_load().values();
    let price = dataset.price().values();

    let mut arrivals: Vec<Vec<(usize, usize)>> = vec![Vec::new(); horizon];
    for (i, (e, s)) in schedule
        .events()
        .iter()
        .zip(schedule.assignments())
        .enumerate()
    {
        if let Some(s) = s {
            arrivals[e.arrival_step].push((i, *s));
        }
    }

    // (event index, energy) per station
    let mut seated: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut steps = Vec::with_capacity(horizon);
    let mut departures = Vec::new();

    for t in 0..horizon {
        let mut station_power = vec![0.0; n];
        if t > 0 {
            for (slot, p) in seated.iter_mut().zip(station_power.iter_mut()) {
                if let Some((_, energy)) = slot {
                    if *energy < cap {
                        let mut power = pmax;
                        if *energy + power * STEP_HOURS >= cap {
                            power = (cap - *energy) / STEP_HOURS;
                            *energy = cap;
                        } else {
                            *energy += power * STEP_HOURS;
                        }
                        *p = power;
                    }
                }
            }
        }
        let ev_power: f64 = station_power.iter().sum();
        let total_load = net[t] + ev_power;

        for (s, slot) in seated.iter_mut().enumerate() {
            if let Some((i, energy)) = *slot {
                let e = &schedule.events()[i];
                if e.departure_step == t {
                    departures.push(DepartureRecord {
                        ev_id: e.ev_id,
                        station: s,
                        arrival_step: e.arrival_step,
                        departure_step: t,
                        arrival_energy: e.arrival_energy,
                        energy,
                    });
                    *slot = None;
                }
            }
        }
        for &(i, s) in &arrivals[t] {
            seated[s] = Some((i, schedule.events()[i].arrival_energy));
        }

        steps.push(TraceStep {
            household: household[t],
            renewable: renewable[t],
            ev_power,
            total_load,
            price: price[t],
            reward: 0.0,
            station_power,
            station_energy: seated.iter().map(|s| s.map_or(0.0, |(_, e)| e)).collect(),
        });
    }

    Ok(SimulationTrace {
        dt: STEP_HOURS,
        n_stations: n,
        seed: 0,
        steps,
        departures,
        dropped_events: schedule.dropped_count(),
    })
}

/// Writes `ev_id,arrival_step,departure_step,arrival_energy_kwh` rows.
pub fn write_events_csv<W: Write>(events: &[ChargingEvent], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ev_id", "arrival_step", "departure_step", "arrival_energy_kwh"])?;
    for e in events {
        w.write_record([
            e.ev_id.to_string(),
            e.arrival_step.to_string(),
            e.departure_step.to_string(),
            e.arrival_energy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{synthesize_scenario, SynthConfig};
    use crate::YEAR_STEPS;

    fn ev(id: u32, a: usize, d: usize, e: f64) -> ChargingEvent {
        ChargingEvent {
            ev_id: id,
            arrival_step: a,
            departure_step: d,
            arrival_energy: e,
        }
    }

    #[test]
    fn no_arrivals_no_events() {
        let cfg = EventConfig {
            weekly_arrivals: 0,
            ..Default::default()
        };
        assert!(generate_events(&cfg, YEAR_STEPS, 1).unwrap().is_empty());
    }

    #[test]
    fn default_year_event_count_and_energy() {
        let cfg = EventConfig::default();
        let events = generate_events(&cfg, YEAR_STEPS, 42).unwrap();
        assert!((988..=1098).contains(&events.len()), "count {}", events.len());
        let mean = events.iter().map(|e| e.arrival_energy).sum::<f64>() / events.len() as f64;
        assert!((48.0..=52.0).contains(&mean), "mean {mean}");
        for w in events.windows(2) {
            assert!(w[0].arrival_step <= w[1].arrival_step);
        }
        for e in &events {
            assert!(e.ev_id >= 1);
            assert!(e.arrival_step < e.departure_step && e.departure_step < YEAR_STEPS);
            assert!(e.departure_step - e.arrival_step <= 96);
            assert!((0.0..=100.0).contains(&e.arrival_energy));
        }
        assert_eq!(events, generate_events(&cfg, YEAR_STEPS, 42).unwrap());
    }

    #[test]
    fn single_event_takes_station_zero() {
        let s = assign_stations(&[ev(1, 3, 10, 50.0)], 4, 20).unwrap();
        assert_eq!(s.assignments(), &[Some(0)]);
        assert_eq!(s.occupant(3, 0), 1);
        assert_eq!(s.occupant(9, 0), 1);
        assert_eq!(s.occupant(10, 0), 0);
        assert_eq!(s.occupant(2, 0), 0);
    }

    #[test]
    fn fifth_simultaneous_arrival_is_dropped() {
        let events: Vec<_> = (1..=5).map(|i| ev(i, 2, 8, 50.0)).collect();
        let s = assign_stations(&events, 4, 20).unwrap();
        assert_eq!(s.assigned_count(), 4);
        assert_eq!(s.dropped_count(), 1);
        assert_eq!(s.assignments()[4], None);
    }

    #[test]
    fn station_turns_over_on_departure_step() {
        let events = vec![ev(1, 0, 5, 50.0), ev(2, 5, 9, 50.0)];
        let s = assign_stations(&events, 1, 10).unwrap();
        assert_eq!(s.assignments(), &[Some(0), Some(0)]);
        assert_eq!(s.occupant(4, 0), 1);
        assert_eq!(s.occupant(5, 0), 2);
    }

    #[test]
    fn unsorted_events_rejected() {
        let events = vec![ev(1, 5, 8, 1.0), ev(2, 2, 8, 1.0)];
        assert!(assign_stations(&events, 4, 20).is_err());
    }

    #[test]
    fn drop_rate_matches_erlang_loss() {
        let cfg = EventConfig::default();
        let events = generate_events(&cfg, YEAR_STEPS, 3).unwrap();
        let s = assign_stations(&events, 4, YEAR_STEPS).unwrap();
        let frac = s.dropped_count() as f64 / events.len() as f64;
        let mean_stay_h = events
            .iter()
            .map(|e| (e.departure_step - e.arrival_step) as f64 * STEP_HOURS)
            .sum::<f64>()
            / events.len() as f64;
        let offered = cfg.weekly_arrivals as f64 / 168.0 * mean_stay_h;
        let erlang_b = (1..=4).fold(1.0, |b, n| offered * b / (n as f64 + offered * b));
        assert!((frac - erlang_b).abs() < 0.04, "dropped {frac}, erlang {erlang_b}");
    }

    #[test]
    fn baseline_charges_to_full_in_nineteen_steps() {
        let data = synthesize_scenario(1, &SynthConfig { steps: 200, ..Default::default() }).unwrap();
        let cfg = EventConfig::default();
        let s = assign_stations(&[ev(1, 10, 106, 50.0)], 4, 200).unwrap();
        let trace = uncontrolled_baseline(&s, &data, &cfg).unwrap();
        assert_eq!(trace.departures.len(), 1);
        assert_eq!(trace.departures[0].energy, 100.0);
        let charging_steps = trace.steps.iter().filter(|st| st.ev_power > 0.0).count();
        assert_eq!(charging_steps, 19);
        assert!(trace.steps.iter().all(|st| st.ev_power >= 0.0));
        let mut last = 0.0;
        for st in &trace.steps[10..106] {
            assert!(st.station_energy[0] >= last);
            last = st.station_energy[0];
        }
    }

    #[test]
    fn empty_schedule_baseline_is_house_load() {
        let data = synthesize_scenario(1, &SynthConfig { steps: 100, ..Default::default() }).unwrap();
        let s = assign_stations(&[], 4, 100).unwrap();
        let trace = uncontrolled_baseline(&s, &data, &EventConfig::default()).unwrap();
        for (st, net) in trace.steps.iter().zip(data.house_rw_load().values()) {
            assert_eq!(st.ev_power, 0.0);
            assert_eq!(st.total_load, *net);
        }
    }

    #[test]
    fn key_value_config() {
        let text = "# elvis\nnum_charging_events: 25\nmean_park: 12.5\nstd_deviation_park: 2\n\
                    mean_soc = 0.4\nstd_deviation_soc: 0.05\nvehicle_types: ignored\n";
        let cfg = EventConfig::from_key_values(text, None).unwrap();
        assert_eq!(cfg.weekly_arrivals, 25);
        assert_eq!(cfg.mean_park, 12.5);
        assert_eq!(cfg.std_park, 2.0);
        assert_eq!(cfg.mean_soc, 0.4);
        assert_eq!(cfg.std_soc, 0.05);
        assert!(EventConfig::from_key_values("mean_park: 30\n", None).is_err());
        assert!(EventConfig::from_key_values("mean_soc: abc\n", None).is_err());
    }

    #[test]
    fn events_csv_header() {
        let mut buf = Vec::new();
        write_events_csv(&[ev(7, 1, 2, 50.5)], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "ev_id,arrival_step,departure_step,arrival_energy_kwh\n7,1,2,50.5\n");
    }
}
