//! Aggregation of simulation traces: grid import/export and cost, departure
//! energies, energy-flow decomposition, self-consumption/autarky and load
//! histograms.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VppError};

/// One row of a simulation trace. Powers in kW, energies in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub household: f64,
    pub renewable: f64,
    /// Signed sum of station powers (charging positive).
    pub ev_power: f64,
    pub total_load: f64,
    pub price: f64,
    pub reward: f64,
    pub station_power: Vec<f64>,
    /// Energy of the EV seated at each station after the step, 0 when empty.
    pub station_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureRecord {
    pub ev_id: u32,
    pub station: usize,
    pub arrival_step: usize,
    pub departure_step: usize,
    /// Energy the EV was seated with.
    pub arrival_energy: f64,
    /// Energy at departure.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub dt: f64,
    pub n_stations: usize,
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    pub departures: Vec<DepartureRecord>,
    pub dropped_events: usize,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Total energy pushed out of EV batteries, kWh.
    pub fn discharged_energy(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.station_power.iter())
            .map(|p| (-p).max(0.0))
            .sum::<f64>()
            * self.dt
    }
}

/// Headline figures of one simulated year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyParameters {
    /// Grid import, kWh.
    pub grid_energy_used: f64,
    /// Renewable energy exported to the grid, kWh.
    pub re2v_unused: f64,
    /// Cost of imported energy at non-negative prices, EUR.
    pub grid_cost: f64,
    pub avg_departure_energy: f64,
    pub cumulative_reward: f64,
    pub charging_event_count: usize,
    /// `sum(total_load * dt)`, import minus export, kWh.
    pub net_energy: f64,
    /// `sum(total_load * dt * price)` with exports credited, EUR.
    pub total_cost_signed: f64,
}

impl KeyParameters {
    /// One `key: value` line per metric.
    pub fn to_key_values(&self) -> String {
        format!(
            "grid_energy_used_kwh: {}\nre2v_unused_kwh: {}\ngrid_cost_eur: {}\n\
             avg_departure_energy_kwh: {}\ncumulative_reward: {}\ncharging_events: {}\n\
             net_energy_kwh: {}\ntotal_cost_signed_eur: {}\n",
            self.grid_energy_used,
            self.re2v_unused,
            self.grid_cost,
            self.avg_departure_energy,
            self.cumulative_reward,
            self.charging_event_count,
            self.net_energy,
            self.total_cost_signed
        )
    }
}

pub fn key_parameters(trace: &SimulationTrace) -> Result<KeyParameters> {
    if trace.steps.is_empty() {
        return Err(VppError::Argument("empty trace".into()));
    }
    let dt = trace.dt;
    let mut import = 0.0;
    let mut export = 0.0;
    let mut cost = 0.0;
    let mut signed_cost = 0.0;
    for s in &trace.steps {
        let energy = s.total_load * dt;
        if energy > 0.0 {
            import += energy;
            cost += energy * s.price.max(0.0);
        } else {
            export -= energy;
        }
        signed_cost += energy * s.price;
    }
    let n = trace.departures.len();
    let avg = if n == 0 {
        0.0
    } else {
        trace.departures.iter().map(|d| d.energy).sum::<f64>() / n as f64
    };
    Ok(KeyParameters {
        grid_energy_used: import,
        re2v_unused: export,
        grid_cost: cost,
        avg_departure_energy: avg,
        cumulative_reward: trace.cumulative_reward(),
        charging_event_count: n,
        net_energy: import - export,
        total_cost_signed: signed_cost,
    })
}

/// Energy moved along each source-to-sink path, kWh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowDecomposition {
    pub re2house: f64,
    pub re2ev: f64,
    pub ev2house: f64,
    pub ev2ev: f64,
    pub re2grid: f64,
    pub grid2house: f64,
    pub grid2ev: f64,
    pub ev2grid: f64,
}

impl FlowDecomposition {
    pub fn renewable_out(&self) -> f64 {
        self.re2house + self.re2ev + self.re2grid
    }

    pub fn ev_out(&self) -> f64 {
        self.ev2house + self.ev2ev + self.ev2grid
    }

    pub fn grid_out(&self) -> f64 {
        self.grid2house + self.grid2ev
    }

    pub fn house_in(&self) -> f64 {
        self.re2house + self.ev2house + self.grid2house
    }

    pub fn ev_in(&self) -> f64 {
        self.re2ev + self.ev2ev + self.grid2ev
    }

    pub fn grid_in(&self) -> f64 {
        self.re2grid + self.ev2grid
    }

    pub fn total_supplied(&self) -> f64 {
        self.renewable_out() + self.ev_out() + self.grid_out()
    }

    pub fn total_demanded(&self) -> f64 {
        self.house_in() + self.ev_in() + self.grid_in()
    }

    fn add_scaled(&mut self, o: &FlowDecomposition, k: f64) {
        self.re2house += o.re2house * k;
        self.re2ev += o.re2ev * k;
        self.ev2house += o.ev2house * k;
        self.ev2ev += o.ev2ev * k;
        self.re2grid += o.re2grid * k;
        self.grid2house += o.grid2house * k;
        self.grid2ev += o.grid2ev * k;
        self.ev2grid += o.ev2grid * k;
    }
}

/// Splits one step's powers (kW) along the fixed merit order:
/// renewable to house, renewable to EV, EV to house, EV to EV, then the
/// remainders go to or come from the grid.
pub fn step_flows(renewable: f64, household: f64, station_power: &[f64]) -> FlowDecomposition {
    let charge: f64 = station_power.iter().map(|p| p.max(0.0)).sum();
    let discharge: f64 = station_power.iter().map(|p| (-p).max(0.0)).sum();
    let mut re = renewable.max(0.0);
    let mut house = household.max(0.0);
    let mut ev_sink = charge;
    let mut ev_src = discharge;

    let re2house = re.min(house);
    re -= re2house;
    house -= re2house;
    let re2ev = re.min(ev_sink);
    re -= re2ev;
    ev_sink -= re2ev;
    let ev2house = ev_src.min(house);
    ev_src -= ev2house;
    house -= ev2house;
    let ev2ev = ev_src.min(ev_sink);
    ev_src -= ev2ev;
    ev_sink -= ev2ev;

    FlowDecomposition {
        re2house,
        re2ev,
        ev2house,
        ev2ev,
        re2grid: re,
        grid2house: house,
        grid2ev: ev_sink,
        ev2grid: ev_src,
    }
}

pub fn flow_decomposition(trace: &SimulationTrace) -> FlowDecomposition {
    let mut total = FlowDecomposition::default();
    for s in &trace.steps {
        let f = step_flows(s.renewable, s.household, &s.station_power);
        total.add_scaled(&f, trace.dt);
    }
    total
}

/// Self-consumption and autarky rates. `None` where the denominator is zero.
///
/// Self-consumption is the share of renewable production not exported.
/// Autarky is the share of demand (households plus EV charging) served by
/// local sources: renewables directly or energy buffered in EV batteries.
pub fn self_consumption_autarky(trace: &SimulationTrace) -> (Option<f64>, Option<f64>) {
    let flows = flow_decomposition(trace);
    let production = flows.renewable_out();
    let demand = flows.house_in() + flows.ev_in();
    let self_consumption = (production > 0.0).then(|| (production - flows.re2grid) / production);
    let local = flows.re2house + flows.re2ev + flows.ev2house + flows.ev2ev;
    let autarky = (demand > 0.0).then(|| (local / demand).clamp(0.0, 1.0));
    (self_consumption.map(|v| v.clamp(0.0, 1.0)), autarky)
}

pub const BALANCED_BANDS: [f64; 2] = [0.05, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Steps with |load| <= 0.05 kW.
    pub balanced_005: usize,
    /// Steps with |load| <= 0.1 kW.
    pub balanced_01: usize,
}

/// 0.5 kW bins from -25 to +25 kW.
pub fn default_load_edges() -> Vec<f64> {
    (0..=100).map(|i| -25.0 + 0.5 * i as f64).collect()
}

/// Counts total-load values per bin; values outside the edges land in the
/// first or last bin so that the counts always sum to the trace length.
pub fn load_histogram(trace: &SimulationTrace, edges: &[f64]) -> Result<LoadHistogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VppError::Argument("edges must be strictly increasing, at least two".into()));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    let mut b005 = 0;
    let mut b01 = 0;
    for s in &trace.steps {
        let x = s.total_load;
        let i = edges.partition_point(|e| *e <= x);
        counts[i.saturating_sub(1).min(bins - 1)] += 1;
        if x.abs() <= BALANCED_BANDS[0] {
            b005 += 1;
        }
        if x.abs() <= BALANCED_BANDS[1] {
            b01 += 1;
        }
    }
    Ok(LoadHistogram {
        edges: edges.to_vec(),
        counts,
        balanced_005: b005,
        balanced_01: b01,
    })
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distribution of departure energies: quartiles, Tukey fences and battery
/// level bands (<22.5 %, 22.5-52.5 %, 52.5-97.5 %, >=97.5 %).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureSummary {
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub band_counts: [usize; 4],
}

pub const BATTERY_BAND_EDGES: [f64; 3] = [0.225, 0.525, 0.975];

/// Index of the battery band `energy` falls in.
pub fn battery_band(energy: f64, capacity: f64) -> usize {
    let frac = energy / capacity;
    BATTERY_BAND_EDGES.iter().take_while(|b| frac >= **b).count()
}

pub fn departure_summary(energies: &[f64], capacity: f64) -> DepartureSummary {
    let mut sorted = energies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = sorted
        .iter()
        .copied()
        .find(|v| *v >= q1 - 1.5 * iqr)
        .unwrap_or(f64::NAN);
    let upper_fence = sorted
        .iter()
        .rev()
        .copied()
        .find(|v| *v <= q3 + 1.5 * iqr)
        .unwrap_or(f64::NAN);
    let mut band_counts = [0usize; 4];
    for &e in energies {
        band_counts[battery_band(e, capacity)] += 1;
    }
    DepartureSummary {
        count: energies.len(),
        q1,
        median,
        q3,
        lower_fence,
        upper_fence,
        band_counts,
    }
}

fn trace_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "household_kw",
        "renewable_kw",
        "ev_kw",
        "total_load_kw",
        "price_eur_kwh",
        "reward",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..n).map(|i| format!("power_{i}_kw")));
    h.extend((0..n).map(|i| format!("energy_{i}_kwh")));
    h
}

/// One row per step: `step,household_kw,renewable_kw,ev_kw,total_load_kw,
/// price_eur_kwh,reward,power_<i>_kw...,energy_<i>_kwh...`.
pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trace_header(trace.n_stations))?;
    for (i, s) in trace.steps.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            s.household.to_string(),
            s.renewable.to_string(),
            s.ev_power.to_string(),
            s.total_load.to_string(),
            s.price.to_string(),
            s.reward.to_string(),
        ];
        row.extend(s.station_power.iter().map(f64::to_string));
        row.extend(s.station_energy.iter().map(f64::to_string));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_departures_csv<W: Write>(trace: &SimulationTrace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "ev_id",
        "station",
        "arrival_step",
        "departure_step",
        "arrival_energy_kwh",
        "departure_energy_kwh",
    ])?;
    for d in &trace.departures {
        w.write_record([
            d.ev_id.to_string(),
            d.station.to_string(),
            d.arrival_step.to_string(),
            d.departure_step.to_string(),
            d.arrival_energy.to_string(),
            d.energy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| VppError::Parse(format!("bad field {i} in {rec:?}")))
}

/// Reads back a trace written by [`write_trace_csv`] and [`write_departures_csv`].
pub fn read_trace_csv<R1: Read, R2: Read>(steps: R1, departures: R2, dt: f64) -> Result<SimulationTrace> {
    let mut rdr = csv::Reader::from_reader(steps);
    let width = rdr.headers()?.len();
    if width < 7 || (width - 7) % 2 != 0 {
        return Err(VppError::Schema(format!("unexpected trace width {width}")));
    }
    let n = (width - 7) / 2;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(TraceStep {
            household: field(&rec, 1)?,
            renewable: field(&rec, 2)?,
            ev_power: field(&rec, 3)?,
            total_load: field(&rec, 4)?,
            price: field(&rec, 5)?,
            reward: field(&rec, 6)?,
            station_power: (0..n).map(|i| field(&rec, 7 + i)).collect::<Result<_>>()?,
            station_energy: (0..n).map(|i| field(&rec, 7 + n + i)).collect::<Result<_>>()?,
        });
    }
    let mut deps = Vec::new();
    let mut rdr = csv::Reader::from_reader(departures);
    for rec in rdr.records() {
        let rec = rec?;
        deps.push(DepartureRecord {
            ev_id: field(&rec, 0)?,
            station: field(&rec, 1)?,
            arrival_step: field(&rec, 2)?,
            departure_step: field(&rec, 3)?,
            arrival_energy: field(&rec, 4)?,
            energy: field(&rec, 5)?,
        });
    }
    Ok(SimulationTrace {
        dt,
        n_stations: n,
        seed: 0,
        steps: out,
        departures: deps,
        dropped_events: 0,
    })
}
