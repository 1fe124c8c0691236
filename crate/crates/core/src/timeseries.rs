//! Scenario datasets: one simulated year of quarter-hour household, solar,
//! wind and price series, plus the derived renewable and net house load.
//!
//! Power columns are in kW, prices in EUR/kWh. Renewable supply is stored as a
//! positive quantity; `house_rw_load` follows the net-load sign convention where
//! supply counts negative (`household - renewable`).

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VppError};
use crate::{STEP_HOURS, YEAR_STEPS};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

pub const COL_TIME: &str = "time";
pub const COL_HOUSEHOLD: &str = "household_power";
pub const COL_SOLAR: &str = "solar_power";
pub const COL_WIND: &str = "wind_power";
pub const COL_PRICE: &str = "EUR/kWh";
pub const COL_RENEWABLE: &str = "renewable_power";
pub const COL_HOUSE_RW: &str = "House&RW_load";

const STEP_MINUTES: i64 = 15;

/// Physical unit attached to a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    Kilowatt,
    EurPerKwh,
}

/// A quarter-hour series with a declared unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    start: NaiveDateTime,
    unit: Unit,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(start: NaiveDateTime, unit: Unit, values: Vec<f64>) -> Self {
        Self {
            start,
            unit,
            values,
        }
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn step(&self) -> Duration {
        Duration::minutes(STEP_MINUTES)
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Energy (kWh) of a power series, `sum(value * dt)`.
    pub fn energy(&self) -> f64 {
        self.values.iter().sum::<f64>() * STEP_HOURS
    }
}

/// Household, solar, wind and price series plus the two derived columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    timestamps: Vec<NaiveDateTime>,
    household_power: TimeSeries,
    solar_power: TimeSeries,
    wind_power: TimeSeries,
    price: TimeSeries,
    renewable_power: TimeSeries,
    house_rw_load: TimeSeries,
}

impl ScenarioDataset {
    /// Builds a dataset from the four base columns and recomputes the derived ones.
    pub fn from_columns(
        timestamps: Vec<NaiveDateTime>,
        household: Vec<f64>,
        solar: Vec<f64>,
        wind: Vec<f64>,
        price: Vec<f64>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if n == 0 {
            return Err(VppError::Schema("dataset has no rows".into()));
        }
        for (name, col) in [
            (COL_HOUSEHOLD, &household),
            (COL_SOLAR, &solar),
            (COL_WIND, &wind),
            (COL_PRICE, &price),
        ] {
            if col.len() != n {
                return Err(VppError::Schema(format!(
                    "column {name} has {} rows, expected {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(VppError::Schema(format!("column {name} has non-finite values")));
            }
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(VppError::Ordering(w[1].format(TIMESTAMP_FORMAT).to_string()));
        }

        let renewable: Vec<f64> = solar.iter().zip(&wind).map(|(s, w)| s + w).collect();
        let house_rw: Vec<f64> = household
            .iter()
            .zip(&renewable)
            .map(|(h, r)| h - r)
            .collect();
        let start = timestamps[0];
        let kw = |v| TimeSeries::new(start, Unit::Kilowatt, v);
        Ok(Self {
            timestamps,
            household_power: kw(household),
            solar_power: kw(solar),
            wind_power: kw(wind),
            price: TimeSeries::new(start, Unit::EurPerKwh, price),
            renewable_power: kw(renewable),
            house_rw_load: kw(house_rw),
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn household_power(&self) -> &TimeSeries {
        &self.household_power
    }

    pub fn solar_power(&self) -> &TimeSeries {
        &self.solar_power
    }

    pub fn wind_power(&self) -> &TimeSeries {
        &self.wind_power
    }

    pub fn price(&self) -> &TimeSeries {
        &self.price
    }

    pub fn renewable_power(&self) -> &TimeSeries {
        &self.renewable_power
    }

    pub fn house_rw_load(&self) -> &TimeSeries {
        &self.house_rw_load
    }

    /// Keeps only the first `len` rows.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(VppError::Argument(format!(
                "cannot truncate {} rows to {len}",
                self.len()
            )));
        }
        Self::from_columns(
            self.timestamps[..len].to_vec(),
            self.household_power.values[..len].to_vec(),
            self.solar_power.values[..len].to_vec(),
            self.wind_power.values[..len].to_vec(),
            self.price.values[..len].to_vec(),
        )
    }

    /// Order-sensitive FNV-1a checksum over every value bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for t in &self.timestamps {
            eat(t.and_utc().timestamp() as u64);
        }
        for s in [
            &self.household_power,
            &self.solar_power,
            &self.wind_power,
            &self.price,
            &self.renewable_power,
            &self.house_rw_load,
        ] {
            for v in &s.values {
                eat(v.to_bits());
            }
        }
        h
    }
}

/// What to do with 29 February rows of a leap year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeapDayPolicy {
    #[default]
    Drop,
    Keep,
}

/// How one quarter-hour bin is aggregated from finer samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Last,
}

fn floor_to_step(t: NaiveDateTime) -> NaiveDateTime {
    let minute = t.minute() as i64 - t.minute() as i64 % STEP_MINUTES;
    t.date()
        .and_hms_opt(t.hour(), minute as u32, 0)
        .expect("valid floored time")
}

/// Resamples irregular or finer samples to quarter-hour bins.
///
/// Bins are aligned on the quarter hour containing the first sample. Bins that
/// receive no sample carry the previous bin's value forward, which also
/// upsamples coarser (e.g. hourly) inputs.
pub fn resample_quarter_hour(
    times: &[NaiveDateTime],
    values: &[f64],
    how: Aggregation,
) -> (NaiveDateTime, Vec<f64>) {
    assert_eq!(times.len(), values.len());
    assert!(!times.is_empty());
    let origin = floor_to_step(times[0]);
    let bin_of = |t: NaiveDateTime| ((t - origin).num_seconds() / (STEP_MINUTES * 60)) as usize;
    let n_bins = bin_of(*times.last().unwrap()) + 1;

    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut last = vec![0.0; n_bins];
    for (&t, &v) in times.iter().zip(values) {
        let b = bin_of(t);
        sums[b] += v;
        counts[b] += 1;
        last[b] = v;
    }
    let mut out = Vec::with_capacity(n_bins);
    let mut prev = values[0];
    for b in 0..n_bins {
        let v = if counts[b] == 0 {
            prev
        } else {
            match how {
                Aggregation::Mean => sums[b] / counts[b] as f64,
                Aggregation::Last => last[b],
            }
        };
        out.push(v);
        prev = v;
    }
    (origin, out)
}

/// Replaces missing entries by the last valid value; leading gaps take the
/// first valid value.
fn forward_fill(name: &str, col: Vec<Option<f64>>) -> Result<Vec<f64>> {
    let first = col
        .iter()
        .flatten()
        .copied()
        .next()
        .ok_or_else(|| VppError::Schema(format!("column {name} has no readable values")))?;
    let mut prev = first;
    Ok(col
        .into_iter()
        .map(|v| {
            if let Some(v) = v {
                prev = v;
            }
            prev
        })
        .collect())
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a scenario CSV (`time,household_power,solar_power,wind_power,EUR/kWh`)
/// and preprocesses it to exactly one year of quarter-hour rows.
pub fn load_scenario(path: impl AsRef<Path>, policy: LeapDayPolicy) -> Result<ScenarioDataset> {
    let file = std::fs::File::open(path)?;
    read_scenario(file, policy)
}

/// Same as [`load_scenario`] for any reader.
pub fn read_scenario<R: Read>(reader: R, policy: LeapDayPolicy) -> Result<ScenarioDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = [COL_TIME, COL_HOUSEHOLD, COL_SOLAR, COL_WIND, COL_PRICE];
    let missing: Vec<&str> = required.iter().copied().filter(|c| find(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(VppError::Schema(format!(
            "missing mandatory column(s): {}",
            missing.join(", ")
        )));
    }
    let idx: Vec<usize> = required.iter().map(|c| find(c).unwrap()).collect();

    let mut times = Vec::new();
    let mut cols: [Vec<Option<f64>>; 4] = Default::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw_time = rec.get(idx[0]).unwrap_or("");
        let t = NaiveDateTime::parse_from_str(raw_time, TIMESTAMP_FORMAT).map_err(|e| {
            VppError::Parse(format!("row {}: bad timestamp {raw_time:?}: {e}", row + 2))
        })?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(VppError::Ordering(raw_time.to_string()));
            }
        }
        times.push(t);
        for (c, &i) in cols.iter_mut().zip(&idx[1..]) {
            c.push(rec.get(i).and_then(parse_cell));
        }
    }
    if times.is_empty() {
        return Err(VppError::Length {
            expected: YEAR_STEPS,
            actual: 0,
        });
    }

    let [household, solar, wind, price] = cols;
    let household = forward_fill(COL_HOUSEHOLD, household)?;
    let solar = forward_fill(COL_SOLAR, solar)?;
    let wind = forward_fill(COL_WIND, wind)?;
    let price = forward_fill(COL_PRICE, price)?;

    let (origin, household) = resample_quarter_hour(&times, &household, Aggregation::Mean);
    let (_, solar) = resample_quarter_hour(&times, &solar, Aggregation::Mean);
    let (_, wind) = resample_quarter_hour(&times, &wind, Aggregation::Mean);
    let (_, price) = resample_quarter_hour(&times, &price, Aggregation::Last);

    let stamps: Vec<NaiveDateTime> = (0..household.len())
        .map(|i| origin + Duration::minutes(STEP_MINUTES * i as i64))
        .collect();
    let keep: Vec<bool> = stamps
        .iter()
        .map(|t| policy == LeapDayPolicy::Keep || !(t.month() == 2 && t.day() == 29))
        .collect();
    let pick = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .zip(&keep)
            .filter_map(|(x, &k)| k.then_some(x))
            .collect()
    };
    let stamps: Vec<NaiveDateTime> = stamps
        .into_iter()
        .zip(&keep)
        .filter_map(|(t, &k)| k.then_some(t))
        .collect();
    if stamps.len() != YEAR_STEPS {
        return Err(VppError::Length {
            expected: YEAR_STEPS,
            actual: stamps.len(),
        });
    }
    ScenarioDataset::from_columns(stamps, pick(household), pick(solar), pick(wind), pick(price))
}

/// Writes the dataset with its derived columns, one row per quarter hour.
pub fn write_scenario<W: Write>(dataset: &ScenarioDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        COL_TIME,
        COL_HOUSEHOLD,
        COL_SOLAR,
        COL_WIND,
        COL_PRICE,
        COL_RENEWABLE,
        COL_HOUSE_RW,
    ])?;
    for i in 0..dataset.len() {
        w.write_record([
            dataset.timestamps[i].format(TIMESTAMP_FORMAT).to_string(),
            dataset.household_power.values[i].to_string(),
            dataset.solar_power.values[i].to_string(),
            dataset.wind_power.values[i].to_string(),
            dataset.price.values[i].to_string(),
            dataset.renewable_power.values[i].to_string(),
            dataset.house_rw_load.values[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Capacities and shape of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// PV peak output, kW (40 panels x 400 W).
    pub pv_peak_kw: f64,
    /// Wind peak output, kW (8 turbines x 1.5 kW).
    pub wind_peak_kw: f64,
    /// Mean aggregate demand of the four households, kW.
    pub household_mean_kw: f64,
    /// Mean day-ahead price, EUR/kWh.
    pub price_mean: f64,
    pub start: NaiveDateTime,
    pub steps: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pv_peak_kw: 16.0,
            wind_peak_kw: 12.0,
            household_mean_kw: 2.5,
            price_mean: 0.05,
            start: NaiveDate::from_ymd_opt(2018, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            steps: YEAR_STEPS,
        }
    }
}

pub const MAX_PV_PEAK_KW: f64 = 16.0;
pub const MAX_WIND_PEAK_KW: f64 = 12.0;

fn gauss(x: f64, mu: f64, width: f64) -> f64 {
    (-0.5 * ((x - mu) / width).powi(2)).exp()
}

/// Generates a deterministic synthetic year standing in for measured data.
pub fn synthesize_scenario(seed: u64, config: &SynthConfig) -> Result<ScenarioDataset> {
    if !(config.pv_peak_kw > 0.0 && config.wind_peak_kw > 0.0 && config.household_mean_kw > 0.0)
    {
        return Err(VppError::Config("capacities must be positive".into()));
    }
    if config.pv_peak_kw > MAX_PV_PEAK_KW || config.wind_peak_kw > MAX_WIND_PEAK_KW {
        return Err(VppError::Config(format!(
            "PV peak must be <= {MAX_PV_PEAK_KW} kW and wind peak <= {MAX_WIND_PEAK_KW} kW"
        )));
    }
    if config.steps == 0 {
        return Err(VppError::Config("steps must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let n = config.steps;

    // Daily household shape (two peaks), normalised to mean 1.
    let day_shape: Vec<f64> = (0..96)
        .map(|q| {
            let h = q as f64 / 4.0;
            0.45 + 0.6 * gauss(h, 7.5, 1.2) + 1.0 * gauss(h, 19.0, 2.0)
        })
        .collect();
    let shape_mean = day_shape.iter().sum::<f64>() / 96.0;

    let mut timestamps = Vec::with_capacity(n);
    let mut household = Vec::with_capacity(n);
    let mut solar = Vec::with_capacity(n);
    let mut wind = Vec::with_capacity(n);
    let mut price = Vec::with_capacity(n);

    let mut cloud = 0.6;
    let mut current_day = None;
    let mut wind_state: f64 = std_normal.sample(&mut rng);
    let mut price_state = 0.0;
    let phi_wind: f64 = 0.985;
    let phi_price: f64 = 0.95;

    for i in 0..n {
        let t = config.start + Duration::minutes(STEP_MINUTES * i as i64);
        let doy = t.ordinal0() as f64;
        let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
        let season = (2.0 * PI * (doy - 172.0) / 365.0).cos(); // +1 midsummer, -1 midwinter

        if current_day != Some(t.date()) {
            current_day = Some(t.date());
            let u: f64 = rng.random();
            cloud = 0.2 + 0.8 * u.sqrt();
        }

        // Solar: clipped diurnal arc, longer and higher in summer.
        let half_daylight = 6.1 + 2.2 * season;
        let from_noon = (hour - 12.5).abs();
        let arc = if from_noon < half_daylight {
            (0.5 * PI * from_noon / half_daylight).cos()
        } else {
            0.0
        };
        let amplitude = 0.55 + 0.45 * season;
        let flicker = 1.0 + 0.05 * std_normal.sample(&mut rng);
        let s = (config.pv_peak_kw * 0.9 * amplitude * arc * cloud * flicker)
            .clamp(0.0, config.pv_peak_kw);
        solar.push(if arc > 0.0 { s } else { 0.0 });

        // Wind: bounded AR(1), slightly stronger in winter.
        wind_state = phi_wind * wind_state
            + (1.0 - phi_wind * phi_wind).sqrt() * std_normal.sample(&mut rng);
        let w = (0.33 - 0.06 * season + 0.28 * wind_state).clamp(0.0, 1.0);
        wind.push(config.wind_peak_kw * w);

        // Households: two-peak profile with winter uplift and multiplicative noise.
        let q = (hour * 4.0) as usize % 96;
        let base = config.household_mean_kw * day_shape[q] / shape_mean * (1.0 - 0.15 * season);
        let noise = 1.0 + 0.15 * std_normal.sample(&mut rng);
        household.push((base * noise).max(0.05 * config.household_mean_kw));

        // Price: morning/evening peaks, a midday dip, autocorrelated noise.
        price_state = phi_price * price_state
            + (1.0 - phi_price * phi_price).sqrt() * std_normal.sample(&mut rng);
        let curve = 1.0 + 0.35 * gauss(hour, 8.0, 1.5) + 0.5 * gauss(hour, 19.0, 2.0)
            - 0.4 * gauss(hour, 13.0, 2.0) * (0.5 + 0.5 * season);
        price.push(config.price_mean * curve + 0.02 * price_state);

        timestamps.push(t);
    }

    ScenarioDataset::from_columns(timestamps, household, solar, wind, price)
}

/// Which series receive per-episode noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_fraction: f64,
    pub renewables: bool,
    pub price: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_fraction: 0.10,
            renewables: true,
            price: true,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_fraction: 0.0,
            renewables: false,
            price: false,
        }
    }
}

fn add_noise(values: &[f64], sigma: f64, rng: &mut ChaCha8Rng, floor: Option<f64>) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    values
        .iter()
        .map(|v| {
            let x = v + normal.sample(rng);
            match floor {
                Some(f) => x.max(f),
                None => x,
            }
        })
        .collect()
}

/// Returns a noisy copy of `dataset`: zero-mean Gaussian noise with
/// `sigma = sigma_fraction * max(series)` on solar, wind (clamped at 0) and price.
/// Household load is never perturbed.
pub fn apply_episode_noise(
    dataset: &ScenarioDataset,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<ScenarioDataset> {
    if !(spec.sigma_fraction >= 0.0) {
        return Err(VppError::Config("sigma_fraction must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_of = |s: &TimeSeries| spec.sigma_fraction * s.max().abs();

    let (solar, wind) = if spec.renewables {
        let solar = add_noise(
            dataset.solar_power.values(),
            sigma_of(&dataset.solar_power),
            &mut rng,
            Some(0.0),
        );
        let wind = add_noise(
            dataset.wind_power.values(),
            sigma_of(&dataset.wind_power),
            &mut rng,
            Some(0.0),
        );
        (solar, wind)
    } else {
        (
            dataset.solar_power.values.clone(),
            dataset.wind_power.values.clone(),
        )
    };
    let price = if spec.price {
        add_noise(dataset.price.values(), sigma_of(&dataset.price), &mut rng, None)
    } else {
        dataset.price.values.clone()
    };
    ScenarioDataset::from_columns(
        dataset.timestamps.clone(),
        dataset.household_power.values.clone(),
        solar,
        wind,
        price,
    )
}

/// Aggregate energy figures of a dataset and the best reachable average EV
/// energy at departure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetGoal {
    pub total_supply_energy: f64,
    pub total_demand_energy: f64,
    pub surplus_energy: f64,
    pub max_avg_departure_energy: f64,
    pub mean_arrival_energy: f64,
    pub event_count: usize,
}

/// Average arrival energy plus an equal share of the renewable surplus per
/// charging event, clamped to `[0, ev_capacity]`.
pub fn max_avg_departure_energy(
    mean_arrival_energy: f64,
    surplus_energy: f64,
    event_count: usize,
    ev_capacity: f64,
) -> Result<f64> {
    if event_count == 0 {
        return Err(VppError::Argument("event_count must be positive".into()));
    }
    Ok((mean_arrival_energy + surplus_energy / event_count as f64).clamp(0.0, ev_capacity))
}

pub fn dataset_goal(
    dataset: &ScenarioDataset,
    event_count: usize,
    mean_arrival_soc: f64,
    ev_capacity: f64,
) -> Result<DatasetGoal> {
    if !(0.0..=1.0).contains(&mean_arrival_soc) {
        return Err(VppError::Argument(format!(
            "mean_arrival_soc {mean_arrival_soc} outside [0, 1]"
        )));
    }
    let supply = dataset.renewable_power.energy();
    let demand = dataset.household_power.energy();
    let surplus = supply - demand;
    let mean_arrival_energy = mean_arrival_soc * ev_capacity;
    let max_avg =
        max_avg_departure_energy(mean_arrival_energy, surplus, event_count, ev_capacity)?;
    Ok(DatasetGoal {
        total_supply_energy: supply,
        total_demand_energy: demand,
        surplus_energy: surplus,
        max_avg_departure_energy: max_avg,
        mean_arrival_energy,
        event_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).unwrap()
    }

    fn year_csv(year: i32, minutes: i64, extra_col: bool) -> String {
        let start = NaiveDate::from_ymd_opt(year, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let end = NaiveDate::from_ymd_opt(year + 1, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let mut out = String::from("time,household_power,solar_power,wind_power,EUR/kWh");
        if extra_col {
            out.push_str(",comment");
        }
        out.push('\n');
        let mut t = start;
        let mut i = 0u64;
        while t <= end {
            out.push_str(&format!(
                "{},{},{},{},{}",
                t.format(TIMESTAMP_FORMAT),
                1.0 + (i % 7) as f64 * 0.1,
                (i % 5) as f64,
                2.0,
                0.05
            ));
            if extra_col {
                out.push_str(",x");
            }
            out.push('\n');
            t += Duration::minutes(minutes);
            i += 1;
        }
        out
    }

    #[test]
    fn fig_3_6_first_row_derivations() {
        let d = ScenarioDataset::from_columns(
            vec![ts("2018-01-01 00:00:00")],
            vec![4.006786],
            vec![0.0],
            vec![7.644],
            vec![-0.00527],
        )
        .unwrap();
        assert_eq!(d.renewable_power().values()[0], 7.644);
        assert!((d.house_rw_load().values()[0] - -3.637214).abs() < 1e-9);
    }

    #[test]
    fn quarter_hour_year_loads_unchanged() {
        let csv = year_csv(2018, 15, true);
        let d = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap();
        assert_eq!(d.len(), YEAR_STEPS);
        assert_eq!(d.household_power().values()[3], 1.3);
        assert_eq!(d.solar_power().values()[4], 4.0);
        assert_eq!(d.timestamps()[0], ts("2018-01-01 00:00:00"));
        assert_eq!(d.timestamps()[YEAR_STEPS - 1], ts("2019-01-01 00:00:00"));
    }

    #[test]
    fn three_minute_readings_average_to_quarter_hours() {
        let csv = year_csv(2018, 3, false);
        let d = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap();
        assert_eq!(d.len(), YEAR_STEPS);
        // First bin holds samples i = 0..5: household 1.0..1.4, mean 1.2.
        assert!((d.household_power().values()[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn hourly_prices_are_held_across_quarters() {
        let csv = year_csv(2018, 60, false);
        let d = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap();
        assert_eq!(d.len(), YEAR_STEPS);
        assert_eq!(d.household_power().values()[1], 1.0);
        assert_eq!(d.household_power().values()[4], 1.1);
    }

    #[test]
    fn leap_year_drops_feb_29() {
        let csv = year_csv(2020, 15, false);
        assert_eq!(csv.lines().count() - 1, 366 * 96 + 1);
        let d = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap();
        assert_eq!(d.len(), YEAR_STEPS);
        assert!(d.timestamps().iter().all(|t| !(t.month() == 2 && t.day() == 29)));

        let err = read_scenario(csv.as_bytes(), LeapDayPolicy::Keep).unwrap_err();
        assert!(matches!(
            err,
            VppError::Length {
                expected: YEAR_STEPS,
                actual: 35137
            }
        ));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "time,household_power,solar_power,EUR/kWh\n2018-01-01 00:00:00,1,2,3\n";
        let err = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap_err();
        match err {
            VppError::Schema(msg) => assert!(msg.contains("wind_power")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_file_reports_actual_length() {
        let csv = "time,household_power,solar_power,wind_power,EUR/kWh\n\
                   2018-01-01 00:00:00,1,2,3,0.1\n\
                   2018-01-01 00:15:00,1,2,3,0.1\n";
        let err = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap_err();
        assert!(matches!(err, VppError::Length { actual: 2, .. }));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let csv = "time,household_power,solar_power,wind_power,EUR/kWh\n\
                   2018-01-01 00:15:00,1,2,3,0.1\n\
                   2018-01-01 00:00:00,1,2,3,0.1\n";
        let err = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap_err();
        assert!(matches!(err, VppError::Ordering(_)));
    }

    #[test]
    fn gaps_are_forward_filled() {
        let mut csv = year_csv(2018, 15, false);
        // Blank out household in row 3 (i = 2) and make solar unreadable there.
        let mut lines: Vec<String> = csv.lines().map(String::from).collect();
        lines[3] = "2018-01-01 00:30:00,,n/a,2,0.05".into();
        csv = lines.join("\n");
        let d = read_scenario(csv.as_bytes(), LeapDayPolicy::Drop).unwrap();
        assert_eq!(d.household_power().values()[2], 1.1);
        assert_eq!(d.solar_power().values()[2], 1.0);
    }

    #[test]
    fn resampling_preserves_energy() {
        let start = ts("2018-03-01 00:00:00");
        let times: Vec<_> = (0..5 * 96).map(|i| start + Duration::minutes(3 * i)).collect();
        let values: Vec<f64> = (0..times.len()).map(|i| ((i * 37) % 11) as f64 * 0.7).collect();
        let (_, q) = resample_quarter_hour(&times, &values, Aggregation::Mean);
        assert_eq!(q.len(), 96);
        let original: f64 = values.iter().sum::<f64>() * 3.0 / 60.0;
        let resampled: f64 = q.iter().sum::<f64>() * 0.25;
        assert!(((original - resampled) / original).abs() < 1e-6);
    }

    #[test]
    fn synthetic_is_deterministic_and_capped() {
        let cfg = SynthConfig::default();
        let a = synthesize_scenario(7, &cfg).unwrap();
        let b = synthesize_scenario(7, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), YEAR_STEPS);
        assert!(a.solar_power().max() <= 16.0);
        assert!(a.wind_power().max() <= 12.0);
        for (t, s) in a.timestamps().iter().zip(a.solar_power().values()) {
            if t.hour() == 0 && t.minute() == 0 {
                assert_eq!(*s, 0.0);
            }
        }
        assert!(a.household_power().values().iter().all(|&h| h >= 0.0));
        let c = synthesize_scenario(8, &cfg).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn synthetic_rejects_bad_capacities() {
        let cfg = SynthConfig {
            pv_peak_kw: 0.0,
            ..Default::default()
        };
        assert!(matches!(synthesize_scenario(1, &cfg), Err(VppError::Config(_))));
        let cfg = SynthConfig {
            wind_peak_kw: 13.0,
            ..Default::default()
        };
        assert!(matches!(synthesize_scenario(1, &cfg), Err(VppError::Config(_))));
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = synthesize_scenario(1, &SynthConfig::default()).unwrap();
        let spec = NoiseSpec {
            sigma_fraction: 0.0,
            ..Default::default()
        };
        assert_eq!(apply_episode_noise(&d, &spec, 99).unwrap(), d);
    }

    #[test]
    fn noise_leaves_input_and_household_untouched() {
        let d = synthesize_scenario(1, &SynthConfig::default()).unwrap();
        let before = d.checksum();
        let noisy = apply_episode_noise(&d, &NoiseSpec::default(), 5).unwrap();
        assert_eq!(d.checksum(), before);
        assert_eq!(noisy.household_power(), d.household_power());
        assert_ne!(noisy.price(), d.price());
        assert!(noisy.solar_power().values().iter().all(|&v| v >= 0.0));
        assert!(noisy.wind_power().values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn price_noise_sigma_and_mean() {
        // Constant price with max 12: sigma must be 1.2, mean within 4 sigma / sqrt(N).
        let n = YEAR_STEPS;
        let start = ts("2018-01-01 00:00:00");
        let stamps: Vec<_> = (0..n).map(|i| start + Duration::minutes(15 * i as i64)).collect();
        let d = ScenarioDataset::from_columns(
            stamps,
            vec![1.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![12.0; n],
        )
        .unwrap();
        let noisy = apply_episode_noise(&d, &NoiseSpec::default(), 11).unwrap();
        let diffs: Vec<f64> = noisy.price().values().iter().map(|v| v - 12.0).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * 1.2 / (n as f64).sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1.2).abs() < 0.03, "std {}", var.sqrt());
    }

    #[test]
    fn goal_formula() {
        assert_eq!(max_avg_departure_energy(50.0, 0.0, 1043, 100.0).unwrap(), 50.0);
        assert!((max_avg_departure_energy(50.0, 1043.0, 1043, 100.0).unwrap() - 51.0).abs() < 1e-12);
        assert_eq!(max_avg_departure_energy(50.0, 1e9, 10, 100.0).unwrap(), 100.0);
        assert_eq!(max_avg_departure_energy(50.0, -1e9, 10, 100.0).unwrap(), 0.0);
        assert!(matches!(
            max_avg_departure_energy(50.0, 1.0, 0, 100.0),
            Err(VppError::Argument(_))
        ));
    }

    #[test]
    fn goal_on_dataset_with_known_surplus() {
        // 96 rows, renewable 4 kW above demand everywhere -> 96 * 4 * 0.25 = 96 kWh surplus.
        let start = ts("2018-01-01 00:00:00");
        let n = 96;
        let stamps: Vec<_> = (0..n).map(|i| start + Duration::minutes(15 * i as i64)).collect();
        let d = ScenarioDataset::from_columns(
            stamps,
            vec![1.0; n],
            vec![3.0; n],
            vec![2.0; n],
            vec![0.1; n],
        )
        .unwrap();
        let g = dataset_goal(&d, 96, 0.5, 100.0).unwrap();
        assert!((g.surplus_energy - 96.0).abs() < 1e-9);
        assert!((g.max_avg_departure_energy - 51.0).abs() < 1e-12);
        assert!(matches!(dataset_goal(&d, 0, 0.5, 100.0), Err(VppError::Argument(_))));
    }
}
