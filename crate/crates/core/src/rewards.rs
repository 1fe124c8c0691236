//! Reward shaping. Every reward is a piecewise-linear function over a small
//! anchor table; outside the anchors the nearest segment is extended and the
//! result is clamped at the shape's floor.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VppError};
use crate::metrics::KeyParameters;
use crate::timeseries::DatasetGoal;

/// Step load reward at 0 kW.
pub const LOAD_PEAK: f64 = 1.0;
/// |load| beyond which the step load reward stays at its floor, kW.
pub const LOAD_SATURATION_KW: f64 = 15.0;
pub const LOAD_ZERO_LOW_KW: f64 = -1.5;
pub const LOAD_ZERO_HIGH_KW: f64 = 1.0;

/// Departure reward at 90 % state of charge.
pub const DEPARTURE_PEAK: f64 = 10.0;
pub const DEPARTURE_ZERO_PCT: f64 = 55.0;
pub const DEPARTURE_PEAK_PCT: f64 = 90.0;

/// Peak of each end-of-episode component.
pub const FINAL_PEAK: f64 = 25_000.0;
pub const IMPORT_ZERO_FRACTION: f64 = 0.10;
pub const EXPORT_ZERO_FRACTION: f64 = 0.20;
pub const COST_ZERO_FRACTION: f64 = 0.10;
/// Lowest position of the average-energy peak, as a fraction of capacity.
pub const AVG_ENERGY_MIN_PEAK_FRACTION: f64 = 0.56;
/// Keeps zero crossings strictly positive when a baseline quantity is 0.
const MIN_ZERO_CROSSING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardShape {
    pub name: String,
    pub anchors: Vec<(f64, f64)>,
    pub floor: f64,
}

impl RewardShape {
    pub fn new(name: impl Into<String>, anchors: Vec<(f64, f64)>, floor: f64) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(VppError::Config("a reward shape needs two anchors".into()));
        }
        if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(VppError::Config("anchor x values must be strictly increasing".into()));
        }
        Ok(Self {
            name: name.into(),
            anchors,
            floor,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = &self.anchors;
        let seg = if x <= a[0].0 {
            0
        } else if x >= a[a.len() - 1].0 {
            a.len() - 2
        } else {
            a.partition_point(|p| p.0 <= x) - 1
        };
        let (x0, y0) = a[seg];
        let (x1, y1) = a[seg + 1];
        let y = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        y.max(self.floor)
    }

    pub fn peak(&self) -> (f64, f64) {
        self.anchors
            .iter()
            .copied()
            .fold((f64::NAN, f64::NEG_INFINITY), |b, p| if p.1 > b.1 { p } else { b })
    }
}

pub fn load_shape() -> RewardShape {
    RewardShape::new(
        "load",
        vec![
            (-LOAD_SATURATION_KW, -LOAD_PEAK),
            (LOAD_ZERO_LOW_KW, 0.0),
            (0.0, LOAD_PEAK),
            (LOAD_ZERO_HIGH_KW, 0.0),
            (LOAD_SATURATION_KW, -LOAD_PEAK),
        ],
        -LOAD_PEAK,
    )
    .expect("static anchors")
}

/// Departure shape over state of charge in percent.
pub fn departure_shape() -> RewardShape {
    RewardShape::new(
        "departure",
        vec![
            (0.0, -DEPARTURE_PEAK),
            (DEPARTURE_ZERO_PCT, 0.0),
            (DEPARTURE_PEAK_PCT, DEPARTURE_PEAK),
            (100.0, 0.5 * DEPARTURE_PEAK),
        ],
        -DEPARTURE_PEAK,
    )
    .expect("static anchors")
}

pub fn load_reward(total_load: f64) -> f64 {
    load_shape().eval(total_load)
}

pub fn departure_reward(energy: f64, capacity: f64) -> Result<f64> {
    if !(capacity > 0.0) || !(0.0..=capacity).contains(&energy) {
        return Err(VppError::Argument(format!(
            "departure energy {energy} outside [0, {capacity}]"
        )));
    }
    Ok(departure_shape().eval(100.0 * energy / capacity))
}

/// Average departure energy (kWh): negative below 55 % of capacity, peaked at
/// the dataset goal, easing to half the peak at full capacity.
pub fn avg_energy_shape(goal_kwh: f64, capacity: f64) -> RewardShape {
    let zero = 0.55 * capacity;
    let peak = goal_kwh.clamp(AVG_ENERGY_MIN_PEAK_FRACTION * capacity, capacity);
    let mut anchors = vec![(0.0, -FINAL_PEAK), (zero, 0.0), (peak, FINAL_PEAK)];
    if peak < capacity {
        anchors.push((capacity, 0.5 * FINAL_PEAK));
    }
    RewardShape::new("final_avg_energy", anchors, -FINAL_PEAK).expect("increasing anchors")
}

/// Peak at 0, zero at `fraction * baseline`, then linear down to the floor.
fn penalty_shape(name: &str, baseline: f64, fraction: f64) -> RewardShape {
    let zero = (fraction * baseline).max(MIN_ZERO_CROSSING);
    RewardShape::new(name, vec![(0.0, FINAL_PEAK), (zero, 0.0)], -FINAL_PEAK)
        .expect("increasing anchors")
}

pub fn grid_import_shape(baseline: &KeyParameters) -> RewardShape {
    penalty_shape("final_grid_import", baseline.grid_energy_used, IMPORT_ZERO_FRACTION)
}

pub fn grid_export_shape(baseline: &KeyParameters) -> RewardShape {
    penalty_shape("final_grid_export", baseline.re2v_unused, EXPORT_ZERO_FRACTION)
}

pub fn grid_cost_shape(baseline: &KeyParameters) -> RewardShape {
    penalty_shape("final_grid_cost", baseline.grid_cost, COST_ZERO_FRACTION)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalReward {
    pub avg_energy: f64,
    pub grid_import: f64,
    pub grid_export: f64,
    pub grid_cost: f64,
}

impl FinalReward {
    pub fn total(&self) -> f64 {
        self.avg_energy + self.grid_import + self.grid_export + self.grid_cost
    }
}

/// End-of-episode reward, each component shaped against the uncontrolled
/// baseline of the same episode.
pub fn final_reward(
    metrics: &KeyParameters,
    baseline: Option<&KeyParameters>,
    goal: &DatasetGoal,
    capacity: f64,
) -> Result<FinalReward> {
    let baseline = baseline
        .ok_or_else(|| VppError::Dependency("final reward needs the uncontrolled baseline".into()))?;
    Ok(FinalReward {
        avg_energy: avg_energy_shape(goal.max_avg_departure_energy, capacity)
            .eval(metrics.avg_departure_energy),
        grid_import: grid_import_shape(baseline).eval(metrics.grid_energy_used),
        grid_export: grid_export_shape(baseline).eval(metrics.re2v_unused),
        grid_cost: grid_cost_shape(baseline).eval(metrics.grid_cost),
    })
}

/// Episode reward split into its six sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub load_reward_total: f64,
    pub departure_reward_total: f64,
    pub final_avg_energy: f64,
    pub final_grid_import: f64,
    pub final_grid_export: f64,
    pub final_grid_cost: f64,
    pub cumulative: f64,
}

impl RewardBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.load_reward_total
            + self.departure_reward_total
            + self.final_avg_energy
            + self.final_grid_import
            + self.final_grid_export
            + self.final_grid_cost
    }

    pub fn with_final(mut self, f: &FinalReward) -> Self {
        self.final_avg_energy = f.avg_energy;
        self.final_grid_import = f.grid_import;
        self.final_grid_export = f.grid_export;
        self.final_grid_cost = f.grid_cost;
        self
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "load_reward_total: {}\ndeparture_reward_total: {}\nfinal_avg_energy: {}\n\
             final_grid_import: {}\nfinal_grid_export: {}\nfinal_grid_cost: {}\ncumulative: {}\n",
            self.load_reward_total,
            self.departure_reward_total,
            self.final_avg_energy,
            self.final_grid_import,
            self.final_grid_export,
            self.final_grid_cost,
            self.cumulative
        )
    }
}

/// All six shapes for a given baseline and goal.
pub fn all_shapes(baseline: &KeyParameters, goal: &DatasetGoal, capacity: f64) -> Vec<RewardShape> {
    vec![
        load_shape(),
        departure_shape(),
        avg_energy_shape(goal.max_avg_departure_energy, capacity),
        grid_import_shape(baseline),
        grid_export_shape(baseline),
        grid_cost_shape(baseline),
    ]
}

/// Writes `shape_name,x,value`, one row per anchor.
pub fn write_shapes_csv<W: Write>(shapes: &[RewardShape], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["shape_name", "x", "value"])?;
    for s in shapes {
        for (x, y) in &s.anchors {
            w.write_record([s.name.clone(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: line through two points.
    fn line(x: f64, (x0, y0): (f64, f64), (x1, y1): (f64, f64)) -> f64 {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    fn kp(import: f64, export: f64, cost: f64, avg: f64) -> KeyParameters {
        KeyParameters {
            grid_energy_used: import,
            re2v_unused: export,
            grid_cost: cost,
            avg_departure_energy: avg,
            cumulative_reward: 0.0,
            charging_event_count: 0,
            net_energy: 0.0,
            total_cost_signed: 0.0,
        }
    }

    fn goal(max_avg: f64) -> DatasetGoal {
        DatasetGoal {
            total_supply_energy: 0.0,
            total_demand_energy: 0.0,
            surplus_energy: 0.0,
            max_avg_departure_energy: max_avg,
            mean_arrival_energy: 50.0,
            event_count: 1,
        }
    }

    #[test]
    fn load_reward_anchor_points() {
        assert_eq!(load_reward(0.0), 1.0);
        assert_eq!(load_reward(-1.5), 0.0);
        assert_eq!(load_reward(1.0), 0.0);
        assert_eq!(load_reward(8.0), line(8.0, (1.0, 0.0), (15.0, -1.0)));
        assert_eq!(load_reward(8.0), -0.5);
        assert_eq!(load_reward(100.0), -1.0);
        assert_eq!(load_reward(-100.0), -1.0);
        assert!(load_reward(0.5) > 0.0 && load_reward(-1.0) > 0.0);
        assert!(load_reward(1.01) < 0.0 && load_reward(-1.51) < 0.0);
    }

    #[test]
    fn departure_reward_anchor_points() {
        assert_eq!(departure_reward(55.0, 100.0).unwrap(), 0.0);
        assert_eq!(departure_reward(90.0, 100.0).unwrap(), 10.0);
        assert_eq!(departure_reward(0.0, 100.0).unwrap(), -10.0);
        assert_eq!(departure_reward(100.0, 100.0).unwrap(), 5.0);
        assert!(departure_reward(101.0, 100.0).is_err());
        assert!(departure_reward(-0.1, 100.0).is_err());
    }

    #[test]
    fn final_reward_peaks_and_zero_crossings() {
        let base = kp(30000.0, 20000.0, 800.0, 100.0);
        let g = goal(80.0);
        let best = final_reward(&kp(0.0, 0.0, 0.0, 80.0), Some(&base), &g, 100.0).unwrap();
        assert_eq!(best.avg_energy, FINAL_PEAK);
        assert_eq!(best.grid_import, FINAL_PEAK);
        assert_eq!(best.grid_export, FINAL_PEAK);
        assert_eq!(best.grid_cost, FINAL_PEAK);
        assert_eq!(best.total(), 4.0 * FINAL_PEAK);

        let r = final_reward(&kp(3000.0, 8000.0, 80.0, 55.0), Some(&base), &g, 100.0).unwrap();
        assert!(r.grid_import.abs() < 1e-9);
        assert!((r.grid_export + FINAL_PEAK).abs() < 1e-9);
        assert!(r.grid_cost.abs() < 1e-9);
        assert!(r.avg_energy.abs() < 1e-9);

        assert!(matches!(
            final_reward(&base, None, &g, 100.0),
            Err(VppError::Dependency(_))
        ));
    }

    #[test]
    fn degenerate_baseline_keeps_shapes_valid() {
        let base = kp(0.0, 0.0, 0.0, 100.0);
        let r = final_reward(&kp(0.0, 0.0, 0.0, 50.0), Some(&base), &goal(40.0), 100.0).unwrap();
        assert_eq!(r.grid_import, FINAL_PEAK);
        assert!(r.avg_energy < 0.0);
    }

    #[test]
    fn shapes_dump_csv() {
        let mut buf = Vec::new();
        write_shapes_csv(&[load_shape()], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("shape_name,x,value\nload,-15,-1\n"));
        assert_eq!(s.lines().count(), 6);
    }

    #[test]
    fn bad_anchor_tables_rejected() {
        assert!(RewardShape::new("x", vec![(0.0, 1.0)], 0.0).is_err());
        assert!(RewardShape::new("x", vec![(1.0, 1.0), (1.0, 0.0)], 0.0).is_err());
    }
}
