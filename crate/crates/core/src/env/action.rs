//! Per-station action codes, validity rules and the adaptive power rule.

use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::error::{Result, VppError};

/// Number of action values per station.
pub const N_ACTION_VALUES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ActionCode {
    Idle = 0,
    Charge = 1,
    Discharge = 2,
}

impl ActionCode {
    pub const ALL: [ActionCode; 3] = [ActionCode::Idle, ActionCode::Charge, ActionCode::Discharge];

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Self::Idle),
            1 => Ok(Self::Charge),
            2 => Ok(Self::Discharge),
            other => Err(VppError::Argument(format!("action code {other} not in {{0,1,2}}"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One code per charging station.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action(pub Vec<ActionCode>);

impl Action {
    pub fn idle(n: usize) -> Self {
        Self(vec![ActionCode::Idle; n])
    }

    pub fn from_codes(codes: &[u8]) -> Result<Self> {
        codes
            .iter()
            .map(|&c| ActionCode::from_index(c))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn codes(&self) -> Vec<u8> {
        self.0.iter().map(|c| *c as u8).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Validity of each (station, action value) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask(pub Vec<[bool; N_ACTION_VALUES]>);

impl ActionMask {
    pub fn n_stations(&self) -> usize {
        self.0.len()
    }

    pub fn is_valid(&self, station: usize, code: ActionCode) -> bool {
        self.0[station][code.index()]
    }

    pub fn allows(&self, action: &Action) -> bool {
        action.len() == self.n_stations()
            && action.0.iter().enumerate().all(|(s, &c)| self.is_valid(s, c))
    }

    pub fn valid_codes(&self, station: usize) -> Vec<ActionCode> {
        ActionCode::ALL
            .into_iter()
            .filter(|c| self.is_valid(station, *c))
            .collect()
    }

    /// Flattened in action-table order (`value * n_stations + station`).
    pub fn to_flat(&self) -> Vec<bool> {
        let n = self.n_stations();
        let mut out = vec![false; n * N_ACTION_VALUES];
        for (s, row) in self.0.iter().enumerate() {
            for (v, ok) in row.iter().enumerate() {
                out[v * n + s] = *ok;
            }
        }
        out
    }
}

/// Position of (station, value) in the row-major action table, where each row
/// is an action value and each column a station.
pub fn action_index(station: usize, value: usize, n_stations: usize, n_values: usize) -> Result<usize> {
    if station >= n_stations || value >= n_values {
        return Err(VppError::Argument(format!(
            "station {station} / value {value} outside {n_stations} x {n_values} table"
        )));
    }
    Ok(value * n_stations + station)
}

/// Largest action index of an `n_stations x n_values` table.
pub fn max_action_index(n_stations: usize, n_values: usize) -> usize {
    n_stations * n_values - 1
}

/// Valid codes for one station. `energy` is `None` for an empty station.
pub fn station_mask(energy: Option<f64>, cfg: &EnvConfig) -> [bool; N_ACTION_VALUES] {
    match energy {
        None => [true, false, false],
        Some(e) if e < cfg.force_charge_below => [false, true, false],
        Some(e) if e < cfg.no_discharge_below => [true, true, false],
        Some(e) if e >= cfg.energy_ceiling => [true, false, true],
        Some(_) => [true, true, true],
    }
}

/// Replaces an invalid code by the one the station will actually execute.
pub fn substitute(code: ActionCode, energy: Option<f64>, cfg: &EnvConfig) -> ActionCode {
    use ActionCode::*;
    match energy {
        None => Idle,
        Some(e) if e < cfg.force_charge_below => Charge,
        Some(e) if e < cfg.no_discharge_below && code == Discharge => Idle,
        Some(e) if e >= cfg.energy_ceiling && code == Charge => Idle,
        Some(_) => code,
    }
}

/// Result of resolving an action against the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPlan {
    /// Codes after substitution.
    pub applied: Vec<ActionCode>,
    /// Whether each requested code was valid as given.
    pub valid: Vec<bool>,
    /// Signed station power, kW, after battery clamping.
    pub power: Vec<f64>,
}

/// Resolves per-station powers for one step.
///
/// Stations are processed in ascending index; each sees the residual
/// `net_load + sum(powers assigned so far)`. A discharge against a positive
/// residual (or a charge against a negative one) compensates it within
/// `[min, max]` station power; against the other sign it runs at rated power.
/// Powers are then reduced so the battery stays within `[floor, ceiling]`.
pub fn adaptive_power(
    net_load: f64,
    energies: &[Option<f64>],
    action: &Action,
    cfg: &EnvConfig,
) -> Result<PowerPlan> {
    if action.len() != energies.len() {
        return Err(VppError::Argument(format!(
            "action has {} entries, expected {}",
            action.len(),
            energies.len()
        )));
    }
    let n = energies.len();
    let mut plan = PowerPlan {
        applied: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
        power: Vec::with_capacity(n),
    };
    let mut residual = net_load;
    for (&requested, &energy) in action.0.iter().zip(energies) {
        let code = substitute(requested, energy, cfg);
        let mut p = match code {
            ActionCode::Idle => 0.0,
            ActionCode::Charge if residual < 0.0 => {
                (-residual).clamp(cfg.station_min_power, cfg.station_max_power)
            }
            ActionCode::Charge => cfg.station_rated_power,
            ActionCode::Discharge if residual > 0.0 => {
                -residual.clamp(cfg.station_min_power, cfg.station_max_power)
            }
            ActionCode::Discharge => -cfg.station_rated_power,
        };
        if let Some(e) = energy {
            let next = e + p * cfg.dt;
            if next > cfg.energy_ceiling {
                p = (cfg.energy_ceiling - e).max(0.0) / cfg.dt;
            } else if next < cfg.energy_floor {
                p = -(e - cfg.energy_floor).max(0.0) / cfg.dt;
            }
        }
        residual += p;
        plan.valid.push(code == requested);
        plan.applied.push(code);
        plan.power.push(p);
    }
    Ok(plan)
}

/// Battery energy after applying `power` for one step, pinned to the bounds.
pub fn next_energy(energy: f64, power: f64, cfg: &EnvConfig) -> f64 {
    if power == 0.0 {
        return energy;
    }
    (energy + power * cfg.dt).clamp(cfg.energy_floor.min(energy), cfg.energy_ceiling.max(energy))
}
