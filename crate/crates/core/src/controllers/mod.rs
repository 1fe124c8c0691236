//! Rule-based policies, logit masking and the episode runner.

mod search;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use search::{cross_entropy_search, write_history_csv, GenerationStats, ParamBounds, SearchConfig, SearchResult};

use crate::env::{Action, ActionCode, ActionMask, EnvConfig, EpisodeSummary, Observation, VppEnv};
use crate::error::{Result, VppError};

/// Logit assigned to masked actions.
pub const MASKED_LOGIT: f64 = -1e9;

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn act(&mut self, obs: &Observation, mask: &ActionMask, t: usize) -> Action;
}

/// Picks `preferred` when the mask allows it, otherwise the first valid code.
fn valid_or_fallback(mask: &ActionMask, station: usize, preferred: ActionCode) -> ActionCode {
    if mask.is_valid(station, preferred) {
        preferred
    } else if mask.is_valid(station, ActionCode::Idle) {
        ActionCode::Idle
    } else {
        mask.valid_codes(station)[0]
    }
}

/// Charges every connected EV.
#[derive(Debug, Clone, Default)]
pub struct Uncontrolled;

impl Policy for Uncontrolled {
    fn name(&self) -> &str {
        "uncontrolled"
    }

    fn act(&mut self, obs: &Observation, mask: &ActionMask, _t: usize) -> Action {
        Action(
            (0..obs.available_energies.len())
                .map(|s| valid_or_fallback(mask, s, ActionCode::Charge))
                .collect(),
        )
    }
}

pub fn uncontrolled_policy() -> Uncontrolled {
    Uncontrolled
}

/// Uniform draw among the valid codes of each station.
#[derive(Debug, Clone)]
pub struct RandomValid {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Policy for RandomValid {
    fn name(&self) -> &str {
        "random"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.seed as f64]
    }

    fn act(&mut self, _obs: &Observation, mask: &ActionMask, _t: usize) -> Action {
        Action(
            (0..mask.n_stations())
                .map(|s| {
                    let codes = mask.valid_codes(s);
                    codes[self.rng.random_range(0..codes.len())]
                })
                .collect(),
        )
    }
}

pub fn random_valid_policy(seed: u64) -> RandomValid {
    RandomValid {
        seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationOrder {
    /// Discharge the fullest EV first, charge the emptiest first.
    EnergyDescending,
    /// Discharge the emptiest eligible EV first, charge the fullest first.
    EnergyAscending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicyParams {
    /// Only EVs above this energy (kWh) are discharged.
    pub discharge_reserve: f64,
    /// EVs at or above this energy (kWh) are not charged from surplus.
    pub charge_target: f64,
    /// Net loads within this band (kW) are left alone.
    pub surplus_deadband: f64,
    pub order: StationOrder,
}

impl Default for ThresholdPolicyParams {
    fn default() -> Self {
        Self {
            discharge_reserve: 30.0,
            charge_target: 99.9,
            surplus_deadband: 0.1,
            order: StationOrder::EnergyDescending,
        }
    }
}

impl ThresholdPolicyParams {
    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        if !(env.energy_floor <= self.discharge_reserve
            && self.discharge_reserve <= self.charge_target
            && self.charge_target <= env.energy_ceiling)
        {
            return Err(VppError::Config(format!(
                "need {} <= discharge_reserve ({}) <= charge_target ({}) <= {}",
                env.energy_floor, self.discharge_reserve, self.charge_target, env.energy_ceiling
            )));
        }
        if !(self.surplus_deadband >= 0.0) {
            return Err(VppError::Config("surplus_deadband must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.discharge_reserve, self.charge_target, self.surplus_deadband]
    }

    pub fn to_key_values(&self) -> String {
        let order = match self.order {
            StationOrder::EnergyDescending => "energy_descending",
            StationOrder::EnergyAscending => "energy_ascending",
        };
        format!(
            "discharge_reserve: {}\ncharge_target: {}\nsurplus_deadband: {}\norder: {}\n",
            self.discharge_reserve, self.charge_target, self.surplus_deadband, order
        )
    }
}

/// Follows zero net load with at most one compensating EV per step.
#[derive(Debug, Clone)]
pub struct GreedyBalancer {
    params: ThresholdPolicyParams,
}

impl GreedyBalancer {
    pub fn params_ref(&self) -> &ThresholdPolicyParams {
        &self.params
    }
}

pub fn greedy_balancer(params: ThresholdPolicyParams) -> GreedyBalancer {
    GreedyBalancer { params }
}

impl Policy for GreedyBalancer {
    fn name(&self) -> &str {
        "greedy"
    }

    fn params(&self) -> Vec<f64> {
        self.params.to_vec()
    }

    fn act(&mut self, obs: &Observation, mask: &ActionMask, _t: usize) -> Action {
        let n = mask.n_stations();
        let mut out: Vec<ActionCode> = (0..n)
            .map(|s| valid_or_fallback(mask, s, ActionCode::Idle))
            .collect();
        let residual = obs.total_load - obs.ev_power;
        let p = &self.params;
        let energy = |s: usize| obs.available_energies[s];
        let descending = p.order == StationOrder::EnergyDescending;

        if residual > p.surplus_deadband {
            let pick = (0..n)
                .filter(|&s| mask.is_valid(s, ActionCode::Discharge) && energy(s) > p.discharge_reserve)
                .reduce(|a, b| {
                    let b_better = if descending { energy(b) > energy(a) } else { energy(b) < energy(a) };
                    if b_better { b } else { a }
                });
            if let Some(s) = pick {
                out[s] = ActionCode::Discharge;
            }
        } else if residual < -p.surplus_deadband {
            let pick = (0..n)
                .filter(|&s| {
                    mask.is_valid(s, ActionCode::Charge)
                        && mask.is_valid(s, ActionCode::Idle)
                        && energy(s) < p.charge_target
                })
                .reduce(|a, b| {
                    let b_better = if descending { energy(b) < energy(a) } else { energy(b) > energy(a) };
                    if b_better { b } else { a }
                });
            if let Some(s) = pick {
                out[s] = ActionCode::Charge;
            }
        }
        Action(out)
    }
}

/// Builds a policy from its CLI name.
pub fn policy_by_name(name: &str, seed: u64, params: ThresholdPolicyParams) -> Result<Box<dyn Policy>> {
    match name {
        "uncontrolled" => Ok(Box::new(uncontrolled_policy())),
        "random" => Ok(Box::new(random_valid_policy(seed))),
        "greedy" => Ok(Box::new(greedy_balancer(params))),
        other => Err(VppError::Argument(format!(
            "unknown policy '{other}' (expected uncontrolled, random or greedy)"
        ))),
    }
}

/// Softmax over `logits` with masked entries replaced by [`MASKED_LOGIT`].
pub fn mask_logits(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(VppError::Argument(format!(
            "{} logits but {} mask entries",
            logits.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|m| *m) {
        return Err(VppError::Argument("every action is masked".into()));
    }
    let masked: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l } else { MASKED_LOGIT })
        .collect();
    let max = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = masked.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

/// Runs one full episode and returns its summary.
pub fn run_episode(env: &mut VppEnv, policy: &mut dyn Policy, seed: u64) -> Result<EpisodeSummary> {
    let mut obs = env.reset(seed)?;
    let mut t = 0;
    loop {
        let mask = env.action_mask().expect("episode running");
        let action = policy.act(&obs, &mask, t);
        let r = env.step(&action)?;
        t += 1;
        if r.done {
            break;
        }
        obs = r.observation;
    }
    Ok(env.take_summary().expect("episode finished"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionCode::*;

    fn obs(total: f64, ev: f64, energies: &[f64]) -> Observation {
        Observation {
            ev_power: ev,
            total_load: total,
            available_energies: energies.to_vec(),
        }
    }

    fn mask_for(energies: &[Option<f64>]) -> ActionMask {
        let cfg = EnvConfig::default();
        ActionMask(energies.iter().map(|e| crate::env::station_mask(*e, &cfg)).collect())
    }

    #[test]
    fn uncontrolled_rules() {
        let m = mask_for(&[Some(50.0), None]);
        let a = uncontrolled_policy().act(&obs(0.0, 0.0, &[50.0, 0.0]), &m, 0);
        assert_eq!(a.0, vec![Charge, Idle]);
    }

    #[test]
    fn random_forced_and_deterministic() {
        let m = mask_for(&[Some(5.0), Some(50.0), None, Some(15.0)]);
        let o = obs(0.0, 0.0, &[5.0, 50.0, 0.0, 15.0]);
        let mut a = random_valid_policy(7);
        let mut b = random_valid_policy(7);
        for _ in 0..200 {
            let x = a.act(&o, &m, 0);
            assert_eq!(x, b.act(&o, &m, 0));
            assert_eq!(x.0[0], Charge);
            assert_eq!(x.0[2], Idle);
            assert!(m.allows(&x));
        }
    }

    #[test]
    fn random_frequencies_uniform() {
        let m = mask_for(&[Some(50.0)]);
        let o = obs(0.0, 0.0, &[50.0]);
        let mut p = random_valid_policy(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[p.act(&o, &m, 0).0[0].index()] += 1;
        }
        let expect = n as f64 / 3.0;
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn greedy_discharges_fullest() {
        let m = mask_for(&[Some(60.0), Some(30.0)]);
        let a = greedy_balancer(ThresholdPolicyParams::default()).act(&obs(4.0, 0.0, &[60.0, 30.0]), &m, 0);
        assert_eq!(a.0, vec![Discharge, Idle]);
    }

    #[test]
    fn greedy_charges_emptiest_below_target() {
        let m = mask_for(&[Some(60.0), Some(99.9)]);
        let a = greedy_balancer(ThresholdPolicyParams::default()).act(&obs(-4.0, 0.0, &[60.0, 99.9]), &m, 0);
        assert_eq!(a.0, vec![Charge, Idle]);
    }

    #[test]
    fn greedy_deadband_idles() {
        let m = mask_for(&[Some(60.0), Some(40.0)]);
        let p = ThresholdPolicyParams {
            surplus_deadband: 0.5,
            ..ThresholdPolicyParams::default()
        };
        let a = greedy_balancer(p).act(&obs(3.4, 3.0, &[60.0, 40.0]), &m, 0);
        assert_eq!(a.0, vec![Idle, Idle]);
    }

    #[test]
    fn greedy_keeps_forced_charge() {
        let m = mask_for(&[Some(5.0), Some(60.0)]);
        let a = greedy_balancer(ThresholdPolicyParams::default()).act(&obs(4.0, 0.0, &[5.0, 60.0]), &m, 0);
        assert_eq!(a.0, vec![Charge, Discharge]);
    }

    #[test]
    fn params_validated() {
        let cfg = EnvConfig::default();
        assert!(ThresholdPolicyParams::default().validate(&cfg).is_ok());
        let bad = ThresholdPolicyParams {
            discharge_reserve: 80.0,
            charge_target: 50.0,
            ..ThresholdPolicyParams::default()
        };
        assert!(bad.validate(&cfg).is_err());
    }

    #[test]
    fn masked_softmax() {
        let p = mask_logits(&[1.0, 1.0, 1.0, 1.0], &[true, true, false, true]).unwrap();
        for i in [0, 1, 3] {
            assert!((p[i] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(p[2] < 1e-8);
        let u = mask_logits(&[2.0; 5], &[true; 5]).unwrap();
        assert!(u.iter().all(|x| (x - 0.2).abs() < 1e-15));
        assert!(mask_logits(&[1.0, 2.0], &[false, false]).is_err());
        assert!(mask_logits(&[1.0], &[true, true]).is_err());
    }
}
