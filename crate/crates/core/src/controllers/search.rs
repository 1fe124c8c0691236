//! Cross-entropy search over the threshold policy family.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{greedy_balancer, run_episode, StationOrder, ThresholdPolicyParams};
use crate::env::VppEnv;
use crate::error::{Result, VppError};

/// Box bounds for (discharge_reserve, charge_target, surplus_deadband).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [20.0, 40.0, 0.0],
            upper: [80.0, 99.9, 2.0],
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite() && self.lower[i] <= self.upper[i]) {
                return Err(VppError::Config(format!(
                    "bound {i}: lower {} must not exceed upper {}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        if self.lower[2] < 0.0 {
            return Err(VppError::Config("deadband lower bound must be >= 0".into()));
        }
        Ok(())
    }

    fn params(&self, x: [f64; 3]) -> ThresholdPolicyParams {
        let mut v = [0.0; 3];
        for i in 0..3 {
            v[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
        let (reserve, target) = if v[0] <= v[1] { (v[0], v[1]) } else { (v[1], v[0]) };
        ThresholdPolicyParams {
            discharge_reserve: reserve,
            charge_target: target,
            surplus_deadband: v[2],
            order: StationOrder::EnergyDescending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub bounds: ParamBounds,
    pub generations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    pub seed: u64,
    /// Episode seeds each candidate is scored on; the score is the mean.
    pub eval_seeds: Vec<u64>,
    /// Lower limit on the sampling standard deviation, as a fraction of the bound width.
    pub min_std_fraction: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            bounds: ParamBounds::default(),
            generations: 5,
            population: 8,
            elite_fraction: 0.25,
            seed: 0,
            eval_seeds: vec![1],
            min_std_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best score seen so far.
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_params: ThresholdPolicyParams,
    pub best_score: f64,
    pub history: Vec<GenerationStats>,
}

fn evaluate<F>(factory: &F, params: ThresholdPolicyParams, seeds: &[u64]) -> Result<f64>
where
    F: Fn() -> Result<VppEnv> + Sync,
{
    let mut env = factory()?;
    let mut total = 0.0;
    for &s in seeds {
        let mut policy = greedy_balancer(params);
        total += run_episode(&mut env, &mut policy, s)?.breakdown.cumulative;
    }
    Ok(total / seeds.len() as f64)
}

/// Samples candidates from a diagonal Gaussian, scores them in parallel and
/// refits mean and spread on the elite set each generation.
pub fn cross_entropy_search<F>(config: &SearchConfig, factory: F) -> Result<SearchResult>
where
    F: Fn() -> Result<VppEnv> + Sync,
{
    config.bounds.validate()?;
    if config.generations == 0 || config.population == 0 {
        return Err(VppError::Config("generations and population must be at least 1".into()));
    }
    if !(config.elite_fraction > 0.0 && config.elite_fraction <= 0.5) {
        return Err(VppError::Config("elite_fraction must be in (0, 0.5]".into()));
    }
    if config.eval_seeds.is_empty() {
        return Err(VppError::Config("eval_seeds must not be empty".into()));
    }
    let b = &config.bounds;
    let width: Vec<f64> = (0..3).map(|i| b.upper[i] - b.lower[i]).collect();
    let mut mean: Vec<f64> = (0..3).map(|i| 0.5 * (b.lower[i] + b.upper[i])).collect();
    let mut std: Vec<f64> = width.iter().map(|w| 0.5 * w).collect();
    let n_elite = ((config.population as f64 * config.elite_fraction).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best: Option<(ThresholdPolicyParams, f64)> = None;
    let mut history = Vec::with_capacity(config.generations);
    for generation in 0..config.generations {
        let samples: Vec<[f64; 3]> = (0..config.population)
            .map(|_| {
                let mut x = [0.0; 3];
                for i in 0..3 {
                    x[i] = if std[i] > 0.0 {
                        Normal::new(mean[i], std[i]).expect("positive std").sample(&mut rng)
                    } else {
                        mean[i]
                    };
                    x[i] = x[i].clamp(b.lower[i], b.upper[i]);
                }
                x
            })
            .collect();
        let scores: Vec<f64> = samples
            .par_iter()
            .map(|x| evaluate(&factory, b.params(*x), &config.eval_seeds))
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        let top = order[0];
        if best.as_ref().is_none_or(|(_, s)| scores[top] > *s) {
            best = Some((b.params(samples[top]), scores[top]));
        }

        let elites = &order[..n_elite.min(order.len())];
        for i in 0..3 {
            let m = elites.iter().map(|&k| samples[k][i]).sum::<f64>() / elites.len() as f64;
            let var = elites.iter().map(|&k| (samples[k][i] - m).powi(2)).sum::<f64>() / elites.len() as f64;
            mean[i] = m;
            std[i] = var.sqrt().max(config.min_std_fraction * width[i]);
        }

        let n = scores.len() as f64;
        let score_mean = scores.iter().sum::<f64>() / n;
        let score_std = (scores.iter().map(|s| (s - score_mean).powi(2)).sum::<f64>() / n).sqrt();
        history.push(GenerationStats {
            generation,
            best: best.as_ref().expect("set above").1,
            mean: score_mean,
            std: score_std,
        });
    }
    let (best_params, best_score) = best.expect("at least one generation");
    Ok(SearchResult {
        best_params,
        best_score,
        history,
    })
}

pub fn write_history_csv<W: Write>(history: &[GenerationStats], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["generation", "best", "mean", "std"])?;
    for g in history {
        w.write_record([
            g.generation.to_string(),
            g.best.to_string(),
            g.mean.to_string(),
            g.std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_checked() {
        let bad = ParamBounds {
            lower: [50.0, 40.0, 0.0],
            upper: [40.0, 99.9, 1.0],
        };
        assert!(bad.validate().is_err());
        assert!(ParamBounds::default().validate().is_ok());
    }

    #[test]
    fn params_keep_ordering() {
        let b = ParamBounds {
            lower: [20.0, 20.0, 0.0],
            upper: [90.0, 90.0, 1.0],
        };
        let p = b.params([80.0, 30.0, 5.0]);
        assert_eq!((p.discharge_reserve, p.charge_target, p.surplus_deadband), (30.0, 80.0, 1.0));
    }
}
