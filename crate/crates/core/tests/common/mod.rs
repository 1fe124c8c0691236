#![allow(dead_code)]

use std::sync::Arc;

use vpp_core::env::{EnvConfig, VppEnv};
use vpp_core::events::EventConfig;
use vpp_core::timeseries::{synthesize_scenario, NoiseSpec, ScenarioDataset, SynthConfig};

pub fn synthetic(seed: u64, steps: usize) -> Arc<ScenarioDataset> {
    Arc::new(synthesize_scenario(seed, &SynthConfig { steps, ..SynthConfig::default() }).unwrap())
}

pub fn env_with(data: Arc<ScenarioDataset>, weekly: u32) -> VppEnv {
    let horizon = data.len();
    VppEnv::new(
        data,
        EventConfig { weekly_arrivals: weekly, ..EventConfig::default() },
        EnvConfig { horizon, ..EnvConfig::default() },
        NoiseSpec::default(),
    )
    .unwrap()
}

pub fn short_env(steps: usize, weekly: u32) -> VppEnv {
    env_with(synthetic(11, steps), weekly)
}
