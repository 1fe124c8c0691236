mod common;

use proptest::prelude::*;

use vpp_core::controllers::{
    cross_entropy_search, greedy_balancer, mask_logits, random_valid_policy, run_episode, ParamBounds, Policy,
    SearchConfig, ThresholdPolicyParams,
};
use vpp_core::env::{ActionCode, EnvConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_softmax_normalizes_and_ignores_shifts(
        entries in proptest::collection::vec((-50.0f64..50.0, any::<bool>()), 1..12),
        shift in -100.0f64..100.0,
    ) {
        let logits: Vec<f64> = entries.iter().map(|e| e.0).collect();
        let mut mask: Vec<bool> = entries.iter().map(|e| e.1).collect();
        mask[0] = true;
        let p = mask_logits(&logits, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pi, m) in p.iter().zip(&mask) {
            if !m {
                prop_assert!(*pi < 1e-8);
            }
        }
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let q = mask_logits(&shifted, &mask).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn greedy_shrinks_the_load_it_compensates() {
    let cfg = EnvConfig::default();
    let mut env = common::short_env(2500, 60);
    let mut policy = greedy_balancer(ThresholdPolicyParams::default());
    let mut obs = env.reset(5).unwrap();
    let mut checked = 0;
    let mut t = 0;
    loop {
        let mask = env.action_mask().unwrap();
        let net = env.next_net_load().unwrap();
        let action = policy.act(&obs, &mask, t);
        let active: Vec<usize> = (0..4).filter(|&s| action.0[s] != ActionCode::Idle).collect();
        let r = env.step(&action).unwrap();
        if let [s] = active[..] {
            let compensating = match action.0[s] {
                ActionCode::Discharge => net > 0.0,
                ActionCode::Charge => net < 0.0,
                ActionCode::Idle => false,
            };
            let in_bounds = (cfg.station_min_power..=cfg.station_max_power).contains(&net.abs());
            let unclamped = (r.info.station_power[s].abs() - net.abs()).abs() < 1e-9;
            if compensating && in_bounds && unclamped && mask.is_valid(s, ActionCode::Idle) {
                assert!(r.observation.total_load.abs() < net.abs(), "step {t}");
                checked += 1;
            }
        }
        if r.done {
            break;
        }
        obs = r.observation;
        t += 1;
    }
    assert!(checked > 100, "only {checked} compensating steps");
}

#[test]
fn single_candidate_search_returns_it() {
    let factory = || Ok(common::short_env(300, 60));
    let cfg = SearchConfig {
        generations: 1,
        population: 1,
        elite_fraction: 0.5,
        seed: 4,
        eval_seeds: vec![2],
        ..SearchConfig::default()
    };
    let r = cross_entropy_search(&cfg, factory).unwrap();
    assert_eq!(r.history.len(), 1);
    assert_eq!(r.history[0].std, 0.0);
    assert_eq!(r.history[0].best, r.best_score);
    assert_eq!(r.history[0].mean, r.best_score);

    let mut env = factory().unwrap();
    let again = run_episode(&mut env, &mut greedy_balancer(r.best_params), 2).unwrap();
    assert_eq!(again.breakdown.cumulative, r.best_score);
}

#[test]
fn search_is_deterministic_monotone_and_beats_random() {
    let factory = || Ok(common::short_env(600, 60));
    let cfg = SearchConfig {
        generations: 4,
        population: 6,
        elite_fraction: 0.34,
        seed: 10,
        eval_seeds: vec![1, 2],
        ..SearchConfig::default()
    };
    let a = cross_entropy_search(&cfg, factory).unwrap();
    let b = cross_entropy_search(&cfg, factory).unwrap();
    assert_eq!(a, b);
    assert!(a.history.windows(2).all(|w| w[1].best >= w[0].best));
    let p = a.best_params;
    assert!(p.discharge_reserve <= p.charge_target);

    let mut env = factory().unwrap();
    let mut random_total = 0.0;
    let mut n = 0.0;
    for policy_seed in 0..5 {
        for &s in &cfg.eval_seeds {
            let mut pol = random_valid_policy(policy_seed);
            random_total += run_episode(&mut env, &mut pol, s).unwrap().breakdown.cumulative;
            n += 1.0;
        }
    }
    assert!(a.best_score >= random_total / n, "{} vs {}", a.best_score, random_total / n);
}

#[test]
fn search_rejects_bad_settings() {
    let factory = || Ok(common::short_env(50, 10));
    let bad_bounds = SearchConfig {
        bounds: ParamBounds { lower: [50.0, 40.0, 0.0], upper: [40.0, 99.9, 1.0] },
        ..SearchConfig::default()
    };
    assert!(cross_entropy_search(&bad_bounds, factory).is_err());
    let bad_elite = SearchConfig { elite_fraction: 0.8, ..SearchConfig::default() };
    assert!(cross_entropy_search(&bad_elite, factory).is_err());
}

#[test]
fn random_policy_name_and_params() {
    let p = random_valid_policy(9);
    assert_eq!(p.name(), "random");
    assert_eq!(p.params(), vec![9.0]);
}
