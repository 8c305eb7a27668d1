#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::Rng;

use latent_bandits::baselines::Exp4State;
use latent_bandits::harness::{
    run_bayes, Episode, PolicySpec, Scenario, SynthConfig, SynthScenario,
};
use latent_bandits::latent_ts::StatePosterior;
use latent_bandits::latent_ucb::{ModelUcb, SlidingWindowStats};
use latent_bandits::model::{ActionId, Context, LatentPrior, StateId};
use latent_bandits::rng::{seeded, RunSeeds, STREAM_EPISODE, STREAM_INSTANCE, STREAM_POLICY};
use latent_bandits::Policy;

/// Arm distribution stays a probability vector through random updates.
pub fn exp4_normalized(
    experts: usize,
    arms: usize,
    eta: f64,
    gamma: f64,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut st =
        Exp4State::new(experts, eta, gamma).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut rng = seeded(seed);
    for _ in 0..200 {
        let advice: Vec<ActionId> = (0..experts)
            .map(|_| ActionId(rng.random_range(0..arms)))
            .collect();
        let p = st.arm_distribution(&advice, arms);
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {total}");
        prop_assert!(p.iter().all(|&q| q.is_finite() && q >= 0.0), "{p:?}");
        let a = rng.random_range(0..arms);
        if p[a] > 0.0 {
            st.update(&advice, ActionId(a), p[a], rng.random::<f64>());
        }
    }
    Ok(())
}

/// Gap-statistic counts sum to the number of completed rounds.
pub fn ucb_counts_sum(
    states: usize,
    arms: usize,
    horizon: usize,
    seed: u64,
) -> Result<(), TestCaseError> {
    let cfg = SynthConfig {
        arms,
        states,
        gap_min: 0.01,
        horizon,
        runs: 1,
        seed,
        ..SynthConfig::default()
    };
    let scenario =
        SynthScenario::new(cfg.clone()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let seeds = RunSeeds::new(seed, 0);
    let setup = scenario
        .setup(0, &mut seeds.stream(STREAM_INSTANCE))
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let episode = Episode::draw(&setup.instance, &mut seeds.stream(STREAM_EPISODE))
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut policy = ModelUcb::new("mucb", setup.model.clone(), horizon, cfg.noise_sigma, 0.0)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut rng = seeds.stream(STREAM_POLICY);
    let x = Context::empty();
    for t in 1..=horizon {
        prop_assert_eq!(policy.stats().counts().iter().sum::<u64>(), (t - 1) as u64);
        let d = policy
            .select(&x, &mut rng)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r = setup.instance.true_means(&episode.rounds[t - 1]).unwrap()[d.action.0]
            + cfg.noise_sigma * episode.noise(t - 1, d.action.0);
        policy
            .observe(&x, &d, r)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
    }
    prop_assert_eq!(policy.stats().counts().iter().sum::<u64>(), horizon as u64);
    Ok(())
}

/// Sliding-window counts match a recount and cover min(t - 1, window) rounds.
pub fn window_counts(
    states: usize,
    window: usize,
    pushes: &[(usize, f64)],
) -> Result<(), TestCaseError> {
    let mut sw = SlidingWindowStats::new(states, window, 1.0)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    for (i, &(s, r)) in pushes.iter().enumerate() {
        sw.push(StateId(s % states), 0.5, r);
        let counts: Vec<usize> = (0..states).map(|s| sw.count(StateId(s))).collect();
        prop_assert_eq!(&counts, &sw.recount());
        prop_assert_eq!(counts.iter().sum::<usize>(), (i + 1).min(window));
        prop_assert_eq!(sw.round(), i + 2);
    }
    Ok(())
}

/// Every policy's instant regret is non-negative and agrees with the means.
pub fn regret_nonnegative(
    states: usize,
    arms: usize,
    sigma0: f64,
    seed: u64,
) -> Result<(), TestCaseError> {
    let cfg = SynthConfig {
        arms,
        states,
        gap_min: 0.01,
        model_sigma: sigma0,
        horizon: 60,
        runs: 3,
        seed,
        ..SynthConfig::default()
    };
    let policies: Vec<PolicySpec> = [
        "ucb1", "ts", "exp4", "mucb", "mmucb", "mts", "mmts", "sw-mucb",
    ]
    .iter()
    .map(|n| PolicySpec::from_name(n).unwrap())
    .collect();
    let prior = LatentPrior::uniform(states).unwrap();
    let res =
        run_bayes(&cfg, &prior, &policies, 1).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for run in &res.runs {
        for trace in &run.traces {
            for rec in trace {
                prop_assert!(rec.instant_regret >= 0.0 && rec.instant_regret.is_finite());
                prop_assert!(rec.expected_reward <= rec.expected_reward + rec.instant_regret);
                if rec.action == rec.optimal_action {
                    prop_assert_eq!(rec.instant_regret, 0.0);
                }
            }
        }
    }
    Ok(())
}

/// `updates` fuzzed absorbs of extreme log-likelihoods never produce NaN.
pub fn log_sum_exp_stable(states: usize, updates: usize, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = seeded(seed);
    let mut post = StatePosterior::from_prior(&LatentPrior::uniform(states).unwrap());
    let mut ll = vec![0.0; states];
    for _ in 0..updates {
        for l in ll.iter_mut() {
            *l = match rng.random_range(0..10) {
                0 => -rng.random::<f64>() * 1e300,
                1 => f64::NEG_INFINITY,
                2 => rng.random::<f64>() * 700.0,
                _ => -rng.random::<f64>() * 1e4,
            };
        }
        post.absorb(&ll)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(post.log_weights().iter().all(|w| !w.is_nan()));
    }
    let p = post
        .probabilities()
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(p.iter().all(|q| q.is_finite() && *q >= 0.0));
    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    Ok(())
}
