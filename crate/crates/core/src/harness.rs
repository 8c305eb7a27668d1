//! Experiment engine: synthetic instances, episode pre-draws, the run loop,
//! replication across runs and per-round aggregation.
//!
//! Within one run every policy sees the same context sequence and the same
//! `n x K` table of standard-normal reward noise, so differences between
//! policies are driven by their decisions only. Runs are independent and
//! may execute in parallel; results are merged in run-index order.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{Exp4, Exp4State, GaussianTs, LinTs, LinUcb, Ucb1};
use crate::error::{Error, Result};
use crate::latent_ts::{ConditionalMode, IndependentGaussianMmts, LinearGaussianMmts, ModelTs};
use crate::latent_ucb::{ModelUcb, SlidingWindowUcb};
use crate::model::{
    sample_instance_state, ActionId, BanditInstance, GaussianModelPrior, LatentModel, LatentPrior,
    NoContext, PriorSpread, RoundContext, RunRecord, StateId,
};
use crate::policy::Policy;
use crate::rng::{argmax_first, RunSeeds, SimRng, STREAM_EPISODE, STREAM_INSTANCE, STREAM_POLICY};

use std::sync::Arc;

/// Synthetic multi-armed latent bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub arms: usize,
    pub states: usize,
    pub gap_min: f64,
    pub noise_sigma: f64,
    pub model_sigma: f64,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            arms: 10,
            states: 5,
            gap_min: 0.1,
            noise_sigma: 0.5,
            model_sigma: 0.05,
            horizon: 500,
            runs: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms < 2 {
            return Err(Error::Config("arms must be >= 2".into()));
        }
        if self.states < 1 {
            return Err(Error::Config("states must be >= 1".into()));
        }
        if !(self.gap_min > 0.0 && self.gap_min < 1.0) {
            return Err(Error::Config(format!(
                "gap_min must be in (0, 1), got {}",
                self.gap_min
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if !(self.model_sigma >= 0.0 && self.model_sigma.is_finite()) {
            return Err(Error::Config("model_sigma must be >= 0".into()));
        }
        if self.horizon < 2 {
            return Err(Error::Config("horizon must be >= 2".into()));
        }
        if self.runs < 1 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        Ok(())
    }
}

const MAX_REJECTION_ATTEMPTS: usize = 1_000_000;

/// Gap between the best and second-best arm of every state.
pub fn state_gaps(means: &DMatrix<f64>) -> Vec<f64> {
    (0..means.nrows())
        .map(|s| {
            let mut row: Vec<f64> = means.row(s).iter().copied().collect();
            row.sort_by(|a, b| b.total_cmp(a));
            if row.len() < 2 {
                f64::INFINITY
            } else {
                row[0] - row[1]
            }
        })
        .collect()
}

/// Uniform(0, 1) mean table, resampled whole until every state's best arm
/// leads every other arm by at least `gap_min`.
pub fn gen_synth_instance(cfg: &SynthConfig, rng: &mut SimRng) -> Result<LatentModel> {
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let means = DMatrix::from_fn(cfg.states, cfg.arms, |_, _| rng.random::<f64>());
        if state_gaps(&means).iter().all(|&g| g >= cfg.gap_min) {
            return LatentModel::from_means(means);
        }
    }
    Err(Error::Numerical(format!(
        "rejection sampling exceeded {MAX_REJECTION_ATTEMPTS} attempts"
    )))
}

/// Add independent `N(0, sigma0^2)` noise to every entry of a tabular model.
pub fn perturb_model(model: &LatentModel, sigma0: f64, rng: &mut SimRng) -> Result<LatentModel> {
    let LatentModel::Tabular { means } = model else {
        return Err(Error::invalid("model perturbation needs a tabular model"));
    };
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return Err(Error::invalid(format!("sigma0 must be >= 0, got {sigma0}")));
    }
    let noisy = means.map(|m| m + sigma0 * rng.sample::<f64, _>(StandardNormal));
    LatentModel::from_means(noisy)
}

/// Contexts and reward noise pre-drawn for a whole run.
#[derive(Debug, Clone)]
pub struct Episode {
    pub rounds: Vec<RoundContext>,
    noise: Vec<Vec<f64>>,
}

impl Episode {
    pub fn draw(inst: &BanditInstance, rng: &mut SimRng) -> Result<Self> {
        let mut rounds = Vec::with_capacity(inst.horizon);
        let mut noise = Vec::with_capacity(inst.horizon);
        for _ in 0..inst.horizon {
            let ctx = inst.contexts.sample(rng)?;
            let k = inst.num_arms(&ctx)?;
            rounds.push(ctx);
            noise.push((0..k).map(|_| rng.sample(StandardNormal)).collect());
        }
        Ok(Self { rounds, noise })
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    pub fn noise(&self, round_index: usize, arm: usize) -> f64 {
        self.noise[round_index][arm]
    }
}

/// Play one policy through an episode.
pub fn run_one(
    inst: &BanditInstance,
    episode: &Episode,
    policy: &mut dyn Policy,
    rng: &mut SimRng,
) -> Result<Vec<RunRecord>> {
    let wrap = |round: usize, policy: &dyn Policy, e: Error| Error::Policy {
        policy: policy.name().to_string(),
        round,
        source: Box::new(e),
    };
    let mut records = Vec::with_capacity(episode.horizon());
    for (i, ctx) in episode.rounds.iter().enumerate() {
        let round = i + 1;
        let decision = policy
            .select(&ctx.visible, rng)
            .map_err(|e| wrap(round, policy, e))?;
        let a = decision.action;
        let state = inst.state_at(round);
        let means = inst.true_model.arm_means(ctx.for_truth(), state)?;
        if a.0 >= means.len() {
            return Err(wrap(
                round,
                policy,
                Error::Dimension {
                    what: "selected arm",
                    expected: means.len(),
                    got: a.0,
                },
            ));
        }
        let expected = means[a.0];
        let best =
            argmax_first(&means).ok_or_else(|| Error::Numerical("no finite true mean".into()))?;
        let reward = expected + inst.noise_sigma * episode.noise(i, a.0);
        policy
            .observe(&ctx.visible, &decision, reward)
            .map_err(|e| wrap(round, policy, e))?;
        records.push(RunRecord {
            round,
            action: a,
            reward,
            expected_reward: expected,
            instant_regret: (means[best] - expected).max(0.0),
            believed_state: decision.believed_state,
            true_state: state,
            optimal_action: ActionId(best),
            item: ctx.items.as_ref().map(|ids| ids[a.0]),
        });
    }
    Ok(records)
}

/// Everything needed to build policies for one run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub instance: BanditInstance,
    /// Offline model handed to the model-based policies.
    pub model: LatentModel,
    pub model_prior: GaussianModelPrior,
    pub latent_prior: LatentPrior,
    /// Range used to scale rewards into `[0, 1]` for EXP4.
    pub reward_range: (f64, f64),
    /// Slack used by mmUCB when none is configured.
    pub default_epsilon: f64,
}

impl RunSetup {
    pub fn num_arms(&self) -> Result<usize> {
        match &self.model {
            LatentModel::Tabular { means } => Ok(means.ncols()),
            LatentModel::Linear { .. } => {
                let ctx = self.instance.contexts.sample(&mut crate::rng::seeded(0))?;
                Ok(ctx.visible.num_arms().unwrap_or(0))
            }
        }
    }
}

/// Source of per-run instances.
pub trait Scenario: Sync {
    fn setup(&self, run: usize, rng: &mut SimRng) -> Result<RunSetup>;
}

/// Policies selectable by name in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    Ucb1 {},
    Ts {},
    Linucb {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "one")]
        lambda: f64,
    },
    Lints {
        #[serde(default = "one")]
        lambda: f64,
    },
    Exp4 {
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Mucb {},
    Mmucb {
        #[serde(default)]
        epsilon: Option<f64>,
    },
    Mts {},
    Mmts {
        #[serde(default)]
        mode: ModeName,
    },
    SwMucb {
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default)]
        confidence: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_window() -> usize {
    128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    TwoStage,
    #[default]
    ExactConjugate,
}

impl From<ModeName> for ConditionalMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::TwoStage => ConditionalMode::TwoStage,
            ModeName::ExactConjugate => ConditionalMode::ExactConjugate,
        }
    }
}

pub const POLICY_NAMES: &[&str] = &[
    "ucb1", "ts", "linucb", "lints", "exp4", "mucb", "mmucb", "mts", "mmts", "sw-mucb",
];

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Ucb1 {} => "ucb1",
            Self::Ts {} => "ts",
            Self::Linucb { .. } => "linucb",
            Self::Lints { .. } => "lints",
            Self::Exp4 { .. } => "exp4",
            Self::Mucb {} => "mucb",
            Self::Mmucb { .. } => "mmucb",
            Self::Mts {} => "mts",
            Self::Mmts { .. } => "mmts",
            Self::SwMucb { .. } => "sw-mucb",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "ucb1" => Self::Ucb1 {},
            "ts" => Self::Ts {},
            "linucb" => Self::Linucb {
                alpha: 1.0,
                lambda: 1.0,
            },
            "lints" => Self::Lints { lambda: 1.0 },
            "exp4" => Self::Exp4 {
                eta: None,
                gamma: None,
            },
            "mucb" => Self::Mucb {},
            "mmucb" => Self::Mmucb { epsilon: None },
            "mts" => Self::Mts {},
            "mmts" => Self::Mmts {
                mode: ModeName::default(),
            },
            "sw-mucb" => Self::SwMucb {
                window: default_window(),
                confidence: None,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown policy `{other}`, expected one of: {}",
                    POLICY_NAMES.join(", ")
                )))
            }
        })
    }

    /// Whether the policy needs per-arm feature contexts.
    pub fn needs_features(&self) -> bool {
        matches!(self, Self::Linucb { .. } | Self::Lints { .. })
    }

    /// Whether the policy only works without per-arm features.
    pub fn needs_independent_arms(&self) -> bool {
        matches!(self, Self::Ucb1 {} | Self::Ts {})
    }

    pub fn build(&self, setup: &RunSetup) -> Result<Box<dyn Policy>> {
        let sigma = setup.instance.noise_sigma;
        let horizon = setup.instance.horizon;
        let name = self.label();
        let model = setup.model.clone();
        let tabular_arms = || match &setup.model {
            LatentModel::Tabular { means } => Ok(means.ncols()),
            LatentModel::Linear { .. } => Err(Error::Config(format!(
                "policy `{name}` needs a non-contextual problem"
            ))),
        };
        let linear_dim = || match &setup.model {
            LatentModel::Linear { params } => Ok(params[0].len()),
            LatentModel::Tabular { .. } => Err(Error::Config(format!(
                "policy `{name}` needs a contextual (linear) problem"
            ))),
        };
        Ok(match self {
            Self::Ucb1 {} => Box::new(Ucb1::new(name, tabular_arms()?, sigma)?),
            Self::Ts {} => Box::new(GaussianTs::new(name, tabular_arms()?, sigma)?),
            Self::Linucb { alpha, lambda } => {
                Box::new(LinUcb::new(name, linear_dim()?, *lambda, *alpha)?)
            }
            Self::Lints { lambda } => Box::new(LinTs::new(name, linear_dim()?, *lambda, sigma)?),
            Self::Exp4 { eta, gamma } => {
                let (e0, g0) =
                    Exp4State::default_rates(model.num_states(), setup.num_arms()?, horizon);
                Box::new(Exp4::new(
                    name,
                    model,
                    eta.unwrap_or(e0),
                    gamma.unwrap_or(g0),
                    setup.reward_range,
                )?)
            }
            Self::Mucb {} => Box::new(ModelUcb::new(name, model, horizon, sigma, 0.0)?),
            Self::Mmucb { epsilon } => Box::new(ModelUcb::new(
                name,
                model,
                horizon,
                sigma,
                epsilon.unwrap_or(setup.default_epsilon),
            )?),
            Self::Mts {} => Box::new(ModelTs::new(name, model, &setup.latent_prior, sigma)?),
            Self::Mmts { mode } => {
                if setup.model.is_linear() {
                    Box::new(LinearGaussianMmts::new(
                        name,
                        &setup.latent_prior,
                        setup.model_prior.clone(),
                        sigma,
                        (*mode).into(),
                    )?)
                } else {
                    Box::new(IndependentGaussianMmts::new(
                        name,
                        &setup.latent_prior,
                        setup.model_prior.clone(),
                        sigma,
                    )?)
                }
            }
            Self::SwMucb { window, confidence } => Box::new(SlidingWindowUcb::new(
                name,
                model,
                *window,
                confidence.unwrap_or_else(|| SlidingWindowUcb::default_confidence(sigma)),
            )?),
        })
    }
}

/// Reject duplicate policy labels.
pub fn check_policy_list(policies: &[PolicySpec]) -> Result<()> {
    if policies.is_empty() {
        return Err(Error::Config("policy list is empty".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in policies {
        if !seen.insert(p.label()) {
            return Err(Error::Config(format!(
                "policy `{}` listed twice",
                p.label()
            )));
        }
    }
    Ok(())
}

/// Synthetic protocol: fresh mean table, state and perturbed model per run.
#[derive(Debug, Clone)]
pub struct SynthScenario {
    pub cfg: SynthConfig,
    pub prior: LatentPrior,
}

impl SynthScenario {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let prior = LatentPrior::uniform(cfg.states)?;
        Ok(Self { cfg, prior })
    }

    pub fn with_prior(cfg: SynthConfig, prior: LatentPrior) -> Result<Self> {
        cfg.validate()?;
        if prior.len() != cfg.states {
            return Err(Error::Dimension {
                what: "latent prior",
                expected: cfg.states,
                got: prior.len(),
            });
        }
        Ok(Self { cfg, prior })
    }
}

impl Scenario for SynthScenario {
    fn setup(&self, _run: usize, rng: &mut SimRng) -> Result<RunSetup> {
        let cfg = &self.cfg;
        let true_state = sample_instance_state(&self.prior, rng);
        let truth = gen_synth_instance(cfg, rng)?;
        let model = perturb_model(&truth, cfg.model_sigma, rng)?;
        let spread = if cfg.model_sigma > 0.0 {
            PriorSpread::Isotropic(cfg.model_sigma * cfg.model_sigma)
        } else {
            PriorSpread::PointMass
        };
        let model_prior = GaussianModelPrior::centred_on(&model, spread)?;
        let reward_range = model.mean_range().unwrap_or((0.0, 1.0));
        let reward_range = if reward_range.1 > reward_range.0 {
            reward_range
        } else {
            (0.0, 1.0)
        };
        let instance = BanditInstance::new(
            truth,
            true_state,
            cfg.noise_sigma,
            Arc::new(NoContext),
            cfg.horizon,
        )?;
        Ok(RunSetup {
            instance,
            model,
            model_prior,
            latent_prior: self.prior.clone(),
            reward_range,
            default_epsilon: cfg.model_sigma,
        })
    }
}

/// One replication: every policy on the same instance and episode.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub true_state: StateId,
    /// One trace per policy, in policy-list order.
    pub traces: Vec<Vec<RunRecord>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub policies: Vec<String>,
    pub horizon: usize,
    pub runs: Vec<RunResult>,
}

/// Per-round summary of one policy across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub policy: String,
    pub mean_reward: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Average over the lowest-final-reward decile of runs (needs >= 10 runs).
    pub worst_decile: Option<Vec<f64>>,
    pub mean_cum_regret: Vec<f64>,
}

impl AggregateCurve {
    pub fn horizon(&self) -> usize {
        self.mean_reward.len()
    }
}

/// Run `policies` on `runs` replications of `scenario`.
pub fn run_experiment(
    scenario: &dyn Scenario,
    policies: &[PolicySpec],
    runs: usize,
    master_seed: u64,
    threads: usize,
) -> Result<ExperimentResult> {
    check_policy_list(policies)?;
    if runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    let one_run = |run: usize| -> Result<RunResult> {
        let seeds = RunSeeds::new(master_seed, run as u64);
        let setup = scenario.setup(run, &mut seeds.stream(STREAM_INSTANCE))?;
        let episode = Episode::draw(&setup.instance, &mut seeds.stream(STREAM_EPISODE))?;
        let mut traces = Vec::with_capacity(policies.len());
        for spec in policies {
            let mut policy = spec.build(&setup)?;
            let mut rng = seeds.stream(STREAM_POLICY);
            traces.push(run_one(
                &setup.instance,
                &episode,
                policy.as_mut(),
                &mut rng,
            )?);
        }
        Ok(RunResult {
            run,
            true_state: setup.instance.true_state,
            traces,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<RunResult> = pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(one_run)
            .collect::<Result<_>>()
    })?;
    let horizon = results
        .first()
        .and_then(|r| r.traces.first())
        .map_or(0, Vec::len);
    Ok(ExperimentResult {
        policies: policies.iter().map(|p| p.label().to_string()).collect(),
        horizon,
        runs: results,
    })
}

/// Synthetic Bayes-regret experiment: the true state of each run is drawn
/// from `prior`.
pub fn run_bayes(
    cfg: &SynthConfig,
    prior: &LatentPrior,
    policies: &[PolicySpec],
    threads: usize,
) -> Result<ExperimentResult> {
    let scenario = SynthScenario::with_prior(cfg.clone(), prior.clone())?;
    run_experiment(&scenario, policies, cfg.runs, cfg.seed, threads)
}

/// Per-round mean and standard error across runs; stderr is 0 for one run.
pub fn mean_and_stderr(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let runs = series.len();
    let n = series.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; n];
    let mut se = vec![0.0; n];
    if runs == 0 {
        return (mean, se);
    }
    for t in 0..n {
        let m = series.iter().map(|s| s[t]).sum::<f64>() / runs as f64;
        mean[t] = m;
        if runs > 1 {
            let var = series.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / (runs - 1) as f64;
            se[t] = (var / runs as f64).sqrt();
        }
    }
    (mean, se)
}

/// Indices of the `ceil(runs / 10)` runs with the lowest final value.
pub fn worst_decile_runs(series: &[Vec<f64>]) -> Result<Vec<usize>> {
    if series.len() < 10 {
        return Err(Error::invalid(format!(
            "worst-decile slicing needs >= 10 runs, got {}",
            series.len()
        )));
    }
    let take = series.len().div_ceil(10);
    let mut order: Vec<usize> = (0..series.len()).collect();
    let last = |i: usize| *series[i].last().unwrap_or(&f64::NAN);
    // stable: equal final values keep run order
    order.sort_by(|&a, &b| last(a).total_cmp(&last(b)));
    order.truncate(take);
    Ok(order)
}

/// Per-round average over the worst decile of runs.
pub fn worst_decile(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let idx = worst_decile_runs(series)?;
    let subset: Vec<Vec<f64>> = idx.iter().map(|&i| series[i].clone()).collect();
    Ok(mean_and_stderr(&subset).0)
}

/// Optional transform applied to per-run reward series before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Average reward up to each round.
    RunningMean,
}

impl Smoothing {
    pub fn apply(self, series: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        match self {
            Smoothing::None => series,
            Smoothing::RunningMean => series
                .into_iter()
                .map(|s| {
                    let mut acc = 0.0;
                    s.iter()
                        .enumerate()
                        .map(|(i, v)| {
                            acc += v;
                            acc / (i + 1) as f64
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl ExperimentResult {
    pub fn policy_index(&self, name: &str) -> Option<usize> {
        self.policies.iter().position(|p| p == name)
    }

    /// `runs x horizon` matrix of a per-record quantity for one policy.
    pub fn series(&self, policy: usize, f: impl Fn(&RunRecord) -> f64) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| r.traces[policy].iter().map(&f).collect())
            .collect()
    }

    pub fn cumulative_regret(&self, policy: usize) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                r.traces[policy]
                    .iter()
                    .map(|rec| {
                        acc += rec.instant_regret;
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    pub fn curves(&self) -> Vec<AggregateCurve> {
        self.curves_with(Smoothing::None, |r| r.reward)
    }

    /// Curves over `value` (realized reward by default), smoothed per run.
    pub fn curves_with(
        &self,
        smoothing: Smoothing,
        value: impl Fn(&RunRecord) -> f64,
    ) -> Vec<AggregateCurve> {
        (0..self.policies.len())
            .map(|p| {
                let rewards = smoothing.apply(self.series(p, &value));
                let (mean_reward, stderr) = mean_and_stderr(&rewards);
                let worst = worst_decile(&rewards).ok();
                let (mean_cum_regret, _) = mean_and_stderr(&self.cumulative_regret(p));
                AggregateCurve {
                    policy: self.policies[p].clone(),
                    mean_reward,
                    stderr,
                    worst_decile: worst,
                    mean_cum_regret,
                }
            })
            .collect()
    }
}
