//! Shared domain types: latent reward models, contexts, priors, environments
//! and per-round regret accounting.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{argmax_first, sample_categorical, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-round context: one feature row per arm, or nothing for
/// non-contextual problems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    features: Option<DMatrix<f64>>,
}

impl Context {
    pub fn empty() -> Self {
        Self { features: None }
    }

    pub fn from_features(features: DMatrix<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("context features must be finite"));
        }
        Ok(Self {
            features: Some(features),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("context rows have unequal length"));
        }
        Self::from_features(DMatrix::from_fn(k, d, |i, j| rows[i][j]))
    }

    pub fn features(&self) -> Option<&DMatrix<f64>> {
        self.features.as_ref()
    }

    pub fn num_arms(&self) -> Option<usize> {
        self.features.as_ref().map(DMatrix::nrows)
    }

    pub fn dim(&self) -> usize {
        self.features.as_ref().map_or(0, DMatrix::ncols)
    }

    /// Feature row of arm `a` as a column vector.
    pub fn arm(&self, a: ActionId) -> Result<DVector<f64>> {
        let x = self.features.as_ref().ok_or(Error::Dimension {
            what: "context features",
            expected: 1,
            got: 0,
        })?;
        if a.0 >= x.nrows() {
            return Err(Error::Dimension {
                what: "context arm index",
                expected: x.nrows(),
                got: a.0,
            });
        }
        Ok(x.row(a.0).transpose())
    }
}

/// Mean-reward model `mu(a, x, s, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatentModel {
    /// `means[(s, a)]`, one row per latent state.
    Tabular { means: DMatrix<f64> },
    /// One parameter vector per state; `mu = <x_a, theta_s>`.
    Linear { params: Vec<DVector<f64>> },
}

impl LatentModel {
    pub fn tabular(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.len();
        if s == 0 {
            return Err(Error::invalid("model needs at least one latent state"));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(Error::invalid("tabular model needs at least one arm"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Dimension {
                what: "tabular model row",
                expected: k,
                got: bad.len(),
            });
        }
        Self::from_means(DMatrix::from_fn(s, k, |i, j| rows[i][j]))
    }

    pub fn from_means(means: DMatrix<f64>) -> Result<Self> {
        if means.nrows() == 0 || means.ncols() == 0 {
            return Err(Error::invalid("tabular model must be at least 1 x 1"));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model means must be finite"));
        }
        Ok(Self::Tabular { means })
    }

    pub fn linear(params: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_params(params.into_iter().map(DVector::from_vec).collect())
    }

    pub fn from_params(params: Vec<DVector<f64>>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::invalid("model needs at least one latent state"));
        }
        let d = params[0].len();
        if d == 0 {
            return Err(Error::invalid("linear model needs dimension >= 1"));
        }
        if let Some(bad) = params.iter().find(|p| p.len() != d) {
            return Err(Error::Dimension {
                what: "linear model parameter",
                expected: d,
                got: bad.len(),
            });
        }
        if params.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self::Linear { params })
    }

    pub fn num_states(&self) -> usize {
        match self {
            Self::Tabular { means } => means.nrows(),
            Self::Linear { params } => params.len(),
        }
    }

    /// Number of arms this model ranks for context `x`.
    pub fn num_arms(&self, x: &Context) -> Result<usize> {
        match self {
            Self::Tabular { means } => Ok(means.ncols()),
            Self::Linear { .. } => x.num_arms().ok_or(Error::Dimension {
                what: "context features",
                expected: 1,
                got: 0,
            }),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear { .. })
    }

    fn check_state(&self, s: StateId) -> Result<()> {
        if s.0 >= self.num_states() {
            return Err(Error::Dimension {
                what: "state index",
                expected: self.num_states(),
                got: s.0,
            });
        }
        Ok(())
    }

    pub fn mean_reward(&self, a: ActionId, x: &Context, s: StateId) -> Result<f64> {
        self.check_state(s)?;
        match self {
            Self::Tabular { means } => {
                if a.0 >= means.ncols() {
                    return Err(Error::Dimension {
                        what: "arm index",
                        expected: means.ncols(),
                        got: a.0,
                    });
                }
                Ok(means[(s.0, a.0)])
            }
            Self::Linear { params } => {
                let theta = &params[s.0];
                let xa = x.arm(a)?;
                if xa.len() != theta.len() {
                    return Err(Error::Dimension {
                        what: "context feature dimension",
                        expected: theta.len(),
                        got: xa.len(),
                    });
                }
                Ok(xa.dot(theta))
            }
        }
    }

    /// Mean rewards of every arm under state `s`.
    pub fn arm_means(&self, x: &Context, s: StateId) -> Result<Vec<f64>> {
        self.check_state(s)?;
        match self {
            Self::Tabular { means } => Ok(means.row(s.0).iter().copied().collect()),
            Self::Linear { params } => {
                let theta = &params[s.0];
                let feats = x.features().ok_or(Error::Dimension {
                    what: "context features",
                    expected: theta.len(),
                    got: 0,
                })?;
                if feats.ncols() != theta.len() {
                    return Err(Error::Dimension {
                        what: "context feature dimension",
                        expected: theta.len(),
                        got: feats.ncols(),
                    });
                }
                Ok((feats * theta).iter().copied().collect())
            }
        }
    }

    /// Arm each state would play (lowest index on ties).
    pub fn best_arm(&self, x: &Context, s: StateId) -> Result<ActionId> {
        let means = self.arm_means(x, s)?;
        argmax_first(&means)
            .map(ActionId)
            .ok_or_else(|| Error::Numerical("no finite arm mean".into()))
    }

    /// Smallest and largest mean over the whole table (tabular only).
    pub fn mean_range(&self) -> Option<(f64, f64)> {
        match self {
            Self::Tabular { means } => Some((means.min(), means.max())),
            Self::Linear { .. } => None,
        }
    }
}

/// Spread of the Gaussian model prior around the per-state means.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpread {
    /// Zero variance: the model is known exactly.
    PointMass,
    /// `sigma_0^2 I` (independent arms).
    Isotropic(f64),
    /// One SPD covariance per state (linear models).
    Full(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModelPrior {
    means: Vec<DVector<f64>>,
    spread: PriorSpread,
}

impl GaussianModelPrior {
    pub fn point_mass(means: Vec<DVector<f64>>) -> Result<Self> {
        Self::validated(means, PriorSpread::PointMass)
    }

    pub fn isotropic(means: Vec<DVector<f64>>, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!(
                "prior variance must be positive and finite, got {variance}"
            )));
        }
        Self::validated(means, PriorSpread::Isotropic(variance))
    }

    pub fn full(means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if covariances.len() != means.len() {
            return Err(Error::Dimension {
                what: "prior covariance count",
                expected: means.len(),
                got: covariances.len(),
            });
        }
        for cov in &covariances {
            let d = means[0].len();
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::Dimension {
                    what: "prior covariance size",
                    expected: d,
                    got: cov.nrows(),
                });
            }
            if (cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1.0) {
                return Err(Error::invalid("prior covariance is not symmetric"));
            }
            if cov.clone().cholesky().is_none() {
                return Err(Error::Numerical(
                    "prior covariance is not positive definite".into(),
                ));
            }
        }
        Self::validated(means, PriorSpread::Full(covariances))
    }

    /// Same covariance for every state.
    pub fn shared(means: Vec<DVector<f64>>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = means.len();
        Self::full(means, vec![covariance; n])
    }

    /// Prior centred on a model's own parameters.
    pub fn centred_on(model: &LatentModel, spread: PriorSpread) -> Result<Self> {
        let means = match model {
            LatentModel::Tabular { means } => (0..means.nrows())
                .map(|s| means.row(s).transpose())
                .collect(),
            LatentModel::Linear { params } => params.clone(),
        };
        match spread {
            PriorSpread::PointMass => Self::point_mass(means),
            PriorSpread::Isotropic(v) => Self::isotropic(means, v),
            PriorSpread::Full(c) => Self::full(means, c),
        }
    }

    fn validated(means: Vec<DVector<f64>>, spread: PriorSpread) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::invalid("prior needs at least one state"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("prior means must share a positive length"));
        }
        if means.iter().flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior means must be finite"));
        }
        Ok(Self { means, spread })
    }

    pub fn num_states(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn mean(&self, s: StateId) -> &DVector<f64> {
        &self.means[s.0]
    }

    pub fn spread(&self) -> &PriorSpread {
        &self.spread
    }

    /// Model whose parameters are the prior means.
    pub fn mean_model(&self, linear: bool) -> LatentModel {
        if linear {
            LatentModel::Linear {
                params: self.means.clone(),
            }
        } else {
            LatentModel::Tabular {
                means: DMatrix::from_fn(self.means.len(), self.dim(), |s, a| self.means[s][a]),
            }
        }
    }
}

/// Prior over latent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    probs: Vec<f64>,
}

impl LatentPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("latent prior is empty"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid(
                "latent prior entries must be finite and >= 0",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "latent prior sums to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::invalid("latent prior is empty"));
        }
        Ok(Self {
            probs: vec![1.0 / num_states as f64; num_states],
        })
    }

    pub fn point_mass(num_states: usize, s: StateId) -> Result<Self> {
        if s.0 >= num_states {
            return Err(Error::Dimension {
                what: "state index",
                expected: num_states,
                got: s.0,
            });
        }
        let mut probs = vec![0.0; num_states];
        probs[s.0] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn sample_instance_state(prior: &LatentPrior, rng: &mut SimRng) -> StateId {
    StateId(sample_categorical(prior.probs(), rng))
}

/// Context shown to the policy plus, optionally, the environment-only
/// features used to evaluate the true mean (e.g. held-out item factors).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundContext {
    pub visible: Context,
    pub truth: Option<Context>,
    /// Item identifiers behind each arm, when arms are sampled items.
    pub items: Option<Vec<usize>>,
}

impl RoundContext {
    pub fn plain(visible: Context) -> Self {
        Self {
            visible,
            truth: None,
            items: None,
        }
    }

    /// Context used for the environment's own mean computation.
    pub fn for_truth(&self) -> &Context {
        self.truth.as_ref().unwrap_or(&self.visible)
    }
}

/// I.i.d. per-round context generator.
pub trait ContextProcess: Send + Sync + fmt::Debug {
    fn sample(&self, rng: &mut SimRng) -> Result<RoundContext>;
}

/// Non-contextual problems: always the empty context.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoContext;

impl ContextProcess for NoContext {
    fn sample(&self, _rng: &mut SimRng) -> Result<RoundContext> {
        Ok(RoundContext::default())
    }
}

/// Fixed context repeated every round.
#[derive(Debug, Clone)]
pub struct FixedContext(pub RoundContext);

impl ContextProcess for FixedContext {
    fn sample(&self, _rng: &mut SimRng) -> Result<RoundContext> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct BanditInstance {
    pub true_model: LatentModel,
    pub true_state: StateId,
    pub noise_sigma: f64,
    pub contexts: Arc<dyn ContextProcess>,
    pub horizon: usize,
    /// `(round, state)` switches for piecewise-stationary runs, sorted by round.
    pub switches: Vec<(usize, StateId)>,
}

impl BanditInstance {
    pub fn new(
        true_model: LatentModel,
        true_state: StateId,
        noise_sigma: f64,
        contexts: Arc<dyn ContextProcess>,
        horizon: usize,
    ) -> Result<Self> {
        if true_state.0 >= true_model.num_states() {
            return Err(Error::Dimension {
                what: "true state",
                expected: true_model.num_states(),
                got: true_state.0,
            });
        }
        if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sigma must be positive, got {noise_sigma}"
            )));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        Ok(Self {
            true_model,
            true_state,
            noise_sigma,
            contexts,
            horizon,
            switches: Vec::new(),
        })
    }

    /// Make the latent state change to `state` from round `round` on.
    pub fn with_switch(mut self, round: usize, state: StateId) -> Result<Self> {
        if state.0 >= self.true_model.num_states() {
            return Err(Error::Dimension {
                what: "switch state",
                expected: self.true_model.num_states(),
                got: state.0,
            });
        }
        if self.switches.last().is_some_and(|&(r, _)| r >= round) {
            return Err(Error::invalid("switch rounds must increase"));
        }
        self.switches.push((round, state));
        Ok(self)
    }

    /// Latent state in effect at 1-based `round`.
    pub fn state_at(&self, round: usize) -> StateId {
        self.switches
            .iter()
            .rev()
            .find(|&&(r, _)| r <= round)
            .map_or(self.true_state, |&(_, s)| s)
    }

    pub fn true_mean(&self, a: ActionId, x: &RoundContext) -> Result<f64> {
        self.true_model
            .mean_reward(a, x.for_truth(), self.true_state)
    }

    pub fn true_means(&self, x: &RoundContext) -> Result<Vec<f64>> {
        self.true_model.arm_means(x.for_truth(), self.true_state)
    }

    pub fn num_arms(&self, x: &RoundContext) -> Result<usize> {
        self.true_model.num_arms(x.for_truth())
    }

    /// `mu(a, x, s*, theta*) + sigma z`, with `z` standard normal from `rng`.
    pub fn draw_reward(&self, a: ActionId, x: &RoundContext, rng: &mut SimRng) -> Result<f64> {
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.true_mean(a, x)? + self.noise_sigma * z)
    }

    /// Best true mean minus the mean of `a`; zero iff `a` is optimal.
    pub fn instant_regret(&self, x: &RoundContext, a: ActionId) -> Result<f64> {
        let means = self.true_means(x)?;
        if a.0 >= means.len() {
            return Err(Error::Dimension {
                what: "arm index",
                expected: means.len(),
                got: a.0,
            });
        }
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((best - means[a.0]).max(0.0))
    }

    pub fn optimal_action(&self, x: &RoundContext) -> Result<ActionId> {
        let means = self.true_means(x)?;
        argmax_first(&means)
            .map(ActionId)
            .ok_or_else(|| Error::Numerical("no finite true mean".into()))
    }
}

/// One round of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub round: usize,
    pub action: ActionId,
    pub reward: f64,
    /// True mean of the pulled arm.
    pub expected_reward: f64,
    pub instant_regret: f64,
    pub believed_state: Option<StateId>,
    /// Latent state in effect this round.
    pub true_state: StateId,
    pub optimal_action: ActionId,
    /// Catalogue id of the pulled arm, when arms are items.
    pub item: Option<usize>,
}
