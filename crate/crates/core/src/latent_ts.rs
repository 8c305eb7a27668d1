//! Thompson sampling over latent states.
//!
//! [`ModelTs`] samples a state from the filtering posterior of a known model
//! and plays that state's best arm. The model-uncertain variants sample the
//! state from its marginal posterior, then the state's parameters from their
//! Gaussian conditional posterior, and act greedily on the sampled
//! parameters:
//!
//! * [`IndependentGaussianMmts`]: tabular means with an `N(theta_bar, s0^2 I)` prior.
//! * [`LinearGaussianMmts`]: linear rewards `x_a' theta_s` with an
//!   `N(theta_bar_s, Sigma_0)` prior.
//!
//! Every round consumes the policy rng in a fixed order: state draw,
//! parameter draw, tie-break.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize};
use crate::model::{
    ActionId, Context, GaussianModelPrior, LatentModel, LatentPrior, PriorSpread, StateId,
};
use crate::policy::{Decision, Policy};
use crate::rng::{argmax_tie_break, sample_categorical, SimRng};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(r | mean, var)`.
pub fn log_normal_density(r: f64, mean: f64, var: f64) -> f64 {
    let z = r - mean;
    -0.5 * (LN_2PI + var.ln()) - z * z / (2.0 * var)
}

/// Unnormalized log-weights over latent states.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePosterior {
    log_weights: Vec<f64>,
}

impl StatePosterior {
    pub fn from_prior(prior: &LatentPrior) -> Self {
        Self {
            log_weights: prior.probs().iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(Error::DegeneratePosterior);
        }
        Ok(Self { log_weights })
    }

    pub fn num_states(&self) -> usize {
        self.log_weights.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Add one log-likelihood per state and re-centre so the largest
    /// finite weight is 0.
    ///
    /// An observation that is impossible under every live state (all sums
    /// `-inf`, e.g. from overflowing squared residuals) is ignored.
    pub fn absorb(&mut self, log_likelihoods: &[f64]) -> Result<()> {
        if log_likelihoods.len() != self.log_weights.len() {
            return Err(Error::Dimension {
                what: "log-likelihood vector",
                expected: self.log_weights.len(),
                got: log_likelihoods.len(),
            });
        }
        if log_likelihoods
            .iter()
            .any(|l| l.is_nan() || *l == f64::INFINITY)
        {
            return Err(Error::Numerical("non-finite log-likelihood".into()));
        }
        let next: Vec<f64> = self
            .log_weights
            .iter()
            .zip(log_likelihoods)
            .map(|(w, l)| w + l)
            .collect();
        let max = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Ok(());
        }
        self.log_weights = next.into_iter().map(|w| w - max).collect();
        Ok(())
    }

    /// Normalized probabilities via log-sum-exp.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegeneratePosterior);
        }
        let exps: Vec<f64> = self.log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn sample(&self, rng: &mut SimRng) -> Result<StateId> {
        let probs = self.probabilities()?;
        Ok(StateId(sample_categorical(&probs, rng)))
    }
}

/// Per-state log-likelihoods of `r` for arm `a` under a known model.
pub fn known_model_log_likelihoods(
    model: &LatentModel,
    x: &Context,
    a: ActionId,
    r: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    let var = sigma * sigma;
    (0..model.num_states())
        .map(|s| {
            Ok(log_normal_density(
                r,
                model.mean_reward(a, x, StateId(s))?,
                var,
            ))
        })
        .collect()
}

/// Filtering update of the known-model state posterior.
pub fn mts_update(
    post: &mut StatePosterior,
    model: &LatentModel,
    x: &Context,
    a: ActionId,
    r: f64,
    sigma: f64,
) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !r.is_finite() {
        return Err(Error::Numerical(format!("non-finite reward {r}")));
    }
    post.absorb(&known_model_log_likelihoods(model, x, a, r, sigma)?)
}

/// Sample `B_t` and play its best arm (ties uniform).
pub fn mts_step(
    post: &StatePosterior,
    model: &LatentModel,
    x: &Context,
    rng: &mut SimRng,
) -> Result<(StateId, ActionId, f64)> {
    let s = post.sample(rng)?;
    let means = model.arm_means(x, s)?;
    let a = argmax_tie_break(&means, rng)
        .ok_or_else(|| Error::Numerical("all predicted means are NaN".into()))?;
    Ok((s, ActionId(a), means[a]))
}

/// One logged interaction, used for batch recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub context: Context,
    pub action: ActionId,
    pub reward: f64,
    pub believed_state: StateId,
}

/// mTS: Thompson sampling with a known model.
#[derive(Debug, Clone)]
pub struct ModelTs {
    name: String,
    model: LatentModel,
    posterior: StatePosterior,
    sigma: f64,
}

impl ModelTs {
    pub fn new(
        name: impl Into<String>,
        model: LatentModel,
        prior: &LatentPrior,
        sigma: f64,
    ) -> Result<Self> {
        if prior.len() != model.num_states() {
            return Err(Error::Dimension {
                what: "latent prior",
                expected: model.num_states(),
                got: prior.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            name: name.into(),
            model,
            posterior: StatePosterior::from_prior(prior),
            sigma,
        })
    }

    pub fn posterior(&self) -> &StatePosterior {
        &self.posterior
    }
}

impl Policy for ModelTs {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let (s, a, pred) = mts_step(&self.posterior, &self.model, x, rng)?;
        Ok(Decision {
            action: a,
            believed_state: Some(s),
            predicted: Some(pred),
        })
    }

    fn observe(&mut self, x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        mts_update(
            &mut self.posterior,
            &self.model,
            x,
            decision.action,
            reward,
            self.sigma,
        )
    }
}

/// Known-model posterior recomputed from a full history.
pub fn mts_posterior(
    prior: &LatentPrior,
    model: &LatentModel,
    history: &[Observation],
    sigma: f64,
) -> Result<StatePosterior> {
    let mut post = StatePosterior::from_prior(prior);
    for obs in history {
        mts_update(
            &mut post,
            model,
            &obs.context,
            obs.action,
            obs.reward,
            sigma,
        )?;
    }
    Ok(post)
}

fn prior_variance_scalar(mprior: &GaussianModelPrior) -> Result<f64> {
    match mprior.spread() {
        PriorSpread::PointMass => Ok(0.0),
        PriorSpread::Isotropic(v) => Ok(*v),
        PriorSpread::Full(_) => Err(Error::invalid(
            "independent-arm model prior needs an isotropic or point-mass spread",
        )),
    }
}

/// Per-(state, arm) counts and reward sums, attributed to the believed state.
#[derive(Debug, Clone, PartialEq)]
pub struct IndepGaussSuffStats {
    counts: Vec<Vec<u64>>,
    sums: Vec<Vec<f64>>,
}

impl IndepGaussSuffStats {
    pub fn new(num_states: usize, num_arms: usize) -> Self {
        Self {
            counts: vec![vec![0; num_arms]; num_states],
            sums: vec![vec![0.0; num_arms]; num_states],
        }
    }

    pub fn update(&mut self, s: StateId, a: ActionId, r: f64) {
        self.counts[s.0][a.0] += 1;
        self.sums[s.0][a.0] += r;
    }

    /// Fold `count` observations with reward total `sum` in one step.
    pub fn absorb_pooled(&mut self, s: StateId, a: ActionId, count: u64, sum: f64) {
        self.counts[s.0][a.0] += count;
        self.sums[s.0][a.0] += sum;
    }

    pub fn count(&self, s: StateId, a: ActionId) -> u64 {
        self.counts[s.0][a.0]
    }

    pub fn sum(&self, s: StateId, a: ActionId) -> f64 {
        self.sums[s.0][a.0]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Per-state log marginal likelihoods of one observation under the
/// independent-arm prior: `N(r | theta_bar[s, a], s0^2 + sigma^2)`.
pub fn indep_marginal_log_likelihoods(
    mprior: &GaussianModelPrior,
    a: ActionId,
    r: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    let var = prior_variance_scalar(mprior)? + sigma * sigma;
    (0..mprior.num_states())
        .map(|s| {
            let mean = mprior.mean(StateId(s));
            if a.0 >= mean.len() {
                return Err(Error::Dimension {
                    what: "arm index",
                    expected: mean.len(),
                    got: a.0,
                });
            }
            Ok(log_normal_density(r, mean[a.0], var))
        })
        .collect()
}

/// Independent-arm marginal state posterior over a full history.
pub fn mmts_indep_marginal(
    prior: &LatentPrior,
    mprior: &GaussianModelPrior,
    history: &[Observation],
    sigma: f64,
) -> Result<StatePosterior> {
    let mut post = StatePosterior::from_prior(prior);
    for obs in history {
        post.absorb(&indep_marginal_log_likelihoods(
            mprior, obs.action, obs.reward, sigma,
        )?)?;
    }
    Ok(post)
}

/// Diagonal Gaussian over one state's arm means.
#[derive(Debug, Clone, PartialEq)]
pub struct IndepConditional {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl IndepConditional {
    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(&m, &v)| {
                if v == 0.0 {
                    m
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    m + v.sqrt() * z
                }
            })
            .collect()
    }
}

/// Conjugate posterior of `theta_s` given the observations attributed to `s`.
pub fn mmts_indep_conditional(
    mprior: &GaussianModelPrior,
    stats: &IndepGaussSuffStats,
    s: StateId,
    sigma: f64,
) -> Result<IndepConditional> {
    let prior_mean = mprior.mean(s);
    let k = prior_mean.len();
    let noise_prec = 1.0 / (sigma * sigma);
    match mprior.spread() {
        PriorSpread::PointMass => Ok(IndepConditional {
            means: prior_mean.iter().copied().collect(),
            variances: vec![0.0; k],
        }),
        PriorSpread::Isotropic(v0) => {
            let prior_prec = 1.0 / v0;
            let mut means = Vec::with_capacity(k);
            let mut variances = Vec::with_capacity(k);
            for a in 0..k {
                let n = stats.count(s, ActionId(a)) as f64;
                let kv = 1.0 / (prior_prec + n * noise_prec);
                let m = kv * (prior_prec * prior_mean[a] + noise_prec * stats.sum(s, ActionId(a)));
                means.push(m);
                variances.push(kv);
            }
            Ok(IndepConditional { means, variances })
        }
        PriorSpread::Full(_) => Err(Error::invalid(
            "independent-arm model prior needs an isotropic or point-mass spread",
        )),
    }
}

/// mmTS for independent arms (no context).
#[derive(Debug, Clone)]
pub struct IndependentGaussianMmts {
    name: String,
    mprior: GaussianModelPrior,
    sigma: f64,
    posterior: StatePosterior,
    stats: IndepGaussSuffStats,
}

impl IndependentGaussianMmts {
    pub fn new(
        name: impl Into<String>,
        prior: &LatentPrior,
        mprior: GaussianModelPrior,
        sigma: f64,
    ) -> Result<Self> {
        prior_variance_scalar(&mprior)?;
        if prior.len() != mprior.num_states() {
            return Err(Error::Dimension {
                what: "latent prior",
                expected: mprior.num_states(),
                got: prior.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let stats = IndepGaussSuffStats::new(mprior.num_states(), mprior.dim());
        Ok(Self {
            name: name.into(),
            mprior,
            sigma,
            posterior: StatePosterior::from_prior(prior),
            stats,
        })
    }

    pub fn posterior(&self) -> &StatePosterior {
        &self.posterior
    }

    pub fn stats(&self) -> &IndepGaussSuffStats {
        &self.stats
    }
}

impl Policy for IndependentGaussianMmts {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, _x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let s = self.posterior.sample(rng)?;
        let theta = mmts_indep_conditional(&self.mprior, &self.stats, s, self.sigma)?.sample(rng);
        let a = argmax_tie_break(&theta, rng)
            .ok_or_else(|| Error::Numerical("sampled parameters are NaN".into()))?;
        Ok(Decision {
            action: ActionId(a),
            believed_state: Some(s),
            predicted: Some(theta[a]),
        })
    }

    fn observe(&mut self, _x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::Numerical(format!("non-finite reward {reward}")));
        }
        let s = decision
            .believed_state
            .ok_or_else(|| Error::invalid("mmTS decision lacks believed state"))?;
        self.posterior.absorb(&indep_marginal_log_likelihoods(
            &self.mprior,
            decision.action,
            reward,
            self.sigma,
        )?)?;
        self.stats.update(s, decision.action, reward);
        Ok(())
    }
}

/// Per-state count, Gram matrix and moment vector for the linear model.
///
/// The Gram matrix is stored without the identity offset; [`Self::s_matrix`]
/// adds it back.
#[derive(Debug, Clone, PartialEq)]
pub struct LinGaussSuffStats {
    counts: Vec<u64>,
    gram: Vec<DMatrix<f64>>,
    moments: Vec<DVector<f64>>,
}

impl LinGaussSuffStats {
    pub fn new(num_states: usize, dim: usize) -> Self {
        Self {
            counts: vec![0; num_states],
            gram: vec![DMatrix::zeros(dim, dim); num_states],
            moments: vec![DVector::zeros(dim); num_states],
        }
    }

    pub fn update(&mut self, s: StateId, x: &DVector<f64>, r: f64) {
        self.counts[s.0] += 1;
        self.gram[s.0].ger(1.0, x, x, 1.0);
        self.moments[s.0].axpy(r, x, 1.0);
    }

    /// Fold pooled statistics of `count` observations at once.
    pub fn absorb_pooled(
        &mut self,
        s: StateId,
        count: u64,
        gram: &DMatrix<f64>,
        moment: &DVector<f64>,
    ) {
        self.counts[s.0] += count;
        self.gram[s.0] += gram;
        self.moments[s.0] += moment;
    }

    pub fn count(&self, s: StateId) -> u64 {
        self.counts[s.0]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `sum x x'` over rounds attributed to `s`.
    pub fn gram(&self, s: StateId) -> &DMatrix<f64> {
        &self.gram[s.0]
    }

    /// `I + sum x x'`.
    pub fn s_matrix(&self, s: StateId) -> DMatrix<f64> {
        let d = self.gram[s.0].nrows();
        DMatrix::identity(d, d) + &self.gram[s.0]
    }

    /// `sum x r`.
    pub fn moment(&self, s: StateId) -> &DVector<f64> {
        &self.moments[s.0]
    }
}

fn prior_covariance(mprior: &GaussianModelPrior, s: StateId) -> Option<DMatrix<f64>> {
    let d = mprior.dim();
    match mprior.spread() {
        PriorSpread::PointMass => None,
        PriorSpread::Isotropic(v) => Some(DMatrix::identity(d, d) * *v),
        PriorSpread::Full(c) => Some(c[s.0].clone()),
    }
}

/// Per-state log marginal likelihoods of one linear observation:
/// `N(r | x' theta_bar_s, x' Sigma_0 x + sigma^2)`.
pub fn lin_marginal_log_likelihoods(
    mprior: &GaussianModelPrior,
    x: &DVector<f64>,
    r: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    if x.len() != mprior.dim() {
        return Err(Error::Dimension {
            what: "context feature dimension",
            expected: mprior.dim(),
            got: x.len(),
        });
    }
    let noise = sigma * sigma;
    (0..mprior.num_states())
        .map(|s| {
            let s = StateId(s);
            let mean = x.dot(mprior.mean(s));
            let spread = match mprior.spread() {
                PriorSpread::PointMass => 0.0,
                PriorSpread::Isotropic(v) => v * x.dot(x),
                PriorSpread::Full(c) => (c[s.0].clone() * x).dot(x),
            };
            Ok(log_normal_density(r, mean, spread + noise))
        })
        .collect()
}

/// Linear marginal state posterior over a full history.
pub fn mmts_lin_marginal(
    prior: &LatentPrior,
    mprior: &GaussianModelPrior,
    history: &[Observation],
    sigma: f64,
) -> Result<StatePosterior> {
    let mut post = StatePosterior::from_prior(prior);
    for obs in history {
        let x = obs.context.arm(obs.action)?;
        post.absorb(&lin_marginal_log_likelihoods(
            mprior, &x, obs.reward, sigma,
        )?)?;
    }
    Ok(post)
}

/// How the linear conditional posterior combines prior and data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditionalMode {
    /// Two-stage combination of the ridge estimate `S^-1 F` (covariance
    /// `sigma^2 S^-1`) with the prior, weighted by the state's count.
    TwoStage,
    /// Standard Bayesian linear regression:
    /// `K = (Sigma_0^-1 + sigma^-2 sum x x')^-1`, `M = K (Sigma_0^-1 theta_bar + sigma^-2 F)`.
    #[default]
    ExactConjugate,
}

/// Multivariate normal posterior; `cov` is all zeros for a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub point_mass: bool,
}

impl GaussianPosterior {
    pub fn sample(&self, rng: &mut SimRng) -> Result<DVector<f64>> {
        if self.point_mass {
            return Ok(self.mean.clone());
        }
        let chol = self.cov.clone().cholesky().ok_or_else(|| {
            Error::Numerical("posterior covariance is not positive definite".into())
        })?;
        let z = DVector::from_iterator(
            self.mean.len(),
            (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        Ok(&self.mean + chol.l() * z)
    }
}

pub fn mmts_lin_conditional(
    mprior: &GaussianModelPrior,
    stats: &LinGaussSuffStats,
    s: StateId,
    sigma: f64,
    mode: ConditionalMode,
) -> Result<GaussianPosterior> {
    let prior_mean = mprior.mean(s);
    let d = prior_mean.len();
    let Some(prior_cov) = prior_covariance(mprior, s) else {
        return Ok(GaussianPosterior {
            mean: prior_mean.clone(),
            cov: DMatrix::zeros(d, d),
            point_mass: true,
        });
    };
    let prior_prec = spd_inverse(&prior_cov)
        .ok_or_else(|| Error::Numerical("prior covariance is not positive definite".into()))?;
    let noise_var = sigma * sigma;
    let (precision, shift) = match mode {
        ConditionalMode::ExactConjugate => (
            &prior_prec + stats.gram(s) / noise_var,
            &prior_prec * prior_mean + stats.moment(s) / noise_var,
        ),
        ConditionalMode::TwoStage => {
            let s_mat = stats.s_matrix(s);
            let s_inv = spd_inverse(&s_mat)
                .ok_or_else(|| Error::Numerical("S_t(s) is not positive definite".into()))?;
            let beta_hat = &s_inv * stats.moment(s);
            let sigma_hat = s_inv * noise_var;
            let sigma_hat_inv = spd_inverse(&sigma_hat)
                .ok_or_else(|| Error::Numerical("ridge covariance is singular".into()))?;
            let n = stats.count(s) as f64;
            (
                &prior_prec + &sigma_hat_inv * n,
                &prior_prec * prior_mean + (&sigma_hat_inv * beta_hat) * n,
            )
        }
    };
    let cov = spd_inverse(&symmetrize(precision))
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let mean = &cov * shift;
    Ok(GaussianPosterior {
        mean,
        cov,
        point_mass: false,
    })
}

/// mmTS for linear rewards.
#[derive(Debug, Clone)]
pub struct LinearGaussianMmts {
    name: String,
    mprior: GaussianModelPrior,
    sigma: f64,
    mode: ConditionalMode,
    posterior: StatePosterior,
    stats: LinGaussSuffStats,
}

impl LinearGaussianMmts {
    pub fn new(
        name: impl Into<String>,
        prior: &LatentPrior,
        mprior: GaussianModelPrior,
        sigma: f64,
        mode: ConditionalMode,
    ) -> Result<Self> {
        if prior.len() != mprior.num_states() {
            return Err(Error::Dimension {
                what: "latent prior",
                expected: mprior.num_states(),
                got: prior.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let stats = LinGaussSuffStats::new(mprior.num_states(), mprior.dim());
        Ok(Self {
            name: name.into(),
            mprior,
            sigma,
            mode,
            posterior: StatePosterior::from_prior(prior),
            stats,
        })
    }

    pub fn posterior(&self) -> &StatePosterior {
        &self.posterior
    }

    pub fn stats(&self) -> &LinGaussSuffStats {
        &self.stats
    }
}

impl Policy for LinearGaussianMmts {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let feats = x.features().ok_or(Error::Dimension {
            what: "context features",
            expected: self.mprior.dim(),
            got: 0,
        })?;
        let s = self.posterior.sample(rng)?;
        let theta = mmts_lin_conditional(&self.mprior, &self.stats, s, self.sigma, self.mode)?
            .sample(rng)?;
        if feats.ncols() != theta.len() {
            return Err(Error::Dimension {
                what: "context feature dimension",
                expected: theta.len(),
                got: feats.ncols(),
            });
        }
        let values: Vec<f64> = (feats * &theta).iter().copied().collect();
        let a = argmax_tie_break(&values, rng)
            .ok_or_else(|| Error::Numerical("sampled values are NaN".into()))?;
        Ok(Decision {
            action: ActionId(a),
            believed_state: Some(s),
            predicted: Some(values[a]),
        })
    }

    fn observe(&mut self, x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::Numerical(format!("non-finite reward {reward}")));
        }
        let s = decision
            .believed_state
            .ok_or_else(|| Error::invalid("mmTS decision lacks believed state"))?;
        let xa = x.arm(decision.action)?;
        self.posterior.absorb(&lin_marginal_log_likelihoods(
            &self.mprior,
            &xa,
            reward,
            self.sigma,
        )?)?;
        self.stats.update(s, &xa, reward);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_relative_eq;

    fn logistic(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn identical_predictions_leave_posterior_unchanged() {
        let model = LatentModel::tabular(vec![vec![0.3, 0.1], vec![0.3, 0.9]]).unwrap();
        let prior = LatentPrior::new(vec![0.25, 0.75]).unwrap();
        let mut post = StatePosterior::from_prior(&prior);
        mts_update(&mut post, &model, &Context::empty(), ActionId(0), 2.0, 0.5).unwrap();
        let p = post.probabilities().unwrap();
        assert_relative_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn two_state_density_ratio() {
        let model = LatentModel::tabular(vec![vec![0.0], vec![1.0]]).unwrap();
        let mut post = StatePosterior::from_prior(&LatentPrior::uniform(2).unwrap());
        mts_update(&mut post, &model, &Context::empty(), ActionId(0), 1.0, 1.0).unwrap();
        let p = post.probabilities().unwrap();
        assert_relative_eq!(p[1], logistic(0.5), epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.622_459_3, epsilon = 1e-7);
    }

    #[test]
    fn point_mass_prior_is_absorbing() {
        let model = LatentModel::tabular(vec![vec![0.0], vec![1.0]]).unwrap();
        let mut post = StatePosterior::from_prior(&LatentPrior::new(vec![1.0, 0.0]).unwrap());
        for _ in 0..50 {
            mts_update(&mut post, &model, &Context::empty(), ActionId(0), 1.0, 0.3).unwrap();
        }
        assert_eq!(post.probabilities().unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn singleton_state_plays_row_argmax() {
        let model = LatentModel::tabular(vec![vec![0.2, 0.7, 0.4]]).unwrap();
        let post = StatePosterior::from_prior(&LatentPrior::uniform(1).unwrap());
        let mut rng = seeded(0);
        for _ in 0..20 {
            let (s, a, _) = mts_step(&post, &model, &Context::empty(), &mut rng).unwrap();
            assert_eq!((s, a), (StateId(0), ActionId(1)));
        }
    }

    #[test]
    fn state_draw_frequencies() {
        let model = LatentModel::tabular(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let post = StatePosterior::from_prior(&LatentPrior::new(vec![0.9, 0.1]).unwrap());
        let mut rng = seeded(12);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|_| {
                mts_step(&post, &model, &Context::empty(), &mut rng)
                    .unwrap()
                    .0
                    == StateId(0)
            })
            .count();
        let f = hits as f64 / trials as f64;
        assert!((0.88..=0.92).contains(&f), "{f}");
    }

    #[test]
    fn overwhelming_evidence_concentrates() {
        let model = LatentModel::tabular(vec![vec![0.0], vec![1.0]]).unwrap();
        let mut post = StatePosterior::from_prior(&LatentPrior::uniform(2).unwrap());
        for _ in 0..1000 {
            mts_update(&mut post, &model, &Context::empty(), ActionId(0), 1.0, 0.5).unwrap();
        }
        let p = post.probabilities().unwrap();
        assert!(p[1] > 1.0 - 1e-6);
        assert!(post.log_weights().iter().all(|w| w.is_finite()));
    }

    #[test]
    fn degenerate_posterior_is_an_error() {
        let post = StatePosterior::from_log_weights(vec![f64::NEG_INFINITY; 3]).unwrap();
        assert!(matches!(
            post.probabilities(),
            Err(Error::DegeneratePosterior)
        ));
        assert!(StatePosterior::from_log_weights(vec![f64::NAN]).is_err());
        let mut post = StatePosterior::from_prior(&LatentPrior::uniform(2).unwrap());
        assert!(post.absorb(&[0.0, f64::NAN]).is_err());
    }

    fn iso_prior(rows: Vec<Vec<f64>>, v: f64) -> GaussianModelPrior {
        GaussianModelPrior::isotropic(rows.into_iter().map(DVector::from_vec).collect(), v).unwrap()
    }

    #[test]
    fn indep_marginal_no_observations_is_prior() {
        let prior = LatentPrior::new(vec![0.2, 0.8]).unwrap();
        let mp = iso_prior(vec![vec![0.0], vec![1.0]], 1.0);
        let post = mmts_indep_marginal(&prior, &mp, &[], 1.0).unwrap();
        let p = post.probabilities().unwrap();
        assert_relative_eq!(p[0], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn indep_marginal_single_observation() {
        let prior = LatentPrior::uniform(2).unwrap();
        let mp = iso_prior(vec![vec![0.0], vec![1.0]], 1.0);
        let obs = Observation {
            context: Context::empty(),
            action: ActionId(0),
            reward: 1.0,
            believed_state: StateId(0),
        };
        let p = mmts_indep_marginal(&prior, &mp, &[obs], 1.0)
            .unwrap()
            .probabilities()
            .unwrap();
        assert_relative_eq!(p[1], logistic(0.25), epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.562_176_5, epsilon = 1e-7);
    }

    #[test]
    fn indep_marginal_point_mass_matches_known_model() {
        let rows = vec![vec![0.1, 0.6, 0.3], vec![0.5, 0.2, 0.9]];
        let model = LatentModel::tabular(rows.clone()).unwrap();
        let mp = GaussianModelPrior::point_mass(rows.into_iter().map(DVector::from_vec).collect())
            .unwrap();
        let prior = LatentPrior::uniform(2).unwrap();
        let mut rng = seeded(5);
        let history: Vec<Observation> = (0..40)
            .map(|_| Observation {
                context: Context::empty(),
                action: ActionId(rng.random_range(0..3)),
                reward: rng.random::<f64>(),
                believed_state: StateId(0),
            })
            .collect();
        let a = mmts_indep_marginal(&prior, &mp, &history, 0.5).unwrap();
        let b = mts_posterior(&prior, &model, &history, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indep_conditional_prior_recovery_and_arithmetic() {
        let mp = iso_prior(vec![vec![0.3, 0.0]], 1.0);
        let mut stats = IndepGaussSuffStats::new(1, 2);
        stats.update(StateId(0), ActionId(1), 2.0);
        let c = mmts_indep_conditional(&mp, &stats, StateId(0), 1.0).unwrap();
        assert_eq!((c.means[0], c.variances[0]), (0.3, 1.0));
        assert_eq!((c.means[1], c.variances[1]), (1.0, 0.5));
    }

    #[test]
    fn indep_conditional_large_sample_limit() {
        let sigma = 0.5;
        let mp = iso_prior(vec![vec![0.0]], 0.04);
        let mut stats = IndepGaussSuffStats::new(1, 1);
        let mut rng = seeded(8);
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let r = 0.7 + sigma * rng.sample::<f64, _>(StandardNormal);
            total += r;
            stats.update(StateId(0), ActionId(0), r);
        }
        let mbar = total / n as f64;
        let c = mmts_indep_conditional(&mp, &stats, StateId(0), sigma).unwrap();
        assert!((c.means[0] - mbar).abs() < 3.0 * c.variances[0].sqrt());
        assert_relative_eq!(
            c.variances[0],
            sigma * sigma / n as f64,
            max_relative = 1e-3
        );
    }

    #[test]
    fn pooled_statistics_equal_sequential() {
        let mp = iso_prior(vec![vec![0.5, -0.5]], 0.25);
        let rewards = [0.5, 1.25, -0.75, 2.0, 0.125];
        let mut one = IndepGaussSuffStats::new(1, 2);
        for r in rewards {
            one.update(StateId(0), ActionId(1), r);
        }
        let mut pooled = IndepGaussSuffStats::new(1, 2);
        pooled.absorb_pooled(StateId(0), ActionId(1), 5, rewards.iter().sum());
        assert_eq!(
            mmts_indep_conditional(&mp, &one, StateId(0), 0.5).unwrap(),
            mmts_indep_conditional(&mp, &pooled, StateId(0), 0.5).unwrap()
        );

        let lp = GaussianModelPrior::shared(
            vec![DVector::from_vec(vec![0.5, 0.0])],
            DMatrix::identity(2, 2) * 0.5,
        )
        .unwrap();
        let xs = [[1.0, 0.5], [0.25, -1.0], [2.0, 0.0]];
        let rs = [1.0, -0.5, 0.25];
        let mut seq = LinGaussSuffStats::new(1, 2);
        let mut gram = DMatrix::zeros(2, 2);
        let mut mom = DVector::zeros(2);
        for (x, r) in xs.iter().zip(rs) {
            let x = DVector::from_row_slice(x);
            seq.update(StateId(0), &x, r);
            gram += &x * x.transpose();
            mom += &x * r;
        }
        let mut pool = LinGaussSuffStats::new(1, 2);
        pool.absorb_pooled(StateId(0), 3, &gram, &mom);
        for mode in [ConditionalMode::ExactConjugate, ConditionalMode::TwoStage] {
            assert_eq!(
                mmts_lin_conditional(&lp, &seq, StateId(0), 0.5, mode).unwrap(),
                mmts_lin_conditional(&lp, &pool, StateId(0), 0.5, mode).unwrap()
            );
        }
    }

    #[test]
    fn lin_marginal_scalar_case_matches_independent() {
        let prior = LatentPrior::uniform(2).unwrap();
        let mp = GaussianModelPrior::shared(
            vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])],
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let obs = Observation {
            context: Context::from_rows(&[vec![1.0]]).unwrap(),
            action: ActionId(0),
            reward: 1.0,
            believed_state: StateId(1),
        };
        let p = mmts_lin_marginal(&prior, &mp, &[obs], 1.0)
            .unwrap()
            .probabilities()
            .unwrap();
        assert_relative_eq!(p[1], logistic(0.25), epsilon = 1e-12);
    }

    #[test]
    fn lin_marginal_point_mass_matches_known_model() {
        let params = vec![vec![0.5, -0.2], vec![0.1, 0.8]];
        let model = LatentModel::linear(params.clone()).unwrap();
        let mp =
            GaussianModelPrior::point_mass(params.into_iter().map(DVector::from_vec).collect())
                .unwrap();
        let prior = LatentPrior::uniform(2).unwrap();
        let mut rng = seeded(2);
        let history: Vec<Observation> = (0..30)
            .map(|_| {
                let rows: Vec<Vec<f64>> =
                    (0..3).map(|_| vec![rng.random(), rng.random()]).collect();
                Observation {
                    context: Context::from_rows(&rows).unwrap(),
                    action: ActionId(rng.random_range(0..3)),
                    reward: rng.random(),
                    believed_state: StateId(0),
                }
            })
            .collect();
        let a = mmts_lin_marginal(&prior, &mp, &history, 0.5).unwrap();
        let b = mts_posterior(&prior, &model, &history, 0.5).unwrap();
        let (pa, pb) = (a.probabilities().unwrap(), b.probabilities().unwrap());
        for (x, y) in pa.iter().zip(&pb) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn lin_conditional_prior_recovery_both_modes() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let mean = DVector::from_vec(vec![0.2, -0.4]);
        let mp = GaussianModelPrior::shared(vec![mean.clone()], cov.clone()).unwrap();
        let stats = LinGaussSuffStats::new(1, 2);
        for mode in [ConditionalMode::ExactConjugate, ConditionalMode::TwoStage] {
            let post = mmts_lin_conditional(&mp, &stats, StateId(0), 0.5, mode).unwrap();
            assert_relative_eq!(post.mean, mean, epsilon = 1e-12);
            assert_relative_eq!(post.cov, cov, epsilon = 1e-12);
        }
    }

    #[test]
    fn lin_conditional_scalar_exact() {
        let mp =
            GaussianModelPrior::shared(vec![DVector::from_vec(vec![0.0])], DMatrix::identity(1, 1))
                .unwrap();
        let mut stats = LinGaussSuffStats::new(1, 1);
        stats.update(StateId(0), &DVector::from_vec(vec![1.0]), 2.0);
        let post = mmts_lin_conditional(
            &mp,
            &stats,
            StateId(0),
            1.0,
            ConditionalMode::ExactConjugate,
        )
        .unwrap();
        assert_relative_eq!(post.cov[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(post.mean[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn two_stage_mode_differs_once_data_arrive() {
        let mp =
            GaussianModelPrior::shared(vec![DVector::from_vec(vec![0.0])], DMatrix::identity(1, 1))
                .unwrap();
        let mut stats = LinGaussSuffStats::new(1, 1);
        stats.update(StateId(0), &DVector::from_vec(vec![1.0]), 2.0);
        let pf =
            mmts_lin_conditional(&mp, &stats, StateId(0), 1.0, ConditionalMode::TwoStage).unwrap();
        // N = 1, S = 2, beta = 1, Sigma_hat^-1 = 2: K = 1/3, M = 2/3
        assert_relative_eq!(pf.cov[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(pf.mean[0], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_posterior_sample_moments() {
        let post = GaussianPosterior {
            mean: DVector::from_vec(vec![1.0, -1.0]),
            cov: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]),
            point_mass: false,
        };
        let mut rng = seeded(40);
        let n = 50_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| post.sample(&mut rng).unwrap()).collect();
        let mean = draws.iter().fold(DVector::zeros(2), |acc, d| acc + d) / n as f64;
        let mut cov = DMatrix::zeros(2, 2);
        for d in &draws {
            let c = d - &mean;
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        assert_relative_eq!(mean, post.mean, epsilon = 0.01);
        assert_relative_eq!(cov, post.cov, epsilon = 0.01);
    }

    #[test]
    fn mmts_statistics_count_rounds() {
        let rows = vec![vec![0.2, 0.5, 0.9], vec![0.8, 0.1, 0.3]];
        let mp = iso_prior(rows, 0.04);
        let mut pol =
            IndependentGaussianMmts::new("mmts", &LatentPrior::uniform(2).unwrap(), mp, 0.5)
                .unwrap();
        let mut rng = seeded(1);
        for t in 1..=100u64 {
            let d = pol.select(&Context::empty(), &mut rng).unwrap();
            pol.observe(&Context::empty(), &d, 0.5).unwrap();
            assert_eq!(pol.stats().total_count(), t);
        }
    }
}
