//! Reference policies that ignore the latent structure (UCB1, Gaussian TS,
//! LinUCB, LinTS) and EXP4 with one expert per latent state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_solve};
use crate::model::{ActionId, Context, LatentModel, StateId};
use crate::policy::{Decision, Policy};
use crate::rng::{argmax_tie_break, sample_categorical, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    counts: Vec<u64>,
    sums: Vec<f64>,
}

impl ArmStats {
    pub fn new(num_arms: usize) -> Self {
        Self {
            counts: vec![0; num_arms],
            sums: vec![0.0; num_arms],
        }
    }

    pub fn num_arms(&self) -> usize {
        self.counts.len()
    }

    pub fn update(&mut self, a: ActionId, r: f64) {
        self.counts[a.0] += 1;
        self.sums[a.0] += r;
    }

    pub fn count(&self, a: ActionId) -> u64 {
        self.counts[a.0]
    }

    pub fn mean(&self, a: ActionId) -> f64 {
        self.sums[a.0] / self.counts[a.0] as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn set(&mut self, a: ActionId, count: u64, sum: f64) {
        self.counts[a.0] = count;
        self.sums[a.0] = sum;
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )))
    }
}

fn check_arms(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::invalid("need at least one arm"))
    } else {
        Ok(())
    }
}

/// UCB1 with index `mean + sigma sqrt(2 log t / N)`; each arm is pulled once
/// first, in index order.
#[derive(Debug, Clone)]
pub struct Ucb1 {
    name: String,
    sigma: f64,
    stats: ArmStats,
}

impl Ucb1 {
    pub fn new(name: impl Into<String>, num_arms: usize, sigma: f64) -> Result<Self> {
        check_arms(num_arms)?;
        check_sigma(sigma)?;
        Ok(Self {
            name: name.into(),
            sigma,
            stats: ArmStats::new(num_arms),
        })
    }

    pub fn stats_mut(&mut self) -> &mut ArmStats {
        &mut self.stats
    }

    /// Index of every arm given the pulls so far; `+inf` for unpulled arms.
    pub fn indices(&self) -> Vec<f64> {
        let t = self.stats.total() as f64;
        (0..self.stats.num_arms())
            .map(|a| {
                let a = ActionId(a);
                let n = self.stats.count(a);
                if n == 0 {
                    f64::INFINITY
                } else {
                    self.stats.mean(a) + self.sigma * (2.0 * t.ln() / n as f64).sqrt()
                }
            })
            .collect()
    }
}

impl Policy for Ucb1 {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, _x: &Context, rng: &mut SimRng) -> Result<Decision> {
        if let Some(a) = (0..self.stats.num_arms()).find(|&a| self.stats.count(ActionId(a)) == 0) {
            return Ok(Decision::action(ActionId(a)));
        }
        let a = argmax_tie_break(&self.indices(), rng)
            .ok_or_else(|| Error::Numerical("UCB1 indices are NaN".into()))?;
        Ok(Decision::action(ActionId(a)))
    }

    fn observe(&mut self, _x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        self.stats.update(decision.action, reward);
        Ok(())
    }
}

/// Gaussian Thompson sampling with an independent `N(0, 1)` prior per arm.
#[derive(Debug, Clone)]
pub struct GaussianTs {
    name: String,
    sigma: f64,
    prior_mean: f64,
    prior_var: f64,
    stats: ArmStats,
}

impl GaussianTs {
    pub fn new(name: impl Into<String>, num_arms: usize, sigma: f64) -> Result<Self> {
        check_arms(num_arms)?;
        check_sigma(sigma)?;
        Ok(Self {
            name: name.into(),
            sigma,
            prior_mean: 0.0,
            prior_var: 1.0,
            stats: ArmStats::new(num_arms),
        })
    }

    /// Posterior mean and variance of arm `a`.
    pub fn posterior(&self, a: ActionId) -> (f64, f64) {
        let noise_prec = 1.0 / (self.sigma * self.sigma);
        let n = self.stats.count(a) as f64;
        let var = 1.0 / (1.0 / self.prior_var + n * noise_prec);
        let sum = if n > 0.0 { self.stats.sums[a.0] } else { 0.0 };
        (
            var * (self.prior_mean / self.prior_var + noise_prec * sum),
            var,
        )
    }
}

impl Policy for GaussianTs {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, _x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let draws: Vec<f64> = (0..self.stats.num_arms())
            .map(|a| {
                let (m, v) = self.posterior(ActionId(a));
                m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let a = argmax_tie_break(&draws, rng)
            .ok_or_else(|| Error::Numerical("TS draws are NaN".into()))?;
        Ok(Decision::action(ActionId(a)))
    }

    fn observe(&mut self, _x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        self.stats.update(decision.action, reward);
        Ok(())
    }
}

/// Shared ridge-regression state: `A = lambda I + sum x x'`, `b = sum x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeState {
    gram: DMatrix<f64>,
    moment: DVector<f64>,
}

impl RidgeState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("ridge dimension must be >= 1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "ridge lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            gram: DMatrix::identity(dim, dim) * lambda,
            moment: DVector::zeros(dim),
        })
    }

    pub fn from_parts(gram: DMatrix<f64>, moment: DVector<f64>) -> Result<Self> {
        if gram.nrows() != moment.len() || gram.ncols() != moment.len() {
            return Err(Error::Dimension {
                what: "ridge state",
                expected: moment.len(),
                got: gram.nrows(),
            });
        }
        if gram.clone().cholesky().is_none() {
            return Err(Error::Numerical("ridge Gram matrix is not SPD".into()));
        }
        Ok(Self { gram, moment })
    }

    pub fn dim(&self) -> usize {
        self.moment.len()
    }

    pub fn update(&mut self, x: &DVector<f64>, r: f64) {
        self.gram.ger(1.0, x, x, 1.0);
        self.moment.axpy(r, x, 1.0);
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    pub fn estimate(&self) -> Result<DVector<f64>> {
        spd_solve(&self.gram, &self.moment)
            .ok_or_else(|| Error::Numerical("ridge Gram matrix is not SPD".into()))
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.gram)
            .ok_or_else(|| Error::Numerical("ridge Gram matrix is not SPD".into()))
    }
}

fn context_features(x: &Context, dim: usize) -> Result<&DMatrix<f64>> {
    let f = x.features().ok_or(Error::Dimension {
        what: "context features",
        expected: dim,
        got: 0,
    })?;
    if f.ncols() != dim {
        return Err(Error::Dimension {
            what: "context feature dimension",
            expected: dim,
            got: f.ncols(),
        });
    }
    Ok(f)
}

/// LinUCB with a single shared parameter vector.
#[derive(Debug, Clone)]
pub struct LinUcb {
    name: String,
    alpha: f64,
    ridge: RidgeState,
}

impl LinUcb {
    pub fn new(name: impl Into<String>, dim: usize, lambda: f64, alpha: f64) -> Result<Self> {
        Self::from_ridge(name, RidgeState::new(dim, lambda)?, alpha)
    }

    pub fn from_ridge(name: impl Into<String>, ridge: RidgeState, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "LinUCB alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(Self {
            name: name.into(),
            alpha,
            ridge,
        })
    }

    pub fn ridge(&self) -> &RidgeState {
        &self.ridge
    }
}

impl Policy for LinUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let feats = context_features(x, self.ridge.dim())?;
        let theta = self.ridge.estimate()?;
        let inv = self.ridge.inverse()?;
        let scores: Vec<f64> = (0..feats.nrows())
            .map(|a| {
                let xa = feats.row(a).transpose();
                let width = (&inv * &xa).dot(&xa).max(0.0).sqrt();
                xa.dot(&theta) + self.alpha * width
            })
            .collect();
        let a = argmax_tie_break(&scores, rng)
            .ok_or_else(|| Error::Numerical("LinUCB scores are NaN".into()))?;
        Ok(Decision::action(ActionId(a)))
    }

    fn observe(&mut self, x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        let xa = x.arm(decision.action)?;
        self.ridge.update(&xa, reward);
        Ok(())
    }
}

/// Linear Thompson sampling from `N(A^-1 b, sigma^2 A^-1)`.
#[derive(Debug, Clone)]
pub struct LinTs {
    name: String,
    sigma: f64,
    ridge: RidgeState,
}

impl LinTs {
    pub fn new(name: impl Into<String>, dim: usize, lambda: f64, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self {
            name: name.into(),
            sigma,
            ridge: RidgeState::new(dim, lambda)?,
        })
    }

    pub fn from_ridge(name: impl Into<String>, ridge: RidgeState, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self {
            name: name.into(),
            sigma,
            ridge,
        })
    }

    pub fn ridge(&self) -> &RidgeState {
        &self.ridge
    }

    pub fn sample_parameter(&self, rng: &mut SimRng) -> Result<DVector<f64>> {
        let mean = self.ridge.estimate()?;
        let cov = self.ridge.inverse()? * (self.sigma * self.sigma);
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("LinTS covariance is not SPD".into()))?;
        let z = DVector::from_iterator(
            mean.len(),
            (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        Ok(mean + chol.l() * z)
    }
}

impl Policy for LinTs {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let feats = context_features(x, self.ridge.dim())?;
        let theta = self.sample_parameter(rng)?;
        let scores: Vec<f64> = (feats * theta).iter().copied().collect();
        let a = argmax_tie_break(&scores, rng)
            .ok_or_else(|| Error::Numerical("LinTS scores are NaN".into()))?;
        Ok(Decision::action(ActionId(a)))
    }

    fn observe(&mut self, x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        let xa = x.arm(decision.action)?;
        self.ridge.update(&xa, reward);
        Ok(())
    }
}

/// EXP4 weights in log space, plus the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp4State {
    log_weights: Vec<f64>,
    eta: f64,
    gamma: f64,
}

impl Exp4State {
    pub fn new(num_experts: usize, eta: f64, gamma: f64) -> Result<Self> {
        if num_experts == 0 {
            return Err(Error::invalid("EXP4 needs at least one expert"));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("EXP4 eta must be >= 0, got {eta}")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!(
                "EXP4 gamma must be in [0, 1], got {gamma}"
            )));
        }
        if gamma == 0.0 {
            log::warn!("EXP4 with gamma = 0: arms no expert recommends are never explored");
        }
        Ok(Self {
            log_weights: vec![0.0; num_experts],
            eta,
            gamma,
        })
    }

    /// Horizon-tuned defaults: `eta = sqrt(2 ln S / (n K))`,
    /// `gamma = min(1, sqrt(K ln S / n))`.
    pub fn default_rates(num_experts: usize, num_arms: usize, horizon: usize) -> (f64, f64) {
        let ln_s = (num_experts as f64).ln();
        let n = horizon.max(1) as f64;
        let k = num_arms as f64;
        let eta = (2.0 * ln_s / (n * k)).sqrt();
        let gamma = (k * ln_s / n).sqrt().min(1.0);
        (eta, gamma)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Expert weights scaled so the largest is 1.
    pub fn weights(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.log_weights.iter().map(|w| (w - max).exp()).collect()
    }

    /// `p(a) = (1 - gamma) sum_s w_s 1{advice_s = a} / sum w + gamma / K`.
    pub fn arm_distribution(&self, advice: &[ActionId], num_arms: usize) -> Vec<f64> {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let mut p = vec![self.gamma / num_arms as f64; num_arms];
        for (ws, a) in w.iter().zip(advice) {
            p[a.0] += (1.0 - self.gamma) * ws / total;
        }
        p
    }

    /// Importance-weighted update for a reward already scaled to `[0, 1]`.
    pub fn update(&mut self, advice: &[ActionId], played: ActionId, prob: f64, scaled: f64) {
        let estimate = scaled / prob;
        for (lw, a) in self.log_weights.iter_mut().zip(advice) {
            if *a == played {
                *lw += self.eta * estimate;
            }
        }
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for lw in &mut self.log_weights {
            *lw -= max;
        }
    }
}

/// EXP4 whose experts play each latent state's best arm under the offline model.
#[derive(Debug, Clone)]
pub struct Exp4 {
    name: String,
    model: LatentModel,
    state: Exp4State,
    reward_range: (f64, f64),
    pending: Option<(Vec<ActionId>, Vec<f64>)>,
}

impl Exp4 {
    pub fn new(
        name: impl Into<String>,
        model: LatentModel,
        eta: f64,
        gamma: f64,
        reward_range: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = reward_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::invalid(format!(
                "EXP4 reward range must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        let state = Exp4State::new(model.num_states(), eta, gamma)?;
        Ok(Self {
            name: name.into(),
            model,
            state,
            reward_range,
            pending: None,
        })
    }

    pub fn state(&self) -> &Exp4State {
        &self.state
    }

    pub fn advice(&self, x: &Context) -> Result<Vec<ActionId>> {
        (0..self.model.num_states())
            .map(|s| self.model.best_arm(x, StateId(s)))
            .collect()
    }

    pub fn scale_reward(&self, r: f64) -> f64 {
        let (lo, hi) = self.reward_range;
        ((r - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

impl Policy for Exp4 {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let advice = self.advice(x)?;
        let k = self.model.num_arms(x)?;
        let probs = self.state.arm_distribution(&advice, k);
        let a = ActionId(sample_categorical(&probs, rng));
        self.pending = Some((advice, probs));
        Ok(Decision::action(a))
    }

    fn observe(&mut self, _x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        let (advice, probs) = self
            .pending
            .take()
            .ok_or_else(|| Error::invalid("EXP4 observe without select"))?;
        let p = probs[decision.action.0];
        if p <= 0.0 {
            return Err(Error::Numerical(
                "EXP4 played an arm with zero probability".into(),
            ));
        }
        let scaled = self.scale_reward(reward);
        self.state.update(&advice, decision.action, p, scaled);
        Ok(())
    }
}
