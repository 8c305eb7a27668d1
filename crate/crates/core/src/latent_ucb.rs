//! Model-based UCB over latent states.
//!
//! `ModelUcb` keeps, per latent state, the number of rounds the state was
//! believed and the cumulative gap between predicted and realized reward. A
//! state stays consistent while its gap is below `sigma * sqrt(6 N log n)`;
//! the policy is optimistic over the consistent states. A positive slack
//! `epsilon` shifts every gap increment down, which makes elimination more
//! conservative under a misspecified model; `epsilon = 0` is the
//! perfect-model variant.
//!
//! `SlidingWindowUcb` replaces the cumulative statistics with averages over
//! the last `window` rounds so that a state can re-enter after the latent
//! state changes.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{ActionId, Context, LatentModel, StateId};
use crate::policy::{Decision, Policy};
use crate::rng::{argmax_tie_break, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct UcbStats {
    counts: Vec<u64>,
    gaps: Vec<f64>,
    horizon: usize,
    sigma: f64,
    epsilon: f64,
}

impl UcbStats {
    pub fn new(num_states: usize, horizon: usize, sigma: f64, epsilon: f64) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::invalid("need at least one latent state"));
        }
        if horizon < 2 {
            return Err(Error::invalid(format!(
                "horizon must be >= 2 so that log n > 0, got {horizon}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self {
            counts: vec![0; num_states],
            gaps: vec![0.0; num_states],
            horizon,
            sigma,
            epsilon,
        })
    }

    pub fn num_states(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, s: StateId) -> u64 {
        self.counts[s.0]
    }

    pub fn gap(&self, s: StateId) -> f64 {
        self.gaps[s.0]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn threshold(&self, s: StateId) -> f64 {
        let n = self.counts[s.0] as f64;
        self.sigma * (6.0 * n * (self.horizon as f64).ln()).sqrt()
    }

    /// `{ s : G(s) <= sigma sqrt(6 N(s) log n) }`; may be empty.
    pub fn consistent_set(&self) -> ConsistentSet {
        ConsistentSet(
            (0..self.num_states())
                .map(StateId)
                .filter(|&s| self.gaps[s.0] <= self.threshold(s))
                .collect(),
        )
    }

    pub fn update(&mut self, believed: StateId, predicted: f64, reward: f64) {
        self.counts[believed.0] += 1;
        self.gaps[believed.0] += predicted - self.epsilon - reward;
    }

    /// Overwrite the statistics (used for boundary tests).
    pub fn set(&mut self, s: StateId, count: u64, gap: f64) {
        self.counts[s.0] = count;
        self.gaps[s.0] = gap;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistentSet(pub Vec<StateId>);

impl ConsistentSet {
    pub fn all(num_states: usize) -> Self {
        Self((0..num_states).map(StateId).collect())
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.0.contains(&s)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn states(&self) -> &[StateId] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbChoice {
    pub state: StateId,
    pub action: ActionId,
    pub value: f64,
}

/// Optimistic pair `argmax_{s in c, a} mu_hat(a, x, s)`, ties uniform.
pub fn ucb_select(
    model: &LatentModel,
    x: &Context,
    c: &ConsistentSet,
    rng: &mut SimRng,
) -> Result<UcbChoice> {
    if c.is_empty() {
        return Err(Error::EmptyConsistentSet);
    }
    let k = model.num_arms(x)?;
    let mut table = Vec::with_capacity(c.len() * k);
    for &s in c.states() {
        let row = model.arm_means(x, s)?;
        table.extend(row);
    }
    let idx = argmax_tie_break(&table, rng)
        .ok_or_else(|| Error::Numerical("all predicted means are NaN".into()))?;
    Ok(UcbChoice {
        state: c.states()[idx / k],
        action: ActionId(idx % k),
        value: table[idx],
    })
}

/// `U_t(a) = max_{s in c} mu_hat(a, x, s)` for every arm.
pub fn upper_confidence(model: &LatentModel, x: &Context, c: &ConsistentSet) -> Result<Vec<f64>> {
    let k = model.num_arms(x)?;
    let mut u = vec![f64::NEG_INFINITY; k];
    for &s in c.states() {
        for (ua, m) in u.iter_mut().zip(model.arm_means(x, s)?) {
            *ua = ua.max(m);
        }
    }
    Ok(u)
}

/// mUCB (`epsilon = 0`) and mmUCB (`epsilon > 0`).
#[derive(Debug, Clone)]
pub struct ModelUcb {
    name: String,
    model: LatentModel,
    stats: UcbStats,
    last_set: ConsistentSet,
    fallbacks: usize,
}

impl ModelUcb {
    pub fn new(
        name: impl Into<String>,
        model: LatentModel,
        horizon: usize,
        sigma: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let stats = UcbStats::new(model.num_states(), horizon, sigma, epsilon)?;
        let last_set = ConsistentSet::all(model.num_states());
        Ok(Self {
            name: name.into(),
            model,
            stats,
            last_set,
            fallbacks: 0,
        })
    }

    pub fn stats(&self) -> &UcbStats {
        &self.stats
    }

    /// Consistent set computed in the latest `select` (before any fallback).
    pub fn last_consistent_set(&self) -> &ConsistentSet {
        &self.last_set
    }

    /// Rounds in which the consistent set was empty and all states were used.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

impl Policy for ModelUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        self.last_set = self.stats.consistent_set();
        let choice = if self.last_set.is_empty() {
            self.fallbacks += 1;
            ucb_select(
                &self.model,
                x,
                &ConsistentSet::all(self.model.num_states()),
                rng,
            )?
        } else {
            ucb_select(&self.model, x, &self.last_set, rng)?
        };
        Ok(Decision {
            action: choice.action,
            believed_state: Some(choice.state),
            predicted: Some(choice.value),
        })
    }

    fn observe(&mut self, _x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        let (Some(s), Some(pred)) = (decision.believed_state, decision.predicted) else {
            return Err(Error::invalid("mUCB decision lacks believed state"));
        };
        self.stats.update(s, pred, reward);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct WindowEntry {
    state: StateId,
    predicted: f64,
    reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindowStats {
    window: usize,
    confidence: f64,
    buffer: VecDeque<WindowEntry>,
    counts: Vec<usize>,
    round: usize,
}

impl SlidingWindowStats {
    pub fn new(num_states: usize, window: usize, confidence: f64) -> Result<Self> {
        if window < 1 {
            return Err(Error::invalid("sliding window length must be >= 1"));
        }
        if num_states == 0 {
            return Err(Error::invalid("need at least one latent state"));
        }
        if !(confidence > 0.0 && confidence.is_finite()) {
            return Err(Error::invalid(format!(
                "confidence constant must be positive, got {confidence}"
            )));
        }
        Ok(Self {
            window,
            confidence,
            buffer: VecDeque::with_capacity(window + 1),
            counts: vec![0; num_states],
            round: 1,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Current round `t` (1-based).
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn count(&self, s: StateId) -> usize {
        self.counts[s.0]
    }

    /// Counts recomputed from the buffer contents.
    pub fn recount(&self) -> Vec<usize> {
        let mut c = vec![0; self.counts.len()];
        for e in &self.buffer {
            c[e.state.0] += 1;
        }
        c
    }

    /// Windowed mean of predicted minus realized reward; 0 with no entries.
    pub fn average_gap(&self, s: StateId) -> f64 {
        let n = self.counts[s.0];
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .buffer
            .iter()
            .filter(|e| e.state == s)
            .map(|e| e.predicted - e.reward)
            .sum();
        sum / n as f64
    }

    pub fn threshold(&self, s: StateId) -> f64 {
        let n = self.counts[s.0];
        if n == 0 {
            return f64::INFINITY;
        }
        let horizon = self.window.min(self.round) as f64;
        self.confidence * (horizon.ln() / n as f64).sqrt()
    }

    /// Unplayed states are always included; others need a strictly smaller
    /// average gap than the threshold.
    pub fn consistent_set(&self) -> ConsistentSet {
        ConsistentSet(
            (0..self.counts.len())
                .map(StateId)
                .filter(|&s| self.counts[s.0] == 0 || self.average_gap(s) < self.threshold(s))
                .collect(),
        )
    }

    pub fn push(&mut self, state: StateId, predicted: f64, reward: f64) {
        self.buffer.push_back(WindowEntry {
            state,
            predicted,
            reward,
        });
        self.counts[state.0] += 1;
        if self.buffer.len() > self.window {
            let old = self.buffer.pop_front().expect("non-empty buffer");
            self.counts[old.state.0] -= 1;
        }
        self.round += 1;
    }
}

/// Returns the believed state and arm for this round.
pub fn sw_ucb_step(
    stats: &SlidingWindowStats,
    model: &LatentModel,
    x: &Context,
    rng: &mut SimRng,
) -> Result<UcbChoice> {
    let set = stats.consistent_set();
    let set = if set.is_empty() {
        ConsistentSet::all(model.num_states())
    } else {
        set
    };
    ucb_select(model, x, &set, rng)
}

/// Sliding-window mUCB for a piecewise-stationary latent state.
#[derive(Debug, Clone)]
pub struct SlidingWindowUcb {
    name: String,
    model: LatentModel,
    stats: SlidingWindowStats,
}

impl SlidingWindowUcb {
    pub fn new(
        name: impl Into<String>,
        model: LatentModel,
        window: usize,
        confidence: f64,
    ) -> Result<Self> {
        let stats = SlidingWindowStats::new(model.num_states(), window, confidence)?;
        Ok(Self {
            name: name.into(),
            model,
            stats,
        })
    }

    /// Confidence constant mirroring the fixed-state threshold, `sigma sqrt 6`.
    pub fn default_confidence(sigma: f64) -> f64 {
        sigma * 6f64.sqrt()
    }

    pub fn stats(&self) -> &SlidingWindowStats {
        &self.stats
    }
}

impl Policy for SlidingWindowUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision> {
        let choice = sw_ucb_step(&self.stats, &self.model, x, rng)?;
        Ok(Decision {
            action: choice.action,
            believed_state: Some(choice.state),
            predicted: Some(choice.value),
        })
    }

    fn observe(&mut self, _x: &Context, decision: &Decision, reward: f64) -> Result<()> {
        let (Some(s), Some(pred)) = (decision.believed_state, decision.predicted) else {
            return Err(Error::invalid("SW-mUCB decision lacks believed state"));
        };
        self.stats.push(s, pred, reward);
        Ok(())
    }
}
