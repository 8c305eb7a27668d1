use crate::error::Result;
use crate::model::{ActionId, Context, StateId};
use crate::rng::SimRng;

/// What a policy chose in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: ActionId,
    /// Believed latent state `B_t`, for latent-state policies.
    pub believed_state: Option<StateId>,
    /// Predicted mean of `action` under the believed state, captured at
    /// selection time.
    pub predicted: Option<f64>,
}

impl Decision {
    pub fn action(action: ActionId) -> Self {
        Self {
            action,
            believed_state: None,
            predicted: None,
        }
    }
}

/// A stateful bandit policy driven one round at a time.
pub trait Policy: Send {
    fn name(&self) -> &str;

    fn select(&mut self, x: &Context, rng: &mut SimRng) -> Result<Decision>;

    /// Fold the reward for `decision` (returned by the preceding `select`).
    fn observe(&mut self, x: &Context, decision: &Decision, reward: f64) -> Result<()>;
}
