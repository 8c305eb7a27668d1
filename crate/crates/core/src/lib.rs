//! Latent bandits: bandit policies that exploit an offline-learned model of
//! a small set of latent states, plus the experiment engine used to compare
//! them with classic baselines on synthetic and MovieLens-derived problems.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod latent_ts;
pub mod latent_ucb;
pub mod linalg;
pub mod model;
pub mod output;
pub mod policy;
pub mod recsys;
pub mod rng;

pub use error::{Error, ErrorClass, Result};
pub use model::{
    ActionId, BanditInstance, Context, GaussianModelPrior, LatentModel, LatentPrior, PriorSpread,
    RoundContext, RunRecord, StateId,
};
pub use policy::{Decision, Policy};
