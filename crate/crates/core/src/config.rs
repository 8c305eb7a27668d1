//! TOML experiment configuration.
//!
//! A config file has a `kind` key (`synth` or `movielens`), flat keys for
//! the experiment, and one `[[policy]]` table per policy:
//!
//! ```toml
//! kind = "synth"
//! model_sigma = 0.2
//! runs = 100
//!
//! [[policy]]
//! name = "mts"
//!
//! [[policy]]
//! name = "sw-mucb"
//! window = 64
//! ```
//!
//! Unknown keys are rejected. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{check_policy_list, PolicySpec, SynthConfig};
use crate::model::LatentPrior;
use crate::recsys::{AlsConfig, IngestConfig, KMeansConfig, NoiseScale, PrepareParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExperimentConfig {
    Synth(SynthExperiment),
    Movielens(MovieLensExperiment),
}

fn synth_suite() -> Vec<PolicySpec> {
    ["ucb1", "ts", "exp4", "mucb", "mmucb", "mts", "mmts"]
        .iter()
        .map(|n| PolicySpec::from_name(n).expect("known name"))
        .collect()
}

fn movielens_suite() -> Vec<PolicySpec> {
    ["linucb", "lints", "exp4", "mucb", "mmucb", "mts", "mmts"]
        .iter()
        .map(|n| PolicySpec::from_name(n).expect("known name"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthExperiment {
    pub arms: usize,
    pub states: usize,
    pub gap_min: f64,
    pub noise_sigma: f64,
    pub model_sigma: f64,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    /// Latent-state prior; uniform when absent.
    pub latent_prior: Option<Vec<f64>>,
    #[serde(rename = "policy")]
    pub policies: Vec<PolicySpec>,
}

impl Default for SynthExperiment {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            arms: c.arms,
            states: c.states,
            gap_min: c.gap_min,
            noise_sigma: c.noise_sigma,
            model_sigma: c.model_sigma,
            horizon: c.horizon,
            runs: c.runs,
            seed: c.seed,
            latent_prior: None,
            policies: synth_suite(),
        }
    }
}

impl SynthExperiment {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            arms: self.arms,
            states: self.states,
            gap_min: self.gap_min,
            noise_sigma: self.noise_sigma,
            model_sigma: self.model_sigma,
            horizon: self.horizon,
            runs: self.runs,
            seed: self.seed,
        }
    }

    pub fn prior(&self) -> Result<LatentPrior> {
        match &self.latent_prior {
            None => LatentPrior::uniform(self.states),
            Some(p) => LatentPrior::new(p.clone()).map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        let prior = self.prior()?;
        if prior.len() != self.states {
            return Err(Error::Config(format!(
                "latent_prior has {} entries but states = {}",
                prior.len(),
                self.states
            )));
        }
        check_policy_list(&self.policies)?;
        if let Some(p) = self.policies.iter().find(|p| p.needs_features()) {
            return Err(Error::Config(format!(
                "policy `{}` needs contextual features; synthetic problems have none",
                p.label()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MovieLensExperiment {
    // offline stage
    pub ratings: Option<PathBuf>,
    pub movies: Option<PathBuf>,
    pub min_user_ratings: usize,
    pub min_item_ratings: usize,
    pub split_fraction: f64,
    pub rank: usize,
    pub als_lambda: f64,
    pub als_sweeps: usize,
    pub clusters: usize,
    pub kmeans_restarts: usize,
    pub prepare_seed: u64,
    // online stage
    pub bundle: Option<PathBuf>,
    pub users: usize,
    pub horizon: usize,
    pub slate: usize,
    pub noise: f64,
    pub noise_scale: NoiseScale,
    /// mmUCB slack when a policy table does not set one.
    pub epsilon: f64,
    pub seed: u64,
    #[serde(rename = "policy")]
    pub policies: Vec<PolicySpec>,
}

impl Default for MovieLensExperiment {
    fn default() -> Self {
        Self {
            ratings: None,
            movies: None,
            min_user_ratings: 200,
            min_item_ratings: 200,
            split_fraction: 0.5,
            rank: 20,
            als_lambda: 0.1,
            als_sweeps: 20,
            clusters: 5,
            kmeans_restarts: 10,
            prepare_seed: 0,
            bundle: None,
            users: 100,
            horizon: 500,
            slate: 20,
            noise: 0.5,
            noise_scale: NoiseScale::Variance,
            epsilon: 0.1,
            seed: 0,
            policies: movielens_suite(),
        }
    }
}

impl MovieLensExperiment {
    pub fn prepare_params(&self) -> PrepareParams {
        PrepareParams {
            ingest: IngestConfig {
                min_user_ratings: self.min_user_ratings,
                min_item_ratings: self.min_item_ratings,
            },
            split_fraction: self.split_fraction,
            als: AlsConfig {
                rank: self.rank,
                lambda: self.als_lambda,
                sweeps: self.als_sweeps,
                ..AlsConfig::default()
            },
            kmeans: KMeansConfig {
                k: self.clusters,
                restarts: self.kmeans_restarts,
                ..KMeansConfig::default()
            },
            seed: self.prepare_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.split_fraction && self.split_fraction < 1.0) {
            return Err(Error::Config("split_fraction must be in (0, 1)".into()));
        }
        if self.rank == 0 || self.clusters == 0 || self.slate == 0 {
            return Err(Error::Config(
                "rank, clusters and slate must be >= 1".into(),
            ));
        }
        if !(self.als_lambda > 0.0 && self.als_lambda.is_finite()) {
            return Err(Error::Config("als_lambda must be > 0".into()));
        }
        if self.users == 0 || self.horizon < 2 {
            return Err(Error::Config("users must be >= 1 and horizon >= 2".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        crate::recsys::noise_sigma(self.noise, self.noise_scale)?;
        check_policy_list(&self.policies)?;
        if let Some(p) = self.policies.iter().find(|p| p.needs_independent_arms()) {
            return Err(Error::Config(format!(
                "policy `{}` needs a fixed arm set; MovieLens slates change every round",
                p.label()
            )));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.ratings, &mut self.movies, &mut self.bundle]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let ExperimentConfig::Movielens(m) = &mut cfg {
            m.resolve(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::Synth(s) => s.validate(),
            ExperimentConfig::Movielens(m) => m.validate(),
        }
    }
}
