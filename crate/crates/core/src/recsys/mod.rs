//! Offline MovieLens stage and the contextual bandit built from it.
//!
//! `prepare` runs ingest, a random train/test split, ALS on each half and
//! k-means on the train user factors, and packs everything into a
//! [`Bundle`]. Contexts are slates of train item vectors; rewards come from
//! the test factors, so the policy never sees the factors it is scored on.

pub mod als;
pub mod ingest;
pub mod kmeans;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{RunSetup, Scenario};
use crate::model::{
    BanditInstance, Context, ContextProcess, GaussianModelPrior, LatentModel, LatentPrior,
    RoundContext, StateId,
};
use crate::rng::{seeded, SimRng};

pub use als::{AlsConfig, AlsReport, FactorModel};
pub use ingest::{IngestConfig, RatingsTable};
pub use kmeans::{ClusterModel, KMeansConfig};

/// Factors fitted on the training half; the only factors policies see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainFactors(pub FactorModel);

/// Factors fitted on the held-out half; used for reward means only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TestFactors(pub FactorModel);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareParams {
    pub ingest: IngestConfig,
    pub split_fraction: f64,
    pub als: AlsConfig,
    pub kmeans: KMeansConfig,
    pub seed: u64,
}

impl Default for PrepareParams {
    fn default() -> Self {
        Self {
            ingest: IngestConfig::default(),
            split_fraction: 0.5,
            als: AlsConfig::default(),
            kmeans: KMeansConfig::default(),
            seed: 0,
        }
    }
}

impl PrepareParams {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        // the row-parallel flag does not change results
        let mut canon = self.clone();
        canon.als.parallel = false;
        let json = serde_json::to_string(&canon).expect("params serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub const BUNDLE_FORMAT: u32 = 1;

/// Everything the online stage needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub format: u32,
    pub config_hash: String,
    pub params: PrepareParams,
    pub user_ids: Vec<u32>,
    pub item_ids: Vec<u32>,
    pub genre_names: Vec<String>,
    pub item_genres: Vec<Vec<usize>>,
    pub rating_range: (f64, f64),
    pub train: TrainFactors,
    pub test: TestFactors,
    pub clusters: ClusterModel,
    pub train_rmse: Vec<f64>,
    pub test_rmse: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        message: msg.into(),
    }
}

impl Bundle {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn rank(&self) -> usize {
        self.train.0.rank()
    }

    /// Check shapes, indices, finiteness and the stored hash.
    pub fn validate(&self) -> Result<()> {
        if self.format != BUNDLE_FORMAT {
            return Err(bad(format!("unsupported bundle format {}", self.format)));
        }
        if self.config_hash != self.params.hash() {
            return Err(Error::Config(
                "bundle config hash does not match its parameters".into(),
            ));
        }
        let (n, m) = (self.num_users(), self.num_items());
        let r = self.train.0.users.ncols();
        if r == 0 || n == 0 || m == 0 {
            return Err(bad("bundle has empty factors"));
        }
        for (name, f) in [("train", &self.train.0), ("test", &self.test.0)] {
            if f.users.shape() != (n, r) || f.items.shape() != (m, r) {
                return Err(bad(format!(
                    "{name} factor shapes do not match ids and rank"
                )));
            }
            if f.users.iter().chain(f.items.iter()).any(|v| !v.is_finite()) {
                return Err(bad(format!("{name} factors are not finite")));
            }
        }
        if self.item_genres.len() != m {
            return Err(bad("item_genres length does not match items"));
        }
        if self
            .item_genres
            .iter()
            .flatten()
            .any(|&g| g >= self.genre_names.len())
        {
            return Err(bad("genre index out of range"));
        }
        let c = &self.clusters;
        let k = c.centroids.len();
        if k == 0 || c.covariances.len() != k || c.assignments.len() != n {
            return Err(bad("cluster model does not match users"));
        }
        if c.assignments.iter().any(|&a| a >= k) {
            return Err(bad("cluster assignment out of range"));
        }
        if c.sizes().contains(&0) {
            return Err(bad("bundle has an empty cluster"));
        }
        for (mu, cov) in c.centroids.iter().zip(&c.covariances) {
            if mu.len() != r || cov.shape() != (r, r) {
                return Err(bad("cluster parameter shapes do not match rank"));
            }
            if mu.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(bad("cluster parameters are not finite"));
            }
        }
        let (lo, hi) = self.rating_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(bad("invalid rating range"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Bundle = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Offline stage on an ingested table.
pub fn prepare(table: &RatingsTable, params: &PrepareParams) -> Result<Bundle> {
    let mut rng = seeded(params.seed);
    let (train, test) = ingest::split(&table.ratings, params.split_fraction, &mut rng)?;
    let (n, m) = (table.num_users(), table.num_items());
    let (train_f, train_rep) = als::complete(n, m, &train, &params.als, &mut rng)?;
    let (test_f, test_rep) = als::complete(n, m, &test, &params.als, &mut rng)?;
    let clusters = kmeans::cluster(&train_f.users, &params.kmeans, &mut rng)?;
    let bundle = Bundle {
        format: BUNDLE_FORMAT,
        config_hash: params.hash(),
        params: params.clone(),
        user_ids: table.user_ids.clone(),
        item_ids: table.item_ids.clone(),
        genre_names: table.genre_names.clone(),
        item_genres: table.item_genres.clone(),
        rating_range: table.rating_range(),
        train: TrainFactors(train_f),
        test: TestFactors(test_f),
        clusters,
        train_rmse: train_rep.rmse,
        test_rmse: test_rep.rmse,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Per-round slates: genres drawn with replacement, one movie per genre.
#[derive(Debug, Clone)]
pub struct SlateContexts {
    train_items: Arc<DMatrix<f64>>,
    test_items: Arc<DMatrix<f64>>,
    /// Items of each genre that has at least one item.
    genre_pool: Vec<Vec<usize>>,
    slate: usize,
}

impl SlateContexts {
    pub fn new(bundle: &Bundle, slate: usize) -> Result<Self> {
        if slate == 0 {
            return Err(Error::Config("slate size must be >= 1".into()));
        }
        let mut by_genre = vec![Vec::new(); bundle.genre_names.len()];
        for (item, gs) in bundle.item_genres.iter().enumerate() {
            for &g in gs {
                by_genre[g].push(item);
            }
        }
        let genre_pool: Vec<Vec<usize>> = by_genre.into_iter().filter(|v| !v.is_empty()).collect();
        if genre_pool.is_empty() {
            return Err(Error::EmptyData("no genre has a surviving movie".into()));
        }
        Ok(Self {
            train_items: Arc::new(bundle.train.0.items.clone()),
            test_items: Arc::new(bundle.test.0.items.clone()),
            genre_pool,
            slate,
        })
    }

    pub fn genres(&self) -> usize {
        self.genre_pool.len()
    }

    pub fn build_round_context(&self, rng: &mut SimRng) -> Result<RoundContext> {
        let items: Vec<usize> = (0..self.slate)
            .map(|_| {
                let pool = &self.genre_pool[rng.random_range(0..self.genre_pool.len())];
                pool[rng.random_range(0..pool.len())]
            })
            .collect();
        let rows =
            |m: &DMatrix<f64>| DMatrix::from_fn(items.len(), m.ncols(), |r, c| m[(items[r], c)]);
        Ok(RoundContext {
            visible: Context::from_features(rows(&self.train_items))?,
            truth: Some(Context::from_features(rows(&self.test_items))?),
            items: Some(items),
        })
    }
}

impl ContextProcess for SlateContexts {
    fn sample(&self, rng: &mut SimRng) -> Result<RoundContext> {
        self.build_round_context(rng)
    }
}

/// How the configured reward-noise number is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    #[default]
    Variance,
    StdDev,
}

pub fn noise_sigma(value: f64, scale: NoiseScale) -> Result<f64> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Config(format!(
            "reward noise must be positive, got {value}"
        )));
    }
    Ok(match scale {
        NoiseScale::Variance => value.sqrt(),
        NoiseScale::StdDev => value,
    })
}

/// Offline model for the policies: one linear parameter per cluster, the centroid.
pub fn centroid_model(bundle: &Bundle) -> Result<LatentModel> {
    LatentModel::from_params(bundle.clusters.centroids.clone())
}

pub fn cluster_prior(bundle: &Bundle) -> Result<GaussianModelPrior> {
    GaussianModelPrior::full(
        bundle.clusters.centroids.clone(),
        bundle.clusters.covariances.clone(),
    )
}

/// Latent prior proportional to cluster sizes (users are drawn uniformly).
pub fn cluster_frequencies(bundle: &Bundle) -> Result<LatentPrior> {
    let sizes = bundle.clusters.sizes();
    let total: usize = sizes.iter().sum();
    let mut probs: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
    // absorb rounding so the vector sums to one
    let drift: f64 = 1.0 - probs.iter().sum::<f64>();
    probs[0] += drift;
    LatentPrior::new(probs)
}

/// Bandit instance for one user: its test factor sits at its cluster's slot.
pub fn build_instance(
    bundle: &Bundle,
    contexts: Arc<dyn ContextProcess>,
    user: usize,
    sigma: f64,
    horizon: usize,
) -> Result<BanditInstance> {
    if user >= bundle.num_users() {
        return Err(Error::Dimension {
            what: "user index",
            expected: bundle.num_users(),
            got: user,
        });
    }
    let state = bundle.clusters.assignments[user];
    let mut params = bundle.clusters.centroids.clone();
    params[state] = bundle.test.0.user(user);
    BanditInstance::new(
        LatentModel::from_params(params)?,
        StateId(state),
        sigma,
        contexts,
        horizon,
    )
}

/// Distinct users drawn uniformly.
pub fn sample_users(num_users: usize, count: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
    if count > num_users {
        return Err(Error::Config(format!(
            "cannot evaluate {count} distinct users out of {num_users}"
        )));
    }
    Ok(index::sample(rng, num_users, count).into_vec())
}

/// One run per sampled user.
#[derive(Debug, Clone)]
pub struct MovieLensScenario {
    pub bundle: Arc<Bundle>,
    pub contexts: Arc<SlateContexts>,
    pub users: Vec<usize>,
    pub horizon: usize,
    pub sigma: f64,
    pub epsilon: f64,
    model: LatentModel,
    model_prior: GaussianModelPrior,
    latent_prior: LatentPrior,
}

impl MovieLensScenario {
    pub fn new(
        bundle: Arc<Bundle>,
        slate: usize,
        users: Vec<usize>,
        horizon: usize,
        sigma: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let contexts = Arc::new(SlateContexts::new(&bundle, slate)?);
        Ok(Self {
            model: centroid_model(&bundle)?,
            model_prior: cluster_prior(&bundle)?,
            latent_prior: cluster_frequencies(&bundle)?,
            bundle,
            contexts,
            users,
            horizon,
            sigma,
            epsilon,
        })
    }
}

impl Scenario for MovieLensScenario {
    fn setup(&self, run: usize, _rng: &mut SimRng) -> Result<RunSetup> {
        let user = *self
            .users
            .get(run)
            .ok_or_else(|| Error::Config(format!("run {run} has no sampled user")))?;
        let instance = build_instance(
            &self.bundle,
            self.contexts.clone(),
            user,
            self.sigma,
            self.horizon,
        )?;
        Ok(RunSetup {
            instance,
            model: self.model.clone(),
            model_prior: self.model_prior.clone(),
            latent_prior: self.latent_prior.clone(),
            reward_range: self.bundle.rating_range,
            default_epsilon: self.epsilon,
        })
    }
}
