//! k-means latent states over user factors, with per-cluster covariances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_categorical, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Re-seeding attempts when a cluster empties.
    pub reseed_retries: usize,
    /// Covariance ridge as a fraction of `trace / d`.
    pub ridge_scale: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 5,
            restarts: 10,
            max_iter: 300,
            reseed_retries: 10,
            ridge_scale: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `k x d`, one centroid per row.
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    /// Within-cluster SSE after each assignment step.
    pub sse_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub assignments: Vec<usize>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k()];
        for &a in &self.assignments {
            n[a] += 1;
        }
        n
    }
}

fn dist2(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (points.row(i) - centroids.row(c)).norm_squared()
}

fn plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let first = rng.random_range(0..n);
    centroids.set_row(0, &points.row(first));
    let mut d: Vec<f64> = (0..n).map(|i| dist2(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let probs: Vec<f64> = d.iter().map(|x| x / total).collect();
            sample_categorical(&probs, rng)
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &points.row(pick));
        for (i, di) in d.iter_mut().enumerate() {
            *di = di.min(dist2(points, i, &centroids, c));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let mut sse = 0.0;
    let labels = (0..points.nrows())
        .map(|i| {
            let (best, d) = (0..centroids.nrows())
                .map(|c| (c, dist2(points, i, centroids, c)))
                .fold(
                    (0, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                );
            sse += d;
            best
        })
        .collect();
    (labels, sse)
}

fn lloyd(points: &DMatrix<f64>, cfg: &KMeansConfig, rng: &mut SimRng) -> Result<KMeansFit> {
    let (n, d) = points.shape();
    let k = cfg.k;
    let mut centroids = plus_plus(points, k, rng);
    let mut retries = 0;
    let mut sse_trace = Vec::new();
    let (mut labels, mut sse) = assign(points, &centroids);
    sse_trace.push(sse);
    for _ in 0..cfg.max_iter {
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            let row = sums.row(c) + points.row(i);
            sums.set_row(c, &row);
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            if retries == cfg.reseed_retries {
                return Err(Error::Numerical(format!(
                    "k-means cluster stayed empty after {retries} re-seeds"
                )));
            }
            retries += 1;
            // farthest point from its current centroid becomes the new seed
            let far = (0..n)
                .map(|i| (i, dist2(points, i, &centroids, labels[i])))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                .0;
            centroids.set_row(empty, &points.row(far));
            (labels, sse) = assign(points, &centroids);
            sse_trace.push(sse);
            continue;
        }
        for (c, &n) in counts.iter().enumerate() {
            let mean = sums.row(c) / n as f64;
            centroids.set_row(c, &mean);
        }
        let (next, next_sse) = assign(points, &centroids);
        sse_trace.push(next_sse);
        let done = next == labels;
        labels = next;
        sse = next_sse;
        if done {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    for &c in &labels {
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Numerical(
            "k-means finished with an empty cluster".into(),
        ));
    }
    Ok(KMeansFit {
        centroids,
        assignments: labels,
        sse,
        sse_trace,
    })
}

/// Best of `restarts` k-means++ / Lloyd fits by final SSE.
pub fn kmeans(points: &DMatrix<f64>, cfg: &KMeansConfig, rng: &mut SimRng) -> Result<KMeansFit> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if points.nrows() < cfg.k {
        return Err(Error::EmptyData(format!(
            "{} points cannot form {} clusters",
            points.nrows(),
            cfg.k
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite point passed to k-means".into(),
        ));
    }
    let mut best: Option<KMeansFit> = None;
    let mut last_err = None;
    for _ in 0..cfg.restarts.max(1) {
        match lloyd(points, cfg, rng) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

/// Sample covariance of `members`, plus `ridge_scale * trace / d` on the
/// diagonal (`1e-6` when the trace is zero).
pub fn regularized_covariance(members: &[DVector<f64>], ridge_scale: f64) -> DMatrix<f64> {
    let d = members[0].len();
    let n = members.len();
    let mean = members.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    if n > 1 {
        for x in members {
            let c = x - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= (n - 1) as f64;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    let trace = cov.trace();
    let ridge = if trace > 0.0 {
        ridge_scale * trace / d as f64
    } else {
        1e-6
    };
    cov + DMatrix::identity(d, d) * ridge
}

/// Cluster the rows of `points` and attach regularized covariances.
pub fn cluster(
    points: &DMatrix<f64>,
    cfg: &KMeansConfig,
    rng: &mut SimRng,
) -> Result<ClusterModel> {
    let fit = kmeans(points, cfg, rng)?;
    let mut centroids = Vec::with_capacity(cfg.k);
    let mut covariances = Vec::with_capacity(cfg.k);
    for c in 0..cfg.k {
        let members: Vec<DVector<f64>> = fit
            .assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == c)
            .map(|(i, _)| points.row(i).transpose())
            .collect();
        let cov = regularized_covariance(&members, cfg.ridge_scale);
        if cov.clone().cholesky().is_none() {
            return Err(Error::Numerical(format!(
                "covariance of cluster {c} is not positive definite"
            )));
        }
        centroids.push(fit.centroids.row(c).transpose());
        covariances.push(cov);
    }
    Ok(ClusterModel {
        centroids,
        covariances,
        assignments: fit.assignments,
    })
}
