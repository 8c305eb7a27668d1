//! Regularized alternating least squares on observed entries.
//!
//! Minimizes `sum_(i,j) (r_ij - u_i . v_j)^2 + lambda (|U|^2 + |V|^2)` by
//! exact row-wise ridge solves, alternating between user and item factors.
//! Each half-sweep is a block minimization, so the objective never increases.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub rank: usize,
    pub lambda: f64,
    pub sweeps: usize,
    /// Standard deviation of the random item-factor initialization.
    pub init_scale: f64,
    pub parallel: bool,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            rank: 20,
            lambda: 0.1,
            sweeps: 20,
            init_scale: 0.1,
            parallel: true,
        }
    }
}

/// `M ~ U V^T` with one row per user and per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub users: DMatrix<f64>,
    pub items: DMatrix<f64>,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.users.ncols()
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).dot(&self.items.row(item))
    }

    pub fn user(&self, i: usize) -> DVector<f64> {
        self.users.row(i).transpose()
    }

    pub fn item(&self, j: usize) -> DVector<f64> {
        self.items.row(j).transpose()
    }

    pub fn rmse(&self, obs: &[(usize, usize, f64)]) -> f64 {
        if obs.is_empty() {
            return 0.0;
        }
        let sse: f64 = obs
            .iter()
            .map(|&(u, i, r)| (r - self.predict(u, i)).powi(2))
            .sum();
        (sse / obs.len() as f64).sqrt()
    }

    pub fn objective(&self, obs: &[(usize, usize, f64)], lambda: f64) -> f64 {
        let sse: f64 = obs
            .iter()
            .map(|&(u, i, r)| (r - self.predict(u, i)).powi(2))
            .sum();
        sse + lambda * (self.users.norm_squared() + self.items.norm_squared())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlsReport {
    /// Observed-entry RMSE after each full sweep.
    pub rmse: Vec<f64>,
    /// Objective at initialization and after every half-sweep.
    pub objective: Vec<f64>,
}

/// Observations grouped by row: `(column, value)` lists.
fn group(n: usize, obs: impl Iterator<Item = (usize, usize, f64)>) -> Vec<Vec<(usize, f64)>> {
    let mut rows = vec![Vec::new(); n];
    for (r, c, v) in obs {
        rows[r].push((c, v));
    }
    rows
}

fn solve_row(fixed: &DMatrix<f64>, entries: &[(usize, f64)], lambda: f64) -> Result<DVector<f64>> {
    let k = fixed.ncols();
    if entries.is_empty() {
        return Ok(DVector::zeros(k));
    }
    let mut a = DMatrix::<f64>::identity(k, k) * lambda;
    let mut b = DVector::<f64>::zeros(k);
    for &(c, v) in entries {
        let x = fixed.row(c).transpose();
        a.ger(1.0, &x, &x, 1.0);
        b.axpy(v, &x, 1.0);
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("ALS normal equations are not positive definite".into()))?;
    Ok(chol.solve(&b))
}

fn solve_side(
    target: &mut DMatrix<f64>,
    fixed: &DMatrix<f64>,
    rows: &[Vec<(usize, f64)>],
    lambda: f64,
    parallel: bool,
) -> Result<()> {
    let solved: Vec<DVector<f64>> = if parallel {
        rows.par_iter()
            .map(|e| solve_row(fixed, e, lambda))
            .collect::<Result<_>>()?
    } else {
        rows.iter()
            .map(|e| solve_row(fixed, e, lambda))
            .collect::<Result<_>>()?
    };
    for (i, x) in solved.iter().enumerate() {
        target.set_row(i, &x.transpose());
    }
    Ok(())
}

/// Factor the observed entries of an `n_users x n_items` matrix.
pub fn complete(
    n_users: usize,
    n_items: usize,
    obs: &[(usize, usize, f64)],
    cfg: &AlsConfig,
    rng: &mut SimRng,
) -> Result<(FactorModel, AlsReport)> {
    if cfg.rank == 0 {
        return Err(Error::Config("ALS rank must be >= 1".into()));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::Config(format!(
            "ALS lambda must be > 0, got {}",
            cfg.lambda
        )));
    }
    if obs.is_empty() {
        return Err(Error::EmptyData("no observed entries to factor".into()));
    }
    if let Some(&(u, i, _)) = obs.iter().find(|&&(u, i, _)| u >= n_users || i >= n_items) {
        return Err(Error::Dimension {
            what: "observed entry index",
            expected: if u >= n_users { n_users } else { n_items },
            got: if u >= n_users { u } else { i },
        });
    }
    let by_user = group(n_users, obs.iter().copied());
    let by_item = group(n_items, obs.iter().map(|&(u, i, r)| (i, u, r)));

    let mut model = FactorModel {
        users: DMatrix::zeros(n_users, cfg.rank),
        items: DMatrix::from_fn(n_items, cfg.rank, |_, _| {
            cfg.init_scale * rng.sample::<f64, _>(StandardNormal)
        }),
    };
    let mut report = AlsReport::default();
    report.objective.push(model.objective(obs, cfg.lambda));
    for sweep in 0..cfg.sweeps {
        solve_side(
            &mut model.users,
            &model.items,
            &by_user,
            cfg.lambda,
            cfg.parallel,
        )?;
        report.objective.push(model.objective(obs, cfg.lambda));
        solve_side(
            &mut model.items,
            &model.users,
            &by_item,
            cfg.lambda,
            cfg.parallel,
        )?;
        report.objective.push(model.objective(obs, cfg.lambda));
        let rmse = model.rmse(obs);
        if !rmse.is_finite() {
            return Err(Error::Numerical(format!(
                "ALS diverged at sweep {}",
                sweep + 1
            )));
        }
        log::info!("als sweep {}: rmse {rmse:.6}", sweep + 1);
        report.rmse.push(rmse);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn rank_one(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
        let u: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let v: Vec<f64> = (0..m).map(|j| 0.5 - 0.05 * j as f64).collect();
        (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, u[i] * v[j]))
            .collect()
    }

    #[test]
    fn recovers_rank_one_matrix() {
        let obs = rank_one(12, 9);
        let cfg = AlsConfig {
            rank: 1,
            lambda: 1e-6,
            sweeps: 50,
            ..AlsConfig::default()
        };
        let (m, _) = complete(12, 9, &obs, &cfg, &mut seeded(0)).unwrap();
        let worst = obs
            .iter()
            .map(|&(i, j, r)| (m.predict(i, j) - r).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let obs = rank_one(6, 5);
        let cfg = AlsConfig {
            rank: 2,
            lambda: 1e8,
            sweeps: 3,
            ..AlsConfig::default()
        };
        let (m, _) = complete(6, 5, &obs, &cfg, &mut seeded(0)).unwrap();
        assert!(m.users.amax() < 1e-6 && m.items.amax() < 1e-6);
        assert!(obs.iter().all(|&(i, j, _)| m.predict(i, j).abs() < 1e-9));
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = seeded(3);
        let obs: Vec<(usize, usize, f64)> = (0..600)
            .map(|_| {
                (
                    rng.random_range(0..40),
                    rng.random_range(0..30),
                    rng.random_range(1.0..5.0),
                )
            })
            .collect();
        let cfg = AlsConfig {
            rank: 4,
            sweeps: 15,
            ..AlsConfig::default()
        };
        let (_, rep) = complete(40, 30, &obs, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(rep.objective.len(), 31);
        for w in rep.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-8 * w[0].max(1.0), "{w:?}");
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let obs = rank_one(20, 15);
        let seq = AlsConfig {
            rank: 3,
            sweeps: 4,
            parallel: false,
            ..AlsConfig::default()
        };
        let par = AlsConfig {
            parallel: true,
            ..seq
        };
        let a = complete(20, 15, &obs, &seq, &mut seeded(5)).unwrap();
        let b = complete(20, 15, &obs, &par, &mut seeded(5)).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let obs = rank_one(2, 2);
        let cfg = AlsConfig {
            lambda: 0.0,
            ..AlsConfig::default()
        };
        assert!(complete(2, 2, &obs, &cfg, &mut seeded(0)).is_err());
        let cfg = AlsConfig {
            rank: 0,
            ..AlsConfig::default()
        };
        assert!(complete(2, 2, &obs, &cfg, &mut seeded(0)).is_err());
        assert!(complete(1, 2, &obs, &AlsConfig::default(), &mut seeded(0)).is_err());
    }
}
