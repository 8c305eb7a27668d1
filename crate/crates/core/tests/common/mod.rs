#![allow(dead_code)]

pub mod props;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use latent_bandits::rng::seeded;

pub const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

pub struct Fixture {
    pub ratings: PathBuf,
    pub movies: PathBuf,
    /// Generating cluster of each user id (ids start at 1).
    pub user_cluster: Vec<usize>,
}

/// Low-rank ratings: 200 users in 5 separated groups, 150 items, rank 3,
/// Gaussian noise, about 60% of entries observed.
pub fn write_fixture(dir: &Path, seed: u64) -> Fixture {
    let (users, items, rank, groups) = (200, 150, 3, 5);
    let mut rng = seeded(seed);
    let centres: Vec<Vec<f64>> = (0..groups)
        .map(|g| {
            (0..rank)
                .map(|j| if j == g % rank { 1.5 } else { 0.0 } + if g >= rank { -1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let user_cluster: Vec<usize> = (0..users).map(|u| u % groups).collect();
    let u: Vec<Vec<f64>> = user_cluster
        .iter()
        .map(|&g| {
            centres[g]
                .iter()
                .map(|c| c + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let v: Vec<Vec<f64>> = (0..items)
        .map(|_| {
            (0..rank)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut text = String::new();
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            if rng.random::<f64>() < 0.6 {
                let mean: f64 = ui.iter().zip(vj).map(|(a, b)| a * b).sum();
                let r = mean + 0.1 * rng.sample::<f64, _>(StandardNormal);
                writeln!(
                    text,
                    "{}::{}::{r}::{}",
                    i + 1,
                    j + 1,
                    978300000 + i * 1000 + j
                )
                .unwrap();
            }
        }
    }
    let ratings = dir.join("ratings.dat");
    fs::write(&ratings, text).unwrap();
    let mut movies = String::new();
    for j in 0..items {
        let a = GENRES[j % 18];
        let b = GENRES[(j * 7 + 3) % 18];
        writeln!(movies, "{}::Movie {} (2000)::{a}|{b}", j + 1, j + 1).unwrap();
    }
    let movies_path = dir.join("movies.dat");
    fs::write(&movies_path, movies).unwrap();
    Fixture {
        ratings,
        movies: movies_path,
        user_cluster,
    }
}

/// Fraction of points whose label agrees with the best one-to-one relabeling.
pub fn label_agreement(found: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut table = vec![vec![0usize; k]; k];
    for (&f, &t) in found.iter().zip(truth) {
        table[f][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &table, &mut best);
    best as f64 / truth.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, table: &[Vec<usize>], best: &mut usize) {
    if i == p.len() {
        let hits = p.iter().enumerate().map(|(f, &t)| table[f][t]).sum();
        *best = (*best).max(hits);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, table, best);
        p.swap(i, j);
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Gaussian log density written out independently of the library.
pub fn log_gauss(r: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (r - mean).powi(2) / (2.0 * var)
}
