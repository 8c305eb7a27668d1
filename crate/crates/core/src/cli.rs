//! Command implementations behind the `latent-bandits` binary.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{ExperimentConfig, MovieLensExperiment, SynthExperiment};
use crate::error::{Error, ErrorClass, Result};
use crate::harness::{run_bayes, run_experiment, ExperimentResult};
use crate::output::{write_aggregate_csv, write_runs_csv};
use crate::recsys::{self, ingest, Bundle, MovieLensScenario};
use crate::rng::seeded;

pub const RUNS_FILE: &str = "runs.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Write both CSVs into `dir`; nothing is left behind on failure.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let runs = dir.join(RUNS_FILE);
    let agg = dir.join(AGGREGATE_FILE);
    let attempt = || -> Result<()> {
        write_runs_csv(BufWriter::new(fs::File::create(&runs)?), result)?;
        write_aggregate_csv(BufWriter::new(fs::File::create(&agg)?), &result.curves())?;
        Ok(())
    };
    if let Err(e) = attempt() {
        for p in [&runs, &agg] {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    Ok(vec![runs, agg])
}

fn load_synth(config: &Path) -> Result<SynthExperiment> {
    match ExperimentConfig::load(config)? {
        ExperimentConfig::Synth(s) => Ok(s),
        ExperimentConfig::Movielens(_) => Err(Error::Config(format!(
            "{} is a movielens config; expected kind = \"synth\"",
            config.display()
        ))),
    }
}

fn load_movielens(config: &Path) -> Result<MovieLensExperiment> {
    match ExperimentConfig::load(config)? {
        ExperimentConfig::Movielens(m) => Ok(m),
        ExperimentConfig::Synth(_) => Err(Error::Config(format!(
            "{} is a synth config; expected kind = \"movielens\"",
            config.display()
        ))),
    }
}

pub fn synth_run(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    threads: usize,
) -> Result<ExperimentResult> {
    let mut exp = load_synth(config)?;
    if let Some(s) = seed {
        exp.seed = s;
    }
    let result = run_bayes(&exp.synth_config(), &exp.prior()?, &exp.policies, threads)?;
    write_outputs(out, &result)?;
    Ok(result)
}

pub fn movielens_prepare(
    config: &Path,
    out: &Path,
    ratings: Option<PathBuf>,
    movies: Option<PathBuf>,
) -> Result<Bundle> {
    let exp = load_movielens(config)?;
    let ratings = ratings
        .or(exp.ratings.clone())
        .ok_or_else(|| Error::Config("no ratings file given".into()))?;
    let movies = movies
        .or(exp.movies.clone())
        .ok_or_else(|| Error::Config("no movies file given".into()))?;
    let params = exp.prepare_params();
    let table = ingest::ingest(&ratings, &movies, &params.ingest)?;
    println!(
        "filtered: {} users, {} movies, {} ratings",
        table.num_users(),
        table.num_items(),
        table.ratings.len()
    );
    let bundle = recsys::prepare(&table, &params)?;
    for (i, (a, b)) in bundle.train_rmse.iter().zip(&bundle.test_rmse).enumerate() {
        println!("sweep {:>3}: train rmse {a:.6}, test rmse {b:.6}", i + 1);
    }
    if let Err(e) = bundle.save(out) {
        let _ = fs::remove_file(out);
        return Err(e);
    }
    Ok(bundle)
}

pub fn movielens_run(
    config: &Path,
    bundle_path: Option<PathBuf>,
    out: &Path,
    seed: Option<u64>,
    threads: usize,
) -> Result<ExperimentResult> {
    let mut exp = load_movielens(config)?;
    if let Some(s) = seed {
        exp.seed = s;
    }
    let path = bundle_path
        .or(exp.bundle.clone())
        .ok_or_else(|| Error::Config("no bundle given".into()))?;
    let bundle = Bundle::load(&path)?;
    if bundle.config_hash != exp.prepare_params().hash() {
        return Err(Error::Config(format!(
            "bundle {} was prepared with different parameters than this config",
            path.display()
        )));
    }
    let sigma = recsys::noise_sigma(exp.noise, exp.noise_scale)?;
    let users = recsys::sample_users(bundle.num_users(), exp.users, &mut seeded(exp.seed))?;
    let scenario = MovieLensScenario::new(
        Arc::new(bundle),
        exp.slate,
        users,
        exp.horizon,
        sigma,
        exp.epsilon,
    )?;
    let result = run_experiment(&scenario, &exp.policies, exp.users, exp.seed, threads)?;
    write_outputs(out, &result)?;
    Ok(result)
}
