//! Ratings and movie-genre ingestion with iterated count thresholds.
//!
//! Ratings lines are `UserID::MovieID::Rating::Timestamp`; movie lines are
//! `MovieID::Title::Genre1|Genre2|...`. Movie files are read as bytes and
//! decoded lossily since some distributions are Latin-1 encoded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRating {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
}

/// Parse one ratings line.
pub fn parse_rating_line(line: &str) -> std::result::Result<RawRating, String> {
    let mut fields = line.trim_end_matches(['\r', '\n']).split("::");
    let mut next = |what: &str| {
        fields
            .next()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| format!("missing {what}"))
    };
    let user = next("user id")?;
    let item = next("movie id")?;
    let rating = next("rating")?;
    let stamp = next("timestamp")?;
    if fields.next().is_some() {
        return Err("too many fields".into());
    }
    let user = user
        .trim()
        .parse::<u32>()
        .map_err(|e| format!("bad user id `{user}`: {e}"))?;
    let item = item
        .trim()
        .parse::<u32>()
        .map_err(|e| format!("bad movie id `{item}`: {e}"))?;
    let rating = rating
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad rating `{rating}`: {e}"))?;
    if !rating.is_finite() {
        return Err(format!("rating must be finite, got {rating}"));
    }
    stamp
        .trim()
        .parse::<i64>()
        .map_err(|e| format!("bad timestamp `{stamp}`: {e}"))?;
    Ok(RawRating { user, item, rating })
}

/// Parse one movies line into `(movie id, genres)`.
pub fn parse_movie_line(line: &str) -> std::result::Result<(u32, Vec<String>), String> {
    let line = line.trim_end_matches(['\r', '\n']);
    let (id, rest) = line.split_once("::").ok_or("missing `::` separator")?;
    let (_title, genres) = rest.rsplit_once("::").ok_or("missing genre field")?;
    let id = id
        .trim()
        .parse::<u32>()
        .map_err(|e| format!("bad movie id `{id}`: {e}"))?;
    let genres = genres
        .split('|')
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .map(str::to_string)
        .collect();
    Ok((id, genres))
}

fn for_each_line(
    mut reader: impl BufRead,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        lineno += 1;
        let text = String::from_utf8_lossy(&buf);
        if text.trim().is_empty() {
            continue;
        }
        f(lineno, &text)?;
    }
}

pub fn read_ratings(reader: impl BufRead) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for_each_line(reader, |line, text| {
        let r = parse_rating_line(text).map_err(|message| Error::Parse { line, message })?;
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_movies(reader: impl BufRead) -> Result<BTreeMap<u32, Vec<String>>> {
    let mut out = BTreeMap::new();
    for_each_line(reader, |line, text| {
        let (id, genres) =
            parse_movie_line(text).map_err(|message| Error::Parse { line, message })?;
        out.insert(id, genres);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub min_user_ratings: usize,
    pub min_item_ratings: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_user_ratings: 200,
            min_item_ratings: 200,
        }
    }
}

/// Drop users and items below the thresholds until nothing changes.
pub fn filter_fixed_point(mut ratings: Vec<RawRating>, cfg: &IngestConfig) -> Vec<RawRating> {
    loop {
        let mut users: HashMap<u32, usize> = HashMap::new();
        let mut items: HashMap<u32, usize> = HashMap::new();
        for r in &ratings {
            *users.entry(r.user).or_default() += 1;
            *items.entry(r.item).or_default() += 1;
        }
        let before = ratings.len();
        ratings.retain(|r| {
            users[&r.user] >= cfg.min_user_ratings && items[&r.item] >= cfg.min_item_ratings
        });
        if ratings.len() == before {
            return ratings;
        }
    }
}

/// Filtered ratings with dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    /// `(user index, item index, rating)`.
    pub ratings: Vec<(usize, usize, f64)>,
    /// Original id of each dense user index, ascending.
    pub user_ids: Vec<u32>,
    /// Original id of each dense item index, ascending.
    pub item_ids: Vec<u32>,
    pub genre_names: Vec<String>,
    /// Genre indices of each item; empty when the movie file lacks it.
    pub item_genres: Vec<Vec<usize>>,
}

impl RatingsTable {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn rating_range(&self) -> (f64, f64) {
        self.ratings
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.2), hi.max(r.2))
            })
    }

    pub fn build(
        raw: Vec<RawRating>,
        movies: &BTreeMap<u32, Vec<String>>,
        cfg: &IngestConfig,
    ) -> Result<Self> {
        let kept = filter_fixed_point(raw, cfg);
        if kept.is_empty() {
            return Err(Error::EmptyData(format!(
                "no ratings survive thresholds (users >= {}, items >= {})",
                cfg.min_user_ratings, cfg.min_item_ratings
            )));
        }
        let user_ids: Vec<u32> = kept
            .iter()
            .map(|r| r.user)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let item_ids: Vec<u32> = kept
            .iter()
            .map(|r| r.item)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let uidx: HashMap<u32, usize> = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let iidx: HashMap<u32, usize> = item_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let ratings = kept
            .iter()
            .map(|r| (uidx[&r.user], iidx[&r.item], r.rating))
            .collect();

        let genre_names: Vec<String> = item_ids
            .iter()
            .filter_map(|id| movies.get(id))
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let gidx: HashMap<&str, usize> = genre_names
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let item_genres = item_ids
            .iter()
            .map(|id| {
                let mut gs: Vec<usize> = movies
                    .get(id)
                    .map(|gs| gs.iter().map(|g| gidx[g.as_str()]).collect())
                    .unwrap_or_default();
                gs.sort_unstable();
                gs.dedup();
                gs
            })
            .collect();
        Ok(Self {
            ratings,
            user_ids,
            item_ids,
            genre_names,
            item_genres,
        })
    }
}

pub fn ingest_from(
    ratings: impl BufRead,
    movies: impl BufRead,
    cfg: &IngestConfig,
) -> Result<RatingsTable> {
    let raw = read_ratings(ratings)?;
    let movies = read_movies(movies)?;
    RatingsTable::build(raw, &movies, cfg)
}

pub fn ingest(ratings: &Path, movies: &Path, cfg: &IngestConfig) -> Result<RatingsTable> {
    let open = |p: &Path| {
        File::open(p).map(BufReader::new).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", p.display()),
            ))
        })
    };
    let table = ingest_from(open(ratings)?, open(movies)?, cfg)?;
    log::info!(
        "ingest: {} users, {} items, {} ratings",
        table.num_users(),
        table.num_items(),
        table.ratings.len()
    );
    Ok(table)
}

/// `(user index, item index, rating)` triples.
pub type Triples = Vec<(usize, usize, f64)>;

/// Random disjoint split; the first part gets `round(fraction * len)` ratings.
pub fn split(
    ratings: &[(usize, usize, f64)],
    fraction: f64,
    rng: &mut SimRng,
) -> Result<(Triples, Triples)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "split fraction must be in [0, 1], got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    order.shuffle(rng);
    let take = (fraction * ratings.len() as f64).round() as usize;
    let mut first: Vec<usize> = order[..take].to_vec();
    let mut second: Vec<usize> = order[take..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((
        first.into_iter().map(|i| ratings[i]).collect(),
        second.into_iter().map(|i| ratings[i]).collect(),
    ))
}
