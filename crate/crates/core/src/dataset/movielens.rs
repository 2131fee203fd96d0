//! Reader for the MovieLens 1M `::`-delimited release.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ContentCatalog, Demographics, Interaction, RatingsDataset};
use crate::error::{Error, Result};

/// Maps the 1..=5 star scale onto `[0, 1]` as `(stars - 1) / 4`.
pub fn normalize_stars(stars: u8) -> Result<f64> {
    if !(1..=5).contains(&stars) {
        return Err(Error::Data(format!("star rating {stars} outside 1..=5")));
    }
    Ok(f64::from(stars - 1) / 4.0)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    // movies.dat is Latin-1; only the leading numeric fields are ever used.
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes)
        .lines()
        .map(str::to_owned)
        .collect())
}

fn fields<'a>(line: &'a str, want: usize, path: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split("::").collect();
    if parts.len() < want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("expected {want} '::'-separated fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

fn num<T: std::str::FromStr>(s: &str, what: &str, path: &Path, lineno: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg: format!("bad {what} {s:?}"),
    })
}

/// Loads `ratings.dat`, `users.dat` and `movies.dat`.
///
/// Interactions come back sorted by `(user_id, timestamp, content_id)`. The
/// catalog lists every movie in `movies.dat` by ascending id.
pub fn load_movielens(
    ratings_path: impl AsRef<Path>,
    users_path: impl AsRef<Path>,
    movies_path: impl AsRef<Path>,
) -> Result<RatingsDataset> {
    let (ratings_path, users_path, movies_path) =
        (ratings_path.as_ref(), users_path.as_ref(), movies_path.as_ref());

    let mut movie_ids = Vec::new();
    for (i, line) in read_lines(movies_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line, 3, movies_path, i + 1)?;
        movie_ids.push(num::<u32>(f[0], "movie id", movies_path, i + 1)?);
    }
    movie_ids.sort_unstable();
    let catalog = ContentCatalog::new(movie_ids)?;

    let mut demographics = BTreeMap::new();
    for (i, line) in read_lines(users_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line, 4, users_path, i + 1)?;
        let user: u32 = num(f[0], "user id", users_path, i + 1)?;
        let gender = match f[1].trim() {
            "M" => 1.0,
            "F" => 0.0,
            other => {
                return Err(Error::Parse {
                    path: users_path.to_path_buf(),
                    line: i + 1,
                    msg: format!("bad gender {other:?}"),
                })
            }
        };
        let age: u32 = num(f[2], "age", users_path, i + 1)?;
        let occupation: u32 = num(f[3], "occupation", users_path, i + 1)?;
        demographics.insert(
            user,
            Demographics {
                gender,
                age: f64::from(age) / 56.0,
                occupation: f64::from(occupation) / 20.0,
            },
        );
    }

    let mut interactions = Vec::new();
    for (i, line) in read_lines(ratings_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line, 4, ratings_path, i + 1)?;
        let user_id = num(f[0], "user id", ratings_path, i + 1)?;
        let content_id = num(f[1], "movie id", ratings_path, i + 1)?;
        let stars: u8 = num(f[2], "rating", ratings_path, i + 1)?;
        let rating = normalize_stars(stars).map_err(|e| Error::Parse {
            path: ratings_path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let timestamp = num(f[3], "timestamp", ratings_path, i + 1)?;
        interactions.push(Interaction {
            user_id,
            content_id,
            rating,
            timestamp,
        });
    }
    interactions.sort_by(|a: &Interaction, b| {
        (a.user_id, a.timestamp, a.content_id).cmp(&(b.user_id, b.timestamp, b.content_id))
    });

    Ok(RatingsDataset {
        catalog,
        interactions,
        demographics,
    })
}
