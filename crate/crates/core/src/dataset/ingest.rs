use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::dataset::{RatingDataset, RatingRange, RatingTriple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// One `user,item,rating` record per line (column order configurable).
    Delimited,
    /// Netflix prize per-movie files: a `movie_id:` line followed by
    /// `customer,rating,date` lines.
    NetflixPerMovie,
}

#[derive(Debug, Clone)]
pub struct Schema {
    pub format: InputFormat,
    pub delimiter: char,
    pub user_col: usize,
    pub item_col: usize,
    pub rating_col: usize,
    pub skip_header: bool,
    pub range: RatingRange,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            format: InputFormat::Delimited,
            delimiter: ',',
            user_col: 0,
            item_col: 1,
            rating_col: 2,
            skip_header: false,
            range: RatingRange::default(),
        }
    }
}

struct RawRating {
    user: u64,
    item: u64,
    rating: f32,
}

pub fn ingest_path(path: impl AsRef<Path>, schema: &Schema) -> Result<RatingDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(BufReader::new(file), schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses a text stream of rating triples into a densely re-indexed dataset.
pub fn ingest<R: BufRead>(reader: R, schema: &Schema) -> Result<RatingDataset> {
    let raw = match schema.format {
        InputFormat::Delimited => parse_delimited(reader, schema)?,
        InputFormat::NetflixPerMovie => parse_netflix(reader, schema)?,
    };
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut users = BTreeMap::new();
    let mut items = BTreeMap::new();
    for r in &raw {
        users.insert(r.user, 0u32);
        items.insert(r.item, 0u32);
    }
    let user_ids = assign_dense(&mut users);
    let item_ids = assign_dense(&mut items);

    let triples = raw
        .iter()
        .map(|r| RatingTriple::new(users[&r.user], items[&r.item], r.rating))
        .collect();
    RatingDataset::with_ids(triples, schema.range, user_ids, item_ids)
}

fn assign_dense(map: &mut BTreeMap<u64, u32>) -> Vec<u64> {
    let mut ids = Vec::with_capacity(map.len());
    for (dense, (original, slot)) in map.iter_mut().enumerate() {
        *slot = dense as u32;
        ids.push(*original);
    }
    ids
}

fn read_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().map(|(n, line)| {
        line.map(|l| (n + 1, l)).map_err(|e| Error::io("<input>", e))
    })
}

fn parse_id(field: Option<&str>, line: usize, what: &str) -> Result<u64> {
    let field = field.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what} column"),
    })?;
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} id {:?} is not a non-negative integer", field.trim()),
    })
}

fn parse_rating(field: Option<&str>, line: usize, range: RatingRange) -> Result<f32> {
    let field = field.ok_or_else(|| Error::Parse {
        line,
        message: "missing rating column".into(),
    })?;
    let rating: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("rating {:?} is not a number", field.trim()),
    })?;
    if !range.contains(rating) {
        return Err(Error::RatingOutOfRange {
            line,
            rating,
            min: range.min,
            max: range.max,
        });
    }
    Ok(rating as f32)
}

fn parse_delimited<R: BufRead>(reader: R, schema: &Schema) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for entry in read_lines(reader) {
        let (n, line) = entry?;
        if n == 1 && schema.skip_header {
            continue;
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).collect();
        out.push(RawRating {
            user: parse_id(fields.get(schema.user_col).copied(), n, "user")?,
            item: parse_id(fields.get(schema.item_col).copied(), n, "item")?,
            rating: parse_rating(fields.get(schema.rating_col).copied(), n, schema.range)?,
        });
    }
    Ok(out)
}

fn parse_netflix<R: BufRead>(reader: R, schema: &Schema) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    let mut movie = None;
    for entry in read_lines(reader) {
        let (n, line) = entry?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(id) = line.strip_suffix(':') {
            movie = Some(parse_id(Some(id), n, "movie")?);
            continue;
        }
        let item = movie.ok_or_else(|| Error::Parse {
            line: n,
            message: "rating before any `movie_id:` header".into(),
        })?;
        let mut fields = line.split(schema.delimiter);
        let user = parse_id(fields.next(), n, "customer")?;
        let rating = parse_rating(fields.next(), n, schema.range)?;
        out.push(RawRating { user, item, rating });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<RatingDataset> {
        ingest(text.as_bytes(), &Schema::default())
    }

    #[test]
    fn counts_three_line_input() {
        let ds = csv("0,0,5\n0,1,3\n1,0,4\n").unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.user_count(0), 2);
        assert_eq!(ds.user_count(1), 1);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(csv(""), Err(Error::EmptyDataset)));
        assert!(matches!(csv("# only a comment\n\n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn out_of_range_rating_reports_line() {
        match csv("0,0,3\n0,0,9\n") {
            Err(Error::RatingOutOfRange { line, rating, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(rating, 9.0);
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line() {
        assert!(matches!(csv("0,0,3\nx,1,2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(csv("0,0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(csv("0,0,abc\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn sparse_original_ids_are_densified_in_order() {
        let ds = csv("100,7,1\n5,900,2\n").unwrap();
        assert_eq!(ds.user_ids(), &[5, 100]);
        assert_eq!(ds.item_ids(), &[7, 900]);
        assert_eq!(ds.user_ratings(1)[0].item, 0);
    }

    #[test]
    fn custom_columns_and_delimiter() {
        let schema = Schema {
            delimiter: '\t',
            user_col: 1,
            item_col: 0,
            rating_col: 2,
            skip_header: true,
            ..Schema::default()
        };
        let ds = ingest("item\tuser\trating\n3\t1\t4.5\n".as_bytes(), &schema).unwrap();
        assert_eq!(ds.user_ids(), &[1]);
        assert_eq!(ds.item_ids(), &[3]);
        assert_eq!(ds.triples()[0].rating, 4.5);
    }

    #[test]
    fn netflix_per_movie_format() {
        let schema = Schema {
            format: InputFormat::NetflixPerMovie,
            ..Schema::default()
        };
        let text = "1:\n10,3,2005-09-06\n11,5,2005-05-13\n2:\n10,4,2005-10-19\n";
        let ds = ingest(text.as_bytes(), &schema).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.user_count(0), 2);
    }
}
