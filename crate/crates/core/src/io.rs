//! CSV loaders for datasets.
//!
//! A dataset file has a header row. Recognized columns are `user_id`
//! (optional), `point_index` (required) and `count` (optional; each row is a
//! single occurrence when absent).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metric::{ClusteredSpace, MetricSpace};
use crate::transport::Multiset;

struct Columns {
    user: Option<usize>,
    point: usize,
    count: Option<usize>,
}

fn columns(headers: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    Ok(Columns {
        user: find("user_id"),
        point: find("point_index").ok_or_else(|| Error::Parse("missing `point_index` column".into()))?,
        count: find("count"),
    })
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, col: usize, line: u64) -> Result<T> {
    let raw = record.get(col).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse `{raw}`")))
}

/// Reads per-user datasets keyed by `user_id`, ordered by user id (numeric
/// ids sort numerically). Without a `user_id` column the whole file is one
/// user.
pub fn read_users<R: Read>(reader: R, space: &Arc<MetricSpace>) -> Result<Vec<(String, Multiset)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let cols = columns(rdr.headers()?)?;
    let k = space.len();
    let mut users: BTreeMap<(u8, u64, String), Vec<u64>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let id = match cols.user {
            Some(c) => record.get(c).unwrap_or("").trim().to_string(),
            None => String::new(),
        };
        let key = match id.parse::<u64>() {
            Ok(n) => (0, n, id),
            Err(_) => (1, 0, id),
        };
        let x: usize = field(&record, cols.point, line)?;
        if x >= k {
            return Err(Error::Parse(format!(
                "line {line}: point {x} outside space of size {k}"
            )));
        }
        let c: u64 = match cols.count {
            Some(col) => field(&record, col, line)?,
            None => 1,
        };
        users.entry(key).or_insert_with(|| vec![0; k])[x] += c;
    }
    users
        .into_iter()
        .map(|((_, _, id), counts)| Ok((id, Multiset::new(space.clone(), counts)?)))
        .collect()
}

/// Reads a single dataset, pooling all rows regardless of `user_id`.
pub fn read_multiset<R: Read>(reader: R, space: &Arc<MetricSpace>) -> Result<Multiset> {
    let users = read_users(reader, space)?;
    if users.is_empty() {
        return Multiset::new(space.clone(), vec![0; space.len()]);
    }
    let sets: Vec<Multiset> = users.into_iter().map(|(_, m)| m).collect();
    Multiset::pooled(&sets)
}

pub fn read_users_file(path: impl AsRef<Path>, space: &Arc<MetricSpace>) -> Result<Vec<(String, Multiset)>> {
    read_users(std::fs::File::open(path)?, space)
}

pub fn read_multiset_file(path: impl AsRef<Path>, space: &Arc<MetricSpace>) -> Result<Multiset> {
    read_multiset(std::fs::File::open(path)?, space)
}

/// Resolves a `--space` argument: `clustered:s,t,r`, `discrete:k`, or the
/// path of a metric text file.
pub fn load_space(arg: &str) -> Result<MetricSpace> {
    let arg = arg.trim();
    if arg.starts_with("clustered") {
        return arg.parse::<ClusteredSpace>()?.metric();
    }
    if let Some(k) = arg.strip_prefix("discrete:") {
        let k = k
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad discrete space `{arg}`")))?;
        return MetricSpace::discrete(k);
    }
    MetricSpace::from_text(&std::fs::read_to_string(arg)?)
}

/// Reads a headerless numeric matrix, one row per line.
pub fn read_matrix<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = (0..record.len())
            .map(|c| field::<f64>(&record, c, i as u64 + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
