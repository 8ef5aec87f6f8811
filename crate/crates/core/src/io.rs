//! Ratings CSV with header `user,item,rating`.
//!
//! Identifiers receive dense indices in first-seen order. A blank rating
//! marks an unknown entry, which only partial matrices accept; pairs that
//! never appear are zero in a full matrix and unknown in a partial one.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::matrix::RatingsMatrix;
use crate::mc::PartialMatrix;

#[derive(Debug, Deserialize)]
struct Record {
    user: String,
    item: String,
    rating: Option<f64>,
}

/// Parsed CSV with identifier tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRatings {
    pub users: Vec<String>,
    pub items: Vec<String>,
    /// `(user index, item index, rating or unknown)` in file order.
    pub entries: Vec<(usize, usize, Option<f64>)>,
}

fn intern(map: &mut HashMap<String, usize>, names: &mut Vec<String>, key: String) -> usize {
    *map.entry(key.clone()).or_insert_with(|| {
        names.push(key);
        names.len() - 1
    })
}

pub fn read_ratings_csv<R: Read>(reader: R) -> Result<LabeledRatings> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["user", "item", "rating"] {
        return Err(Error::Csv(format!(
            "expected header user,item,rating, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut umap, mut imap) = (HashMap::new(), HashMap::new());
    let (mut users, mut items) = (Vec::new(), Vec::new());
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for (line, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec?;
        let u = intern(&mut umap, &mut users, rec.user);
        let i = intern(&mut imap, &mut items, rec.item);
        if !seen.insert((u, i)) {
            return Err(Error::Csv(format!(
                "duplicate pair ({}, {}) on data line {}",
                users[u],
                items[i],
                line + 1
            )));
        }
        entries.push((u, i, rec.rating));
    }
    Ok(LabeledRatings { users, items, entries })
}

impl LabeledRatings {
    /// Dense matrix; absent pairs are zero, blank ratings are rejected.
    pub fn to_matrix(&self) -> Result<RatingsMatrix> {
        let (m, n) = (self.users.len(), self.items.len());
        let mut data = vec![0.0; m * n];
        for &(u, i, v) in &self.entries {
            let v = v.ok_or_else(|| {
                Error::Csv(format!(
                    "blank rating for ({}, {}) in a full matrix",
                    self.users[u], self.items[i]
                ))
            })?;
            data[u * n + i] = v;
        }
        RatingsMatrix::new(m, n, data)
    }

    /// Partial matrix; absent pairs and blank ratings are unknown.
    pub fn to_partial(&self) -> Result<PartialMatrix> {
        let (m, n) = (self.users.len(), self.items.len());
        let mut rows = vec![vec![None; n]; m];
        for &(u, i, v) in &self.entries {
            rows[u][i] = v;
        }
        PartialMatrix::from_rows(&rows)
    }
}

/// Writes every entry of `r` (zeros included) with shortest round-trip
/// float formatting.
pub fn write_ratings_csv<W: Write>(
    writer: W,
    r: &RatingsMatrix,
    users: &[String],
    items: &[String],
) -> Result<()> {
    if users.len() != r.rows() || items.len() != r.cols() {
        return Err(Error::DimensionMismatch("identifier tables do not match the matrix".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user", "item", "rating"])?;
    for (u, user) in users.iter().enumerate() {
        for (i, item) in items.iter().enumerate() {
            w.write_record([user.as_str(), item.as_str(), &r.get(u, i).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// Default identifiers `prefix0, prefix1, ...`.
pub fn default_ids(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|k| format!("{prefix}{k}")).collect()
}
