use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// File-backed map from namespaced entity key (`c:`, `q:`, `s:`, `h:`) to a
/// fixed-length vector. Values are held as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inserts or replaces a row; returns `true` when the key already existed.
    pub fn insert(&mut self, key: impl Into<String>, values: &[f64]) -> Result<bool> {
        let key = key.into();
        if values.len() != self.dim {
            return Err(Error::Format(format!(
                "`{key}` has {} values, expected {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("`{key}` contains a non-finite value")));
        }
        let row = values.iter().map(|&v| v as f32).collect();
        Ok(self.rows.insert(key, row).is_some())
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.rows.get(key).map(|r| r.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.rows.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }
}

/// Reads `dim=<D>` followed by `<key>\t<v1>,...,<vD>` lines. Duplicate keys:
/// the last one wins and a warning is logged.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Format(format!("{}: empty file, missing `dim=` header", path.display())))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Format(format!("{}: missing `dim=<D>` header", path.display())))?;
    let mut table = EmbeddingTable::new(dim);
    let mut duplicates = 0usize;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected `<key>\\t<values>`", path.display(), i + 2)))?;
        let parsed: Result<Vec<f64>> = values
            .split(',')
            .map(|v| {
                // f32 parse keeps write/read an exact round trip
                let x: f32 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("`{key}`: cannot parse value `{v}`")))?;
                if x.is_nan() {
                    return Err(Error::Format(format!("`{key}`: NaN value")));
                }
                Ok(f64::from(x))
            })
            .collect();
        if table.insert(key, &parsed?)? {
            duplicates += 1;
            log::warn!("duplicate embedding key `{key}`; keeping the last row");
        }
    }
    if duplicates > 0 {
        log::warn!("{duplicates} duplicate embedding keys in {}", path.display());
    }
    Ok(table)
}

pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "dim={}", table.dim)?;
    for (key, row) in &table.rows {
        write!(w, "{key}\t")?;
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
