//! Ratings-file ingestion.
//!
//! Reads tab-separated `user item rating timestamp` records, keeps the most
//! active users and the most rated items, binarizes at `rating > 3` and embeds
//! the items by a truncated SVD of the first few user rows. The remaining
//! rows answer duels.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use fldb_core::{RatingsDataset, Vector};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::config::DatasetSpec;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("need {needed} distinct {what}, found {found}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("embedding width {dim} exceeds the rank limit {limit}")]
    Rank { dim: usize, limit: usize },
}

/// One rating event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub rating: i64,
    pub timestamp: i64,
}

/// Ratings strictly above this are positive feedback.
pub const POSITIVE_ABOVE: i64 = 3;

pub fn binarize(rating: i64) -> u8 {
    u8::from(rating > POSITIVE_ABOVE)
}

pub fn parse_interactions(text: &str) -> Result<Vec<Interaction>, IngestError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(IngestError::Parse {
                line,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let int = |i: usize, name: &str| -> Result<i64, IngestError> {
            fields[i].trim().parse().map_err(|_| IngestError::Parse {
                line,
                message: format!("{name} {:?} is not an integer", fields[i]),
            })
        };
        let id = |i: usize, name: &str| -> Result<u64, IngestError> {
            fields[i].trim().parse().map_err(|_| IngestError::Parse {
                line,
                message: format!("{name} {:?} is not a non-negative integer", fields[i]),
            })
        };
        out.push(Interaction {
            user: id(0, "user")?,
            item: id(1, "item")?,
            rating: int(2, "rating")?,
            timestamp: int(3, "timestamp")?,
        });
    }
    Ok(out)
}

/// Ids sorted by descending count, ties by ascending id; the first `n` kept.
fn top_by_count(counts: HashMap<u64, usize>, n: usize, what: &'static str) -> Result<Vec<u64>, IngestError> {
    if counts.len() < n {
        return Err(IngestError::InsufficientData {
            what,
            needed: n,
            found: counts.len(),
        });
    }
    let mut ranked: Vec<(u64, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(n).map(|(id, _)| id).collect())
}

/// Selected users and items with the binary matrix `H` (rows ordered by
/// activity, most active first).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMatrix {
    pub users: Vec<u64>,
    pub items: Vec<u64>,
    pub rows: Vec<Vec<u8>>,
}

/// Builds `H` over the top users and items. Unrated cells are 0; for
/// repeated `(user, item)` pairs the latest timestamp wins, then the later line.
pub fn binary_matrix(records: &[Interaction], n_users: usize, n_items: usize) -> Result<BinaryMatrix, IngestError> {
    let mut user_counts = HashMap::new();
    let mut item_counts = HashMap::new();
    for r in records {
        *user_counts.entry(r.user).or_insert(0) += 1;
        *item_counts.entry(r.item).or_insert(0) += 1;
    }
    let users = top_by_count(user_counts, n_users, "users")?;
    let items = top_by_count(item_counts, n_items, "items")?;
    let user_pos: HashMap<u64, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_pos: HashMap<u64, usize> = items.iter().enumerate().map(|(j, &v)| (v, j)).collect();

    let mut latest: HashMap<(usize, usize), (i64, u8)> = HashMap::new();
    for r in records {
        if let (Some(&i), Some(&j)) = (user_pos.get(&r.user), item_pos.get(&r.item)) {
            let entry = latest.entry((i, j)).or_insert((i64::MIN, 0));
            if r.timestamp >= entry.0 {
                *entry = (r.timestamp, binarize(r.rating));
            }
        }
    }
    let mut rows = vec![vec![0u8; n_items]; n_users];
    for ((i, j), (_, v)) in latest {
        rows[i][j] = v;
    }
    Ok(BinaryMatrix { users, items, rows })
}

/// Rank-`d` SVD of the feature rows.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    /// `U_d` (rows × d).
    pub left: DMatrix<f64>,
    /// `V_dᵀ` (d × items).
    pub right_t: DMatrix<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.left.ncols()
    }

    /// Item `j`'s feature: `(σ_k V[j, k])_{k < d}`.
    pub fn item_features(&self) -> Vec<Vector> {
        let d = self.dim();
        (0..self.right_t.ncols())
            .map(|j| {
                (0..d)
                    .map(|k| self.singular_values[k] * self.right_t[(k, j)])
                    .collect::<Vec<f64>>()
                    .into()
            })
            .collect()
    }

    /// `U_d Σ_d V_dᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.dim();
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&self.singular_values[..d]));
        &self.left * sigma * &self.right_t
    }
}

pub fn to_dmatrix(rows: &[Vec<u8>]) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), ncols, |i, j| f64::from(rows[i][j]))
}

pub fn svd_embedding(rows: &[Vec<u8>], dim: usize) -> Result<Embedding, IngestError> {
    let h = to_dmatrix(rows);
    let limit = h.nrows().min(h.ncols());
    if dim == 0 || dim > limit {
        return Err(IngestError::Rank { dim, limit });
    }
    let (nrows, ncols) = h.shape();
    let svd = h.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let left = DMatrix::from_fn(nrows, dim, |i, k| u[(i, order[k])]);
    let right_t = DMatrix::from_fn(dim, ncols, |k, j| v_t[(order[k], j)]);
    Ok(Embedding {
        singular_values,
        left,
        right_t,
    })
}

/// Parses `text` and builds the dataset.
pub fn ratings_from_str(text: &str, spec: &DatasetSpec, dim: usize) -> Result<RatingsDataset, IngestError> {
    let records = parse_interactions(text)?;
    let h = binary_matrix(&records, spec.n_users, spec.n_items)?;
    if spec.feature_rows == 0 || spec.feature_rows >= spec.n_users {
        return Err(IngestError::InsufficientData {
            what: "feedback rows",
            needed: 1,
            found: spec.n_users.saturating_sub(spec.feature_rows),
        });
    }
    let embedding = svd_embedding(&h.rows[..spec.feature_rows], dim)?;
    Ok(RatingsDataset::new(
        h.users,
        h.items,
        h.rows,
        spec.feature_rows,
        embedding.item_features(),
    ))
}

pub fn ingest_ratings(spec: &DatasetSpec, dim: usize) -> Result<RatingsDataset, IngestError> {
    let text = read(&spec.path)?;
    ratings_from_str(&text, spec, dim)
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}
