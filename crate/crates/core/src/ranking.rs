//! Rankings, percentile filters, quantile buckets and noise recall.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::ScoreTable;
use crate::tasks::{Dataset, NoiseReport};

/// Ids by descending score, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    ordered_ids: Vec<u64>,
    scores: Vec<f64>,
}

impl Ranking {
    pub fn ordered_ids(&self) -> &[u64] {
        &self.ordered_ids
    }

    /// Scores aligned with [`ordered_ids`](Self::ordered_ids).
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.ordered_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_ids.is_empty()
    }

    /// The `count` highest-ranked ids.
    pub fn top(&self, count: usize) -> &[u64] {
        &self.ordered_ids[..count.min(self.len())]
    }
}

pub fn rank(scores: &ScoreTable) -> Ranking {
    let mut pairs: Vec<(u64, f64)> = scores.entries().iter().map(|(&id, &s)| (id, s)).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ranking {
        ordered_ids: pairs.iter().map(|p| p.0).collect(),
        scores: pairs.iter().map(|p| p.1).collect(),
    }
}

/// `ceil(n · pct / 100)`, robust to representation error in the product.
pub fn top_count(n: usize, pct: f64) -> usize {
    let exact = n as f64 * pct / 100.0;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (count.max(0.0) as usize).min(n)
}

fn check_pct(pct: f64, allow_hundred: bool) -> Result<()> {
    let ok = pct >= 0.0 && (pct < 100.0 || (allow_hundred && pct == 100.0));
    if !ok {
        return Err(Error::arg(format!("percentage {pct} out of range")));
    }
    Ok(())
}

/// Kept and dropped ids of a percentile filter, in ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub kept_ids: Vec<u64>,
    pub dropped_ids: Vec<u64>,
    pub pct: f64,
    pub config_hash: String,
}

/// Splits `ds` into survivors and the `ceil(n · pct / 100)` top-ranked ids.
pub fn percentile_split(
    ds: &Dataset,
    ranking: &Ranking,
    drop_top_pct: f64,
) -> Result<(Dataset, BTreeSet<u64>)> {
    check_pct(drop_top_pct, false)?;
    let ids: BTreeSet<u64> = ds.ids().into_iter().collect();
    let ranked: BTreeSet<u64> = ranking.ordered_ids.iter().copied().collect();
    if ids != ranked {
        return Err(Error::arg(
            "ranking does not cover exactly the dataset's ids",
        ));
    }
    let dropped: BTreeSet<u64> = ranking
        .top(top_count(ds.len(), drop_top_pct))
        .iter()
        .copied()
        .collect();
    let kept: BTreeSet<u64> = ids.difference(&dropped).copied().collect();
    Ok((ds.subset(&kept), dropped))
}

pub fn percentile_filter(ds: &Dataset, ranking: &Ranking, drop_top_pct: f64) -> Result<Dataset> {
    percentile_split(ds, ranking, drop_top_pct).map(|(kept, _)| kept)
}

/// `K` contiguous score-quantile groups; bucket 0 holds the lowest scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketAssignment {
    k: usize,
    bucket_of: BTreeMap<u64, usize>,
    /// Lowest score in each bucket.
    boundaries: Vec<f64>,
}

impl BucketAssignment {
    pub fn from_map(k: usize, bucket_of: BTreeMap<u64, usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::arg("bucket count must be positive"));
        }
        if let Some((id, b)) = bucket_of.iter().find(|(_, &b)| b >= k) {
            return Err(Error::arg(format!(
                "id {id} assigned to bucket {b} >= K = {k}"
            )));
        }
        Ok(BucketAssignment {
            k,
            bucket_of,
            boundaries: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bucket_of(&self, id: u64) -> Option<usize> {
        self.bucket_of.get(&id).copied()
    }

    pub fn assignments(&self) -> &BTreeMap<u64, usize> {
        &self.bucket_of
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Ids in bucket `b`, ascending.
    pub fn members(&self, b: usize) -> BTreeSet<u64> {
        self.bucket_of
            .iter()
            .filter(|(_, &bb)| bb == b)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &b in self.bucket_of.values() {
            sizes[b] += 1;
        }
        sizes
    }
}

/// Splits the ascending-score order into `k` groups whose sizes differ by at
/// most one, with the larger groups at the low-influence end.
pub fn quantile_buckets(ranking: &Ranking, k: usize) -> Result<BucketAssignment> {
    let n = ranking.len();
    if k < 1 || k > n {
        return Err(Error::arg(format!("bucket count {k} must be in [1, {n}]")));
    }
    let base = n / k;
    let rem = n % k;
    let mut bucket_of = BTreeMap::new();
    let mut boundaries = Vec::with_capacity(k);
    // walk from the lowest score upwards
    let mut pos = n;
    for b in 0..k {
        let size = base + usize::from(b < rem);
        let start = pos - size;
        for &id in &ranking.ordered_ids[start..pos] {
            bucket_of.insert(id, b);
        }
        boundaries.push(ranking.scores[pos - 1]);
        pos = start;
    }
    Ok(BucketAssignment {
        k,
        bucket_of,
        boundaries,
    })
}

/// Share of flipped ids that land in the top `pct` percent of scores.
pub fn recall_at_top(scores: &ScoreTable, noise: &NoiseReport, pct: f64) -> Result<f64> {
    if noise.flipped_ids.is_empty() {
        return Err(Error::arg("noise report has no flipped ids"));
    }
    check_pct(pct, true)?;
    let ranking = rank(scores);
    let top: BTreeSet<u64> = ranking
        .top(top_count(ranking.len(), pct))
        .iter()
        .copied()
        .collect();
    let hits = noise.flipped_ids.intersection(&top).count();
    Ok(hits as f64 / noise.flipped_ids.len() as f64)
}

/// Number of `subset_ids` falling in each bucket.
pub fn bucket_histogram(
    assignment: &BucketAssignment,
    subset_ids: &BTreeSet<u64>,
) -> Result<Vec<usize>> {
    let mut counts = vec![0; assignment.k];
    for id in subset_ids {
        let b = assignment
            .bucket_of(*id)
            .ok_or_else(|| Error::arg(format!("id {id} has no bucket")))?;
        counts[b] += 1;
    }
    Ok(counts)
}

/// CSV `id,bucket`.
pub fn write_buckets_csv(assignment: &BucketAssignment, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "id,bucket").map_err(io)?;
    for (id, b) in &assignment.bucket_of {
        writeln!(w, "{id},{b}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads `id,bucket`; `K` is `max bucket + 1` unless given.
pub fn read_buckets_csv(path: &Path, k: Option<usize>) -> Result<BucketAssignment> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut bucket_of = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim() != "id,bucket" {
                return Err(parse_err(1, "expected header `id,bucket`".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected two fields".into()))?;
        let id: u64 = id
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad id: {e}")))?;
        let b: usize = b
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad bucket: {e}")))?;
        if bucket_of.insert(id, b).is_some() {
            return Err(parse_err(i + 1, format!("duplicate id {id}")));
        }
    }
    let k = k.unwrap_or_else(|| bucket_of.values().max().map_or(0, |m| m + 1));
    BucketAssignment::from_map(k, bucket_of)
}
