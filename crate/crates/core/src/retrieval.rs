//! Exact top-K cosine retrieval over the corpus text embeddings.
//!
//! The scan splits rows into contiguous partitions, keeps a local top-K per
//! partition, and merges under the global order (similarity descending, row
//! ascending). Every row's similarity is computed by the same kernel whatever
//! the partitioning, so results are bitwise independent of it.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};
use crate::store::CorpusIndex;
use crate::vector::{clamp_unit, dot_unchecked};

// Above this k a partition keeps every hit and sorts once instead of
// maintaining an insertion buffer.
const INSERTION_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Number of row-range partitions. `None` uses one per rayon worker.
    pub partitions: Option<usize>,
}

impl ScanOptions {
    pub fn partitions(n: usize) -> Self {
        ScanOptions {
            partitions: Some(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub row: usize,
    pub id: String,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub text_similarity: f64,
}

/// Ranked retrieval result for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    /// Requested size.
    pub k: usize,
    /// Set when fewer than `k` rows were eligible.
    pub truncated: bool,
    pub entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.row)
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    sim: f64,
    row: usize,
}

/// `Less` means `a` ranks ahead of `b`.
#[inline]
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.sim.total_cmp(&a.sim).then(a.row.cmp(&b.row))
}

/// Best-first buffer holding at most `k` hits.
struct TopK {
    k: usize,
    hits: Vec<Hit>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            hits: Vec::with_capacity(k.min(INSERTION_LIMIT) + 1),
        }
    }

    #[inline]
    fn offer(&mut self, hit: Hit) {
        if self.k > INSERTION_LIMIT {
            self.hits.push(hit);
            return;
        }
        if self.hits.len() == self.k {
            match self.hits.last() {
                Some(worst) if rank_order(&hit, worst) == Ordering::Less => {}
                _ => return,
            }
        }
        let at = self
            .hits
            .partition_point(|h| rank_order(h, &hit) == Ordering::Less);
        self.hits.insert(at, hit);
        self.hits.truncate(self.k);
    }

    fn finish(mut self) -> Vec<Hit> {
        if self.k > INSERTION_LIMIT {
            self.hits.sort_unstable_by(rank_order);
            self.hits.truncate(self.k);
        }
        self.hits
    }
}

/// The `k` eligible rows whose text embedding is most cosine-similar to
/// `query`. See [`top_k_with`].
pub fn top_k(
    query: &[f32],
    index: &CorpusIndex,
    k: usize,
    exclude_id: Option<&str>,
) -> Result<SupportSet> {
    top_k_with(query, index, k, exclude_id, &ScanOptions::default())
}

/// Like [`top_k`] with explicit scan partitioning.
///
/// If `exclude_id` names a corpus record, that row is ineligible. When fewer
/// than `k` rows are eligible all of them are returned and the result is
/// flagged `truncated`.
pub fn top_k_with(
    query: &[f32],
    index: &CorpusIndex,
    k: usize,
    exclude_id: Option<&str>,
    opts: &ScanOptions,
) -> Result<SupportSet> {
    let mut sets = top_k_batch(&[query], index, k, exclude_id, opts)?;
    Ok(sets.pop().expect("one query in, one set out"))
}

/// Retrieves for several queries in a single pass over the corpus. Each
/// result equals the corresponding single-query [`top_k_with`] call.
pub fn top_k_batch<Q: AsRef<[f32]> + Sync>(
    queries: &[Q],
    index: &CorpusIndex,
    k: usize,
    exclude_id: Option<&str>,
    opts: &ScanOptions,
) -> Result<Vec<SupportSet>> {
    if k == 0 {
        return Err(CimError::InvalidParams("k must be at least 1".into()));
    }
    let dim = index.text_dim();
    for q in queries {
        let found = q.as_ref().len();
        if found != dim {
            return Err(CimError::DimensionMismatch {
                expected: dim,
                found,
            });
        }
    }
    let excluded = exclude_id.and_then(|id| index.row_of(id));
    let eligible = index.len() - usize::from(excluded.is_some());
    if eligible == 0 {
        return Err(CimError::EmptyCorpus);
    }
    if queries.is_empty() {
        return Ok(Vec::new());
    }

    let n = index.len();
    let parts = opts
        .partitions
        .unwrap_or_else(rayon::current_num_threads)
        .clamp(1, n);
    let texts = index.texts_flat();
    let scan = |p: usize| -> Vec<Vec<Hit>> {
        let (start, end) = (p * n / parts, (p + 1) * n / parts);
        let mut bufs: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
        for row in start..end {
            if Some(row) == excluded {
                continue;
            }
            let text = &texts[row * dim..(row + 1) * dim];
            for (q, buf) in queries.iter().zip(bufs.iter_mut()) {
                let sim = clamp_unit(dot_unchecked(q.as_ref(), text));
                buf.offer(Hit { sim, row });
            }
        }
        bufs.into_iter().map(TopK::finish).collect()
    };
    let partials: Vec<Vec<Vec<Hit>>> = if parts == 1 {
        vec![scan(0)]
    } else {
        (0..parts).into_par_iter().map(scan).collect()
    };

    let sets = (0..queries.len())
        .map(|qi| {
            let mut hits: Vec<Hit> = partials
                .iter()
                .flat_map(|p| p[qi].iter().copied())
                .collect();
            hits.sort_unstable_by(rank_order);
            hits.truncate(k);
            SupportSet {
                k,
                truncated: eligible < k,
                entries: hits
                    .into_iter()
                    .map(|h| SupportEntry {
                        row: h.row,
                        id: index.id(h.row).to_owned(),
                        text_similarity: h.sim,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(sets)
}
