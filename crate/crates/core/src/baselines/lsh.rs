//! Hyperplane LSH over the rows of `W`: retrieval sets, recall against
//! brute-force inner-product search, and bucket occupancy statistics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{size_err, Result};
use crate::lookup::{code_of, MAX_TAU};
use crate::rng::{gaussian_matrix, seeded};
use crate::Matrix;

/// `L` hyperplane hash tables of `tau` bits each, built over the rows of a
/// weight matrix.
#[derive(Debug, Clone)]
pub struct LshEnsemble {
    tables: usize,
    tau: usize,
    /// `d × (L·tau)`; table `k` uses columns `k·tau..(k+1)·tau`.
    proj: Matrix,
    /// Per table: code → indices of the rows of `W` in that bucket.
    buckets: Vec<BTreeMap<u32, Vec<usize>>>,
    items: usize,
}

impl LshEnsemble {
    /// Gaussian hyperplanes, no pre-rotation.
    pub fn build(w: &Matrix, tables: usize, tau: usize, seed: u64) -> Result<Self> {
        if tables == 0 || tau == 0 || tau > MAX_TAU {
            return Err(size_err!("need tables >= 1 and tau in 1..={MAX_TAU}"));
        }
        let mut rng = seeded(seed);
        let proj = gaussian_matrix(&mut rng, w.cols(), tables * tau, 1.0);
        let mut e = Self {
            tables,
            tau,
            proj,
            buckets: Vec::new(),
            items: 0,
        };
        e.rebuild(w)?;
        Ok(e)
    }

    /// Re-hashes every row of `w` into fresh buckets with the same hyperplanes.
    pub fn rebuild(&mut self, w: &Matrix) -> Result<()> {
        let codes = self.hash_rows(w)?;
        let mut buckets = vec![BTreeMap::new(); self.tables];
        for (i, row) in codes.chunks_exact(self.tables).enumerate() {
            for (k, &c) in row.iter().enumerate() {
                buckets[k].entry(c).or_insert_with(Vec::new).push(i);
            }
        }
        self.buckets = buckets;
        self.items = w.rows();
        Ok(())
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Number of hashed rows.
    pub fn items(&self) -> usize {
        self.items
    }

    /// Codes `f_k(x)` for every row of `x`, `rows × L`.
    pub fn hash_rows(&self, x: &Matrix) -> Result<Vec<u32>> {
        let z = x.matmul(&self.proj)?;
        Ok(z.data().chunks_exact(self.tau).map(code_of).collect())
    }

    pub fn bucket(&self, table: usize, code: u32) -> &[usize] {
        self.buckets[table].get(&code).map_or(&[], |v| v.as_slice())
    }

    /// Union of the buckets `x` lands in over the first `tables` tables,
    /// sorted. `codes` are the query's codes from [`Self::hash_rows`].
    pub fn retrieve(&self, codes: &[u32], tables: usize) -> Vec<usize> {
        let mut out: Vec<usize> = codes
            .iter()
            .take(tables.min(self.tables))
            .enumerate()
            .flat_map(|(k, &c)| self.bucket(k, c).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Bucket occupancy pooled over all tables, including empty buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketStats {
    /// Sizes sorted in descending order; `L·2^tau` entries.
    pub sizes: Vec<usize>,
    /// Largest bucket over the mean bucket size `t / 2^tau`.
    pub max_over_mean: f64,
    pub gini: f64,
}

pub fn bucket_histogram(ensemble: &LshEnsemble) -> BucketStats {
    let per_table = 1usize << ensemble.tau;
    let mut sizes = Vec::with_capacity(ensemble.tables * per_table);
    for b in &ensemble.buckets {
        sizes.extend(b.values().map(Vec::len));
        sizes.extend(core::iter::repeat_n(0, per_table - b.len()));
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let mean = ensemble.items as f64 / per_table as f64;
    let max = sizes.first().copied().unwrap_or(0) as f64;
    BucketStats {
        max_over_mean: if mean > 0.0 { max / mean } else { 0.0 },
        gini: gini(&sizes),
        sizes,
    }
}

/// Gini coefficient of non-negative counts (0 = perfectly even).
pub fn gini(values: &[usize]) -> f64 {
    let n = values.len();
    let total: usize = values.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let weighted: f64 = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x as f64)
        .sum();
    weighted / (n as f64 * total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    /// Total hash functions, `tables · tau`.
    pub hashes: usize,
    pub tables: usize,
    pub top_x: usize,
    /// Mean fraction of the true top-`x` rows retrieved.
    pub recall: f64,
    /// Mean and standard deviation of the retrieval set size.
    pub retrieved_mean: f64,
    pub retrieved_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallSpec<'a> {
    pub tau: usize,
    /// Table counts to evaluate; each budget uses a prefix of the largest
    /// ensemble, so results are nested.
    pub table_counts: &'a [usize],
    pub top_x: &'a [usize],
    pub seed: u64,
}

/// Indices of the `x` largest inner products with `q`, ties by index.
pub fn brute_force_top(w: &Matrix, q: &[f64], x: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = w
        .rows_iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| a * b).sum(), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(x).map(|(_, i)| i).collect()
}

/// Recall of union-of-buckets retrieval against exact MIPS for each table
/// budget and each `top_x`.
pub fn lsh_recall_experiment(w: &Matrix, queries: &Matrix, spec: &RecallSpec) -> Result<Vec<RecallRow>> {
    let max_tables = spec.table_counts.iter().copied().max().unwrap_or(0);
    if w.cols() != queries.cols() {
        return Err(size_err!(
            "queries have {} columns, W has {}",
            queries.cols(),
            w.cols()
        ));
    }
    let ens = LshEnsemble::build(w, max_tables, spec.tau, spec.seed)?;
    let codes = ens.hash_rows(queries)?;
    let max_x = spec.top_x.iter().copied().max().unwrap_or(0);
    let truth: Vec<Vec<usize>> = queries
        .rows_iter()
        .map(|q| brute_force_top(w, q, max_x))
        .collect();

    let nq = queries.rows() as f64;
    let mut rows = Vec::new();
    for &l in spec.table_counts {
        let sets: Vec<Vec<usize>> = codes
            .chunks_exact(max_tables)
            .map(|c| ens.retrieve(c, l))
            .collect();
        let sizes: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
        let mean = sizes.iter().sum::<f64>() / nq;
        let var = sizes.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / nq;
        for &x in spec.top_x {
            let hit: f64 = sets
                .iter()
                .zip(&truth)
                .map(|(s, t)| {
                    let found = t[..x].iter().filter(|i| s.binary_search(i).is_ok()).count();
                    found as f64 / x as f64
                })
                .sum();
            rows.push(RecallRow {
                hashes: l * spec.tau,
                tables: l,
                top_x: x,
                recall: hit / nq,
                retrieved_mean: mean,
                retrieved_std: var.sqrt(),
            });
        }
    }
    Ok(rows)
}
