//! Memory bank construction, persistence, and exact nearest-neighbor search.
//!
//! A bank is a matrix of reference feature rows harvested from labeled-normal
//! training samples, optionally thinned by greedy k-center (farthest-point)
//! selection. Searches are exact brute-force scans: distances accumulate in
//! `f64` over the `f32` rows, strictly in coordinate order, so results are
//! reproducible bit-for-bit regardless of how the scan is batched or
//! threaded. Tied distances resolve to the lowest row index.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::LoadedSample;
use crate::tensor_io::{read_nfmb, write_nfmb, Tensor};

/// Squared Euclidean distance between two rows, accumulated in `f64` in
/// coordinate order. Every distance in this crate funnels through this one
/// definition so alternative scan orders cannot change results.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc
}

/// Index of the nearest row to `query` plus the squared distance. Ties pick
/// the lowest index. Scans four rows per step to keep four independent
/// accumulator chains in flight; each row's sum is still the plain
/// coordinate-order sum, so the result matches a naive scan exactly.
pub fn nearest_one(memory: &Tensor, query: &[f32]) -> (usize, f64) {
    assert!(!memory.is_empty(), "empty memory bank");
    assert_eq!(memory.dim(), query.len(), "dimension mismatch");
    let dim = memory.dim();
    let data = memory.data();
    let mut best = (0usize, f64::INFINITY);
    let mut consider = |idx: usize, d2: f64| {
        if d2 < best.1 {
            best = (idx, d2);
        }
    };

    let mut chunks = data.chunks_exact(4 * dim);
    let mut base = 0usize;
    for quad in &mut chunks {
        let mut acc = [0.0f64; 4];
        for (c, lane) in acc.iter_mut().enumerate() {
            let row = &quad[c * dim..(c + 1) * dim];
            *lane = squared_distance(row, query);
        }
        for (c, &d2) in acc.iter().enumerate() {
            consider(base + c, d2);
        }
        base += 4;
    }
    for (c, row) in chunks.remainder().chunks_exact(dim).enumerate() {
        consider(base + c, squared_distance(row, query));
    }
    best
}

/// Number of rows scanned together by [`BlockedScan`]. Eight keeps enough
/// independent accumulator chains in flight to hide floating-point add
/// latency without spilling registers on baseline x86-64.
const SCAN_LANES: usize = 8;

/// A bank regrouped for fast scanning: rows are taken in blocks of eight and
/// stored coordinate-major within each block, so one coordinate of all eight
/// rows is contiguous and the compiler can vectorize across rows. Each row's
/// distance is still the plain coordinate-order `f64` sum of
/// [`squared_distance`] — no reassociation, no fused multiply-add — so
/// results match [`nearest_one`] bit-for-bit.
///
/// Build one per bank and reuse it across queries; construction costs a full
/// pass over the bank.
pub struct BlockedScan<'a> {
    /// Full blocks, `block * dim * SCAN_LANES + coord * SCAN_LANES + lane`.
    blocks: Vec<f32>,
    /// Leftover rows (fewer than `SCAN_LANES`), row-major.
    tail: &'a [f32],
    tail_start: usize,
    dim: usize,
}

impl<'a> BlockedScan<'a> {
    pub fn new(memory: &'a Tensor) -> Self {
        let dim = memory.dim();
        let rows = memory.rows();
        let full = rows / SCAN_LANES * SCAN_LANES;
        let mut blocks = Vec::with_capacity(full * dim);
        for block_start in (0..full).step_by(SCAN_LANES) {
            for coord in 0..dim {
                for lane in 0..SCAN_LANES {
                    blocks.push(memory.data()[(block_start + lane) * dim + coord]);
                }
            }
        }
        BlockedScan {
            blocks,
            tail: &memory.data()[full * dim..],
            tail_start: full,
            dim,
        }
    }

    /// Semantics of [`nearest_one`]: index of the nearest row plus squared
    /// distance, ties to the lowest index.
    pub fn nearest(&self, query: &[f32]) -> (usize, f64) {
        assert_eq!(self.dim, query.len(), "dimension mismatch");
        assert!(
            !self.blocks.is_empty() || !self.tail.is_empty(),
            "empty memory bank"
        );
        let mut best = (0usize, f64::INFINITY);
        let mut consider = |idx: usize, d2: f64| {
            if d2 < best.1 {
                best = (idx, d2);
            }
        };

        // Widen the query once; f32 -> f64 is exact, so this cannot differ
        // from widening inside the loop.
        let qf: Vec<f64> = query.iter().map(|&v| v as f64).collect();
        for (bi, block) in self.blocks.chunks_exact(self.dim * SCAN_LANES).enumerate() {
            let mut acc = [0.0f64; SCAN_LANES];
            for (&q, col) in qf.iter().zip(block.chunks_exact(SCAN_LANES)) {
                for (a, &v) in acc.iter_mut().zip(col) {
                    let d = v as f64 - q;
                    *a += d * d;
                }
            }
            for (lane, &d2) in acc.iter().enumerate() {
                consider(bi * SCAN_LANES + lane, d2);
            }
        }
        for (i, row) in self.tail.chunks_exact(self.dim).enumerate() {
            consider(self.tail_start + i, squared_distance(row, query));
        }
        best
    }
}

/// Indices and squared distances of the `k` nearest rows to `query`,
/// ascending by distance with ties broken toward lower indices. `k` is
/// clamped to the number of rows.
pub fn nearest(memory: &Tensor, query: &[f32], k: usize) -> Vec<(usize, f64)> {
    assert!(!memory.is_empty(), "empty memory bank");
    assert_eq!(memory.dim(), query.len(), "dimension mismatch");
    let k = k.min(memory.rows());
    // Bounded insertion into a sorted scratch vector; k is small (the scoring
    // neighborhood), so this beats heap bookkeeping.
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    for idx in 0..memory.rows() {
        let d2 = squared_distance(memory.row(idx), query);
        if best.len() == k && d2 >= best[k - 1].1 {
            continue;
        }
        let pos = best.partition_point(|&(_, bd)| bd <= d2);
        best.insert(pos, (idx, d2));
        best.truncate(k);
    }
    best
}

/// Reference rows plus provenance: which sample and which row within that
/// sample each bank row came from.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    pub tensor: Tensor,
    /// `(sample_id, row_within_sample)` per bank row, in bank order.
    pub source_ids: Vec<(String, usize)>,
    pub coreset_ratio: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BankSidecar {
    source_ids: Vec<(String, usize)>,
    coreset_ratio: f64,
    seed: u64,
    dim: u64,
    rows: u64,
}

impl MemoryBank {
    /// Builds a bank from the pooled rows of `samples`. With `coreset_ratio`
    /// of 1.0 the pool is kept verbatim in pool order. Below 1.0, greedy
    /// k-center selection keeps `max(1, round(ratio * pool_rows))` rows: the
    /// first pick is uniform under `seed`, then each step takes the row
    /// farthest from the selected set (ties toward the lower pool index).
    pub fn build(samples: &[LoadedSample], coreset_ratio: f64, seed: u64) -> Result<MemoryBank> {
        if !(coreset_ratio > 0.0 && coreset_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "coreset_ratio must be in (0, 1], got {coreset_ratio}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::invalid(
                "cannot build a memory bank from zero samples",
            ));
        }
        let tensors: Vec<&Tensor> = samples.iter().map(|s| &s.rows).collect();
        let pool = Tensor::vstack(&tensors)?;
        let mut pool_ids = Vec::with_capacity(pool.rows());
        for sample in samples {
            for r in 0..sample.rows.rows() {
                pool_ids.push((sample.id.clone(), r));
            }
        }

        if coreset_ratio >= 1.0 {
            return Ok(MemoryBank {
                tensor: pool,
                source_ids: pool_ids,
                coreset_ratio,
                seed,
            });
        }

        let keep = ((coreset_ratio * pool.rows() as f64).round() as usize).max(1);
        let selected = k_center_indices(&pool, keep, seed);
        let dim = pool.dim();
        let mut data = Vec::with_capacity(keep * dim);
        let mut source_ids = Vec::with_capacity(keep);
        for &idx in &selected {
            data.extend_from_slice(pool.row(idx));
            source_ids.push(pool_ids[idx].clone());
        }
        Ok(MemoryBank {
            tensor: Tensor::new(keep, dim, data)?,
            source_ids,
            coreset_ratio,
            seed,
        })
    }

    /// Writes the rows as `.nfmb` plus a JSON sidecar (same stem, `.json`)
    /// carrying provenance and build parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_nfmb(path, &self.tensor)?;
        let sidecar = BankSidecar {
            source_ids: self.source_ids.clone(),
            coreset_ratio: self.coreset_ratio,
            seed: self.seed,
            dim: self.tensor.dim() as u64,
            rows: self.tensor.rows() as u64,
        };
        let side_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::format(&side_path, e.to_string()))?;
        std::fs::write(&side_path, json + "\n").map_err(|e| Error::io(&side_path, e))
    }

    /// Loads a bank written by [`MemoryBank::save`], cross-checking the
    /// sidecar's shape against the tensor.
    pub fn load(path: &Path) -> Result<MemoryBank> {
        let tensor = read_nfmb(path)?;
        let side_path = sidecar_path(path);
        let raw = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let sidecar: BankSidecar =
            serde_json::from_str(&raw).map_err(|e| Error::format(&side_path, e.to_string()))?;
        if sidecar.rows != tensor.rows() as u64 || sidecar.dim != tensor.dim() as u64 {
            return Err(Error::format(
                &side_path,
                format!(
                    "sidecar says {} rows x {} dim, tensor has {} x {}",
                    sidecar.rows,
                    sidecar.dim,
                    tensor.rows(),
                    tensor.dim()
                ),
            ));
        }
        if sidecar.source_ids.len() != tensor.rows() {
            return Err(Error::format(
                &side_path,
                format!(
                    "sidecar lists {} source rows, tensor has {}",
                    sidecar.source_ids.len(),
                    tensor.rows()
                ),
            ));
        }
        Ok(MemoryBank {
            tensor,
            source_ids: sidecar.source_ids,
            coreset_ratio: sidecar.coreset_ratio,
            seed: sidecar.seed,
        })
    }
}

fn sidecar_path(bank_path: &Path) -> PathBuf {
    bank_path.with_extension("json")
}

/// Greedy k-center (farthest-point) selection over pool rows. Returns the
/// selected indices in pick order. Maintains the classic running
/// min-distance array: one scan per pick, `O(keep * pool_rows)` total.
pub fn k_center_indices(pool: &Tensor, keep: usize, seed: u64) -> Vec<usize> {
    assert!(keep >= 1 && keep <= pool.rows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..pool.rows());
    let mut selected = Vec::with_capacity(keep);
    selected.push(first);
    let mut taken = vec![false; pool.rows()];
    taken[first] = true;

    let mut min_d2: Vec<f64> = (0..pool.rows())
        .map(|i| squared_distance(pool.row(i), pool.row(first)))
        .collect();

    while selected.len() < keep {
        // Farthest still-unselected row; ties toward the lower index. The
        // explicit mask matters when the pool holds duplicate rows: every
        // distance can hit zero, and an index must never be picked twice.
        let mut best: Option<(usize, f64)> = None;
        for (i, &d2) in min_d2.iter().enumerate() {
            if !taken[i] && best.map_or(true, |(_, bd)| d2 > bd) {
                best = Some((i, d2));
            }
        }
        let next = best.expect("keep <= rows leaves a candidate").0;
        selected.push(next);
        taken[next] = true;
        for (i, slot) in min_d2.iter_mut().enumerate() {
            let d2 = squared_distance(pool.row(i), pool.row(next));
            if d2 < *slot {
                *slot = d2;
            }
        }
    }
    selected
}
