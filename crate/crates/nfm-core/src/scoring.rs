//! Sample-level anomaly scores from a memory bank, and score-stream fusion.
//!
//! A sample is a set of feature rows. Its score comes from the single row
//! least explainable by the bank: for each row take the distance to its
//! nearest bank row, then keep the row maximizing that distance (the
//! "representative"; ties resolve to the lowest row index, then the lowest
//! bank index). The raw representative distance is reweighted by how
//! ambiguous its bank neighborhood is: with `N_b` the `b` bank rows nearest
//! to the matched bank row (the match itself included),
//!
//! ```text
//! score = (1 - 1 / sum_{m in N_b} exp(d_m - d*)) * d*
//! ```
//!
//! where `d*` is the representative distance and `d_m` the distance from the
//! representative row to neighbor `m`. Every `d_m >= d*` (`d*` is a global
//! minimum), so each exponent is nonnegative and the sum is at least 1; the
//! score therefore lands in `[(1 - 1/b) * d*, d*)`. Exponents are clamped at
//! 80 to keep the sum finite; the clamp only ever shrinks terms that already
//! dwarf the rest of the sum.
//!
//! Fusion combines a memory-score table with an external detector's table as
//! `w * memory + (1 - w) * external`, optionally after min-max calibration
//! against validation-split score ranges.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::LoadedSample;
use crate::memory_bank::{nearest, nearest_one, BlockedScan};
use crate::tensor_io::{ScoreTable, Tensor};

/// Cap on `d_m - d*` exponents; exp(80) is ~5.5e34, far beyond any realistic
/// contribution ratio while still comfortably inside f64 range even summed
/// over a large neighborhood.
const EXP_CLAMP: f64 = 80.0;

/// The row a sample is scored by, with its nearest bank row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Representative {
    /// Row index within the sample.
    pub row: usize,
    /// Index of that row's nearest bank row.
    pub bank_index: usize,
    /// Squared distance between the two.
    pub distance_sq: f64,
}

/// Picks the sample row farthest from its nearest bank row. Ties go to the
/// lowest sample row index (and within a row, [`nearest_one`] already
/// resolves equal bank distances to the lowest bank index).
pub fn select_representative(sample: &Tensor, memory: &Tensor) -> Result<Representative> {
    check_compat(sample, memory)?;
    Ok(representative_with(sample, |q| nearest_one(memory, q)))
}

/// Representative search over any nearest-row implementation with
/// [`nearest_one`] semantics.
fn representative_with(
    sample: &Tensor,
    nearest_row: impl Fn(&[f32]) -> (usize, f64),
) -> Representative {
    let mut best: Option<Representative> = None;
    for row in 0..sample.rows() {
        let (bank_index, distance_sq) = nearest_row(sample.row(row));
        let better = match &best {
            None => true,
            Some(b) => distance_sq > b.distance_sq,
        };
        if better {
            best = Some(Representative {
                row,
                bank_index,
                distance_sq,
            });
        }
    }
    best.expect("tensor has at least one row")
}

/// Scores one sample against the bank. `b` is the neighborhood size for the
/// ambiguity reweighting; `b = 1` collapses the score to zero by
/// construction (the neighborhood is just the matched row itself).
pub fn memory_score(sample: &Tensor, memory: &Tensor, b: usize) -> Result<f64> {
    let rep = select_representative(sample, memory)?;
    check_b(b)?;
    let neighborhood = nearest(memory, memory.row(rep.bank_index), b);
    Ok(reweighted_score(
        sample.row(rep.row),
        memory,
        rep.distance_sq,
        neighborhood.iter().map(|&(idx, _)| idx),
    ))
}

/// Applies the neighborhood reweighting given a representative row, its
/// squared bank distance, and the neighborhood's bank indices.
fn reweighted_score(
    rep_row: &[f32],
    memory: &Tensor,
    distance_sq: f64,
    neighborhood: impl Iterator<Item = usize>,
) -> f64 {
    let d_star = distance_sq.sqrt();
    let mut denom = 0.0f64;
    for idx in neighborhood {
        let d_m = crate::memory_bank::squared_distance(memory.row(idx), rep_row).sqrt();
        denom += (d_m - d_star).min(EXP_CLAMP).exp();
    }
    (1.0 - 1.0 / denom) * d_star
}

fn check_compat(sample: &Tensor, memory: &Tensor) -> Result<()> {
    if memory.is_empty() {
        return Err(Error::invalid("memory bank has no rows"));
    }
    if sample.is_empty() {
        return Err(Error::invalid("sample has no rows"));
    }
    if sample.dim() != memory.dim() {
        return Err(Error::invalid(format!(
            "sample dim {} does not match bank dim {}",
            sample.dim(),
            memory.dim()
        )));
    }
    Ok(())
}

fn check_b(b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::invalid("neighborhood size b must be at least 1"));
    }
    Ok(())
}

/// Scores a batch of samples. Equivalent to calling [`memory_score`] per
/// sample, structured as three passes so neighborhoods are computed once per
/// distinct matched bank row instead of once per sample:
///
/// 1. per-sample representative search (the expensive scan, parallel),
/// 2. neighborhood lookup for each distinct matched bank row,
/// 3. per-sample reweighting.
///
/// Per-sample arithmetic is identical in all passes and sample-independent,
/// so parallel and sequential execution produce bit-identical tables.
pub fn score_stream(
    name: &str,
    samples: &[LoadedSample],
    memory: &Tensor,
    b: usize,
    parallel: bool,
) -> Result<ScoreTable> {
    check_b(b)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    for s in samples {
        check_compat(&s.rows, memory)?;
    }

    // One blocked copy of the bank serves every sample; per-row arithmetic is
    // identical to `select_representative`'s, so batch results equal the
    // one-sample path bit-for-bit.
    let scan = BlockedScan::new(memory);
    let rep_of = |s: &LoadedSample| representative_with(&s.rows, |q| scan.nearest(q));
    let reps: Vec<Representative> = if parallel {
        samples.par_iter().map(rep_of).collect()
    } else {
        samples.iter().map(rep_of).collect()
    };

    let mut neighborhoods: HashMap<usize, Vec<usize>> = HashMap::new();
    for rep in &reps {
        neighborhoods.entry(rep.bank_index).or_insert_with(|| {
            nearest(memory, memory.row(rep.bank_index), b)
                .into_iter()
                .map(|(idx, _)| idx)
                .collect()
        });
    }

    let score_one = |(sample, rep): (&LoadedSample, &Representative)| {
        reweighted_score(
            sample.rows.row(rep.row),
            memory,
            rep.distance_sq,
            neighborhoods[&rep.bank_index].iter().copied(),
        )
    };
    let scores: Vec<f64> = if parallel {
        samples.par_iter().zip(reps.par_iter()).map(score_one).collect()
    } else {
        samples.iter().zip(reps.iter()).map(score_one).collect()
    };

    let mut table = ScoreTable::new(name);
    for (sample, score) in samples.iter().zip(scores) {
        table.insert(&sample.id, score)?;
    }
    Ok(table)
}

/// How raw score streams are aligned before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Use raw scores as-is.
    None,
    /// Affinely map each stream so its validation-split scores span [0, 1].
    MinmaxValidation,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    /// Weight on the memory stream; the external stream gets `1 - weight`.
    pub weight: f64,
    pub calibration: Calibration,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            weight: 0.5,
            calibration: Calibration::None,
        }
    }
}

/// A fused score table plus any calibration warnings (degenerate validation
/// ranges). Warnings are advisory; the table is always usable.
#[derive(Debug)]
pub struct Fused {
    pub table: ScoreTable,
    pub warnings: Vec<String>,
}

/// Affine map sending `[lo, hi]` to `[0, 1]`, built from a validation table.
/// A degenerate range (all validation scores equal) maps everything to 0.5.
struct MinmaxMap {
    lo: f64,
    span: f64,
}

impl MinmaxMap {
    fn from_validation(val: &ScoreTable) -> (Self, Option<String>) {
        let lo = val.values().fold(f64::INFINITY, f64::min);
        let hi = val.values().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span > 0.0 {
            (MinmaxMap { lo, span }, None)
        } else {
            (
                MinmaxMap { lo, span: 0.0 },
                Some(format!(
                    "validation scores for stream {:?} are all {}; calibrated scores collapse to 0.5",
                    val.name(),
                    lo
                )),
            )
        }
    }

    fn apply(&self, v: f64) -> f64 {
        if self.span == 0.0 {
            0.5
        } else {
            (v - self.lo) / self.span
        }
    }
}

/// Combines a memory stream and an external stream over the same id set.
/// With [`Calibration::MinmaxValidation`], validation tables for both
/// streams are required and supply the per-stream score ranges.
pub fn fuse(
    memory: &ScoreTable,
    external: &ScoreTable,
    validation: Option<(&ScoreTable, &ScoreTable)>,
    config: &FusionConfig,
) -> Result<Fused> {
    if !(config.weight.is_finite() && (0.0..=1.0).contains(&config.weight)) {
        return Err(Error::invalid(format!(
            "fusion weight must be in [0, 1], got {}",
            config.weight
        )));
    }
    check_same_ids(memory, external)?;

    let mut warnings = Vec::new();
    let (map_mem, map_ext) = match config.calibration {
        Calibration::None => (None, None),
        Calibration::MinmaxValidation => {
            let (val_mem, val_ext) = validation.ok_or_else(|| {
                Error::invalid("minmax_validation calibration requires validation score tables")
            })?;
            if val_mem.is_empty() || val_ext.is_empty() {
                return Err(Error::invalid("validation score tables must be non-empty"));
            }
            let (m, w1) = MinmaxMap::from_validation(val_mem);
            let (e, w2) = MinmaxMap::from_validation(val_ext);
            warnings.extend(w1);
            warnings.extend(w2);
            (Some(m), Some(e))
        }
    };

    let mut table = ScoreTable::new("fused");
    for (id, mem_score) in memory.iter() {
        let ext_score = external.get(id).expect("id sets checked equal");
        let m = map_mem.as_ref().map_or(mem_score, |c| c.apply(mem_score));
        let e = map_ext.as_ref().map_or(ext_score, |c| c.apply(ext_score));
        table.insert(id, config.weight * m + (1.0 - config.weight) * e)?;
    }
    Ok(Fused { table, warnings })
}

/// Errors with the first few offending ids when two tables cover different
/// samples.
fn check_same_ids(a: &ScoreTable, b: &ScoreTable) -> Result<()> {
    let only_a: Vec<&str> = a.ids().filter(|id| b.get(id).is_none()).collect();
    let only_b: Vec<&str> = b.ids().filter(|id| a.get(id).is_none()).collect();
    if only_a.is_empty() && only_b.is_empty() {
        return Ok(());
    }
    let mut offenders: Vec<String> = only_a
        .iter()
        .map(|id| format!("{id} (missing from {})", b.name()))
        .chain(only_b.iter().map(|id| format!("{id} (missing from {})", a.name())))
        .collect();
    offenders.sort();
    offenders.truncate(10);
    Err(Error::invalid(format!(
        "score tables cover different samples: {}",
        offenders.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::LoadedSample;

    fn t(rows: usize, dim: usize, vals: Vec<f32>) -> Tensor {
        Tensor::new(rows, dim, vals).unwrap()
    }

    #[test]
    fn representative_is_worst_explained_row() {
        let memory = t(2, 1, vec![0.0, 10.0]);
        // Row distances to nearest bank row: 1.0, 2.0, 0.5 -> row 1 wins.
        let sample = t(3, 1, vec![1.0, 8.0, 0.5]);
        let rep = select_representative(&sample, &memory).unwrap();
        assert_eq!(rep.row, 1);
        assert_eq!(rep.bank_index, 1);
        assert_eq!(rep.distance_sq, 4.0);
    }

    #[test]
    fn representative_tie_takes_lowest_row() {
        let memory = t(1, 1, vec![0.0]);
        let sample = t(3, 1, vec![-2.0, 2.0, 1.0]);
        let rep = select_representative(&sample, &memory).unwrap();
        assert_eq!(rep.row, 0);
    }

    #[test]
    fn score_is_zero_when_representative_sits_on_bank_row() {
        let memory = t(3, 1, vec![0.0, 1.0, 2.0]);
        let sample = t(1, 1, vec![1.0]);
        assert_eq!(memory_score(&sample, &memory, 3).unwrap(), 0.0);
    }

    #[test]
    fn score_with_b1_is_identically_zero() {
        let memory = t(3, 1, vec![0.0, 1.0, 5.0]);
        let sample = t(2, 1, vec![3.0, -4.0]);
        assert_eq!(memory_score(&sample, &memory, 1).unwrap(), 0.0);
    }

    #[test]
    fn score_stays_within_reweighting_bounds() {
        let mut rng_vals = [0.37f32, -1.2, 0.8, 2.4, -0.6, 1.9, -2.2, 0.1];
        let memory = t(4, 2, rng_vals.to_vec());
        rng_vals.reverse();
        let sample = t(4, 2, rng_vals.to_vec());
        for b in [2, 3, 4] {
            let rep = select_representative(&sample, &memory).unwrap();
            let d_star = rep.distance_sq.sqrt();
            let g = memory_score(&sample, &memory, b).unwrap();
            let lower = (1.0 - 1.0 / b as f64) * d_star;
            assert!(g >= lower - 1e-12, "b={b}: {g} < {lower}");
            assert!(g < d_star, "b={b}: {g} >= {d_star}");
        }
    }

    #[test]
    fn batch_scoring_matches_per_sample_calls_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let dim = 5;
        let memory = t(
            60,
            dim,
            (0..60 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let samples: Vec<LoadedSample> = (0..25)
            .map(|i| LoadedSample {
                id: format!("s{i:02}"),
                rows: t(
                    3,
                    dim,
                    (0..3 * dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                ),
            })
            .collect();
        let par = score_stream("m", &samples, &memory, 3, true).unwrap();
        let seq = score_stream("m", &samples, &memory, 3, false).unwrap();
        assert_eq!(par, seq);
        for s in &samples {
            let lone = memory_score(&s.rows, &memory, 3).unwrap();
            assert_eq!(par.get(&s.id), Some(lone), "sample {}", s.id);
        }
    }

    #[test]
    fn fuse_equal_weight_is_plain_average() {
        let mut m = ScoreTable::new("m");
        let mut e = ScoreTable::new("e");
        for (i, (a, b)) in [(0.1, 0.9), (2.5, -1.0), (1e-8, 3e4)].iter().enumerate() {
            m.insert(format!("s{i}"), *a).unwrap();
            e.insert(format!("s{i}"), *b).unwrap();
        }
        let fused = fuse(&m, &e, None, &FusionConfig::default()).unwrap();
        for (id, got) in fused.table.iter() {
            let want = (m.get(id).unwrap() + e.get(id).unwrap()) / 2.0;
            assert_eq!(got, want, "id {id}");
        }
        assert!(fused.warnings.is_empty());
    }

    #[test]
    fn fuse_rejects_mismatched_ids_listing_offenders() {
        let mut m = ScoreTable::new("m");
        let mut e = ScoreTable::new("e");
        m.insert("a", 1.0).unwrap();
        m.insert("b", 1.0).unwrap();
        e.insert("a", 1.0).unwrap();
        e.insert("c", 1.0).unwrap();
        let err = fuse(&m, &e, None, &FusionConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('b') && msg.contains('c'), "{msg}");
    }

    #[test]
    fn minmax_calibration_maps_validation_range_to_unit() {
        let mut vm = ScoreTable::new("vm");
        let mut ve = ScoreTable::new("ve");
        for (i, v) in [2.0, 4.0, 6.0].iter().enumerate() {
            vm.insert(format!("v{i}"), *v).unwrap();
            ve.insert(format!("v{i}"), *v * 10.0).unwrap();
        }
        let mut m = ScoreTable::new("m");
        let mut e = ScoreTable::new("e");
        m.insert("t", 4.0).unwrap(); // calibrates to 0.5
        e.insert("t", 80.0).unwrap(); // calibrates to 1.5 (beyond validation range)
        let cfg = FusionConfig {
            weight: 0.25,
            calibration: Calibration::MinmaxValidation,
        };
        let fused = fuse(&m, &e, Some((&vm, &ve)), &cfg).unwrap();
        assert_eq!(fused.table.get("t"), Some(0.25 * 0.5 + 0.75 * 1.5));
    }

    #[test]
    fn degenerate_validation_range_warns_and_centers() {
        let mut vm = ScoreTable::new("vm");
        let mut ve = ScoreTable::new("ve");
        for i in 0..3 {
            vm.insert(format!("v{i}"), 7.0).unwrap(); // zero span
            ve.insert(format!("v{i}"), i as f64).unwrap();
        }
        let mut m = ScoreTable::new("m");
        let mut e = ScoreTable::new("e");
        m.insert("t", 3.0).unwrap();
        e.insert("t", 1.0).unwrap();
        let cfg = FusionConfig {
            weight: 0.5,
            calibration: Calibration::MinmaxValidation,
        };
        let fused = fuse(&m, &e, Some((&vm, &ve)), &cfg).unwrap();
        assert_eq!(fused.warnings.len(), 1);
        assert_eq!(fused.table.get("t"), Some(0.5 * 0.5 + 0.5 * 0.5));
    }

    #[test]
    fn fuse_requires_validation_tables_for_minmax() {
        let mut m = ScoreTable::new("m");
        let mut e = ScoreTable::new("e");
        m.insert("t", 1.0).unwrap();
        e.insert("t", 2.0).unwrap();
        let cfg = FusionConfig {
            weight: 0.5,
            calibration: Calibration::MinmaxValidation,
        };
        assert!(fuse(&m, &e, None, &cfg).is_err());
    }
}
